//! Dense row-major `f64` arrays and the handful of kernels the encoder,
//! attribution and statistics code are built from.
//!
//! Every reduction accumulates leftmost-first, sequentially, so results are
//! reproducible bit-for-bit for a given input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Row-major array of `f64` with an arbitrary shape. A shape of `[]` is a
/// scalar holding exactly one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![rows.len(), cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Tensor, k: f64) -> Result<()> {
        self.same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("softmax_rows input".into()));
        }
        let mut out = self.clone();
        let c = self.cols();
        for row in out.data.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        Ok(out)
    }

    /// Reduces along `axis`, dropping it from the shape.
    pub fn reduce(&self, axis: usize, kind: ReduceKind) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Axis {
                axis,
                rank: self.rank(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| self.data[(o * extent + a) * inner + i];
                out[o * inner + i] = match kind {
                    ReduceKind::Sum => (0..extent).map(at).sum(),
                    ReduceKind::Mean => (0..extent).map(at).sum::<f64>() / extent as f64,
                    ReduceKind::Max => (0..extent).map(at).fold(f64::NEG_INFINITY, f64::max),
                };
            }
        }
        Tensor::new(shape, out)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `out += a · b` with `a: m×k`, `b: k×n`, `out: m×n`.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`, `out: m×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`, `out: m×n`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Adds `bias` to every row of the `rows × bias.len()` buffer.
pub(crate) fn add_row_bias(buf: &mut [f64], bias: &[f64]) {
    for row in buf.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates column sums of a `rows × out.len()` buffer into `out`.
pub(crate) fn add_col_sums(buf: &[f64], out: &mut [f64]) {
    for row in buf.chunks(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_matmul() {
        let mut rng = Rng::new(1);
        let a = random(&mut rng, &[3, 4]);
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = random(&mut rng, &[7, 5]);
        let b = random(&mut rng, &[5, 3]);
        let diff = a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)).unwrap();
        assert!(diff <= 1e-12, "{diff}");
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = Rng::new(3);
        let a = random(&mut rng, &[4, 6]);
        let b = random(&mut rng, &[4, 5]);
        let mut out = vec![0.0; 30];
        gemm_tn(a.data(), b.data(), &mut out, 4, 6, 5);
        let expect = a.transpose().unwrap().matmul(&b).unwrap();
        assert!(Tensor::new(vec![6, 5], out).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);

        let c = random(&mut rng, &[5, 6]);
        let mut out = vec![0.0; 20];
        gemm_nt(a.data(), c.data(), &mut out, 4, 6, 5);
        let expect = a.matmul(&c.transpose().unwrap()).unwrap();
        assert!(Tensor::new(vec![4, 5], out).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_associative() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let a = random(&mut rng, &[4, 5]);
            let b = random(&mut rng, &[5, 3]);
            let c = random(&mut rng, &[3, 6]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(left.max_abs_diff(&right).unwrap() <= 1e-9 * scale);
        }
    }

    #[test]
    fn softmax_cases() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap();
        let s = t.softmax_rows().unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.at(1, 0) - 1.0).abs() <= 1e-12 && s.at(1, 1).abs() <= 1e-12);

        let s = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap().softmax_rows().unwrap();
        // exp(k - 3) / (1 + e^-1 + e^-2), evaluated by hand to 20 digits
        let expect = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        for (a, b) in s.row(0).iter().zip(expect) {
            assert!((a - b).abs() <= 1e-15);
        }
        let total: f64 = s.row(0).iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);

        let bad = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(bad.softmax_rows().is_err());
    }

    #[test]
    fn reduce_cases() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.reduce(0, ReduceKind::Sum).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t.reduce(1, ReduceKind::Max).unwrap().data(), &[2.0, 4.0]);
        assert!(matches!(t.reduce(2, ReduceKind::Sum), Err(Error::Axis { axis: 2, rank: 2 })));

        let mut rng = Rng::new(5);
        let r = random(&mut rng, &[3, 8, 4]);
        let sum = r.reduce(1, ReduceKind::Sum).unwrap();
        let mean = r.reduce(1, ReduceKind::Mean).unwrap();
        assert_eq!(sum.shape(), &[3, 4]);
        for (s, m) in sum.data().iter().zip(mean.data()) {
            assert_eq!(s / 8.0, *m);
        }
    }

    fn kahan(values: &[f64]) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &v in values {
            let y = v - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }

    #[test]
    fn full_reduction_matches_compensated_sum() {
        let mut rng = Rng::new(9);
        for _ in 0..10 {
            let t = random(&mut rng, &[6, 5, 7]);
            let mut r = t.clone();
            while r.rank() > 0 {
                r = r.reduce(0, ReduceKind::Sum).unwrap();
            }
            let oracle = kahan(t.data());
            let scale = t.data().iter().map(|v| v.abs()).sum::<f64>();
            assert!((r.data()[0] - oracle).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::scalar(2.0).len(), 1);
    }
}
