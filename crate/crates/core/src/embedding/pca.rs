use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Principal components of a row-per-sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `N × k` projections of the centered data.
    pub scores: Vec<Vec<f64>>,
    /// Every covariance eigenvalue, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// `k` unit loading vectors.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// PCA via the eigendecomposition of the sample covariance (`N − 1`
/// denominator). Each component is oriented so that its largest-magnitude
/// coordinate is positive.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Input(format!("PCA needs at least 2 samples, got {n}")));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Input("PCA rows have different lengths".into()));
    }
    let bound = (n - 1).min(p);
    if k == 0 || k > bound {
        return Err(Error::Config(format!(
            "cannot keep {k} principal components: at most min(N - 1, dims) = {bound}"
        )));
    }
    let mut mean = vec![0.0; p];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut lead = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[lead].abs() {
                    lead = j;
                }
            }
            if v[lead] < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
            v
        })
        .collect();
    let scores = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| centered.row(i).iter().zip(c).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        scores,
        eigenvalues,
        components,
        mean,
    })
}
