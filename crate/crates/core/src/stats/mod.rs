//! Point-biserial correlation, one-sample t-test, Wilcoxon signed-rank test,
//! Benjamini-Hochberg adjustment and the thresholded `-log10` display.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use special::{normal_cdf, normal_sf, student_t_sf};

/// Exact Wilcoxon enumeration is used up to this many nonzero, tie-free values.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub alternative: Alternative,
}

fn tails(upper: f64, lower: f64, alternative: Alternative) -> f64 {
    let p = match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => 2.0 * upper.min(lower),
    };
    p.clamp(0.0, 1.0)
}

/// Pearson correlation between `values` and a 0/1 `mask`.
///
/// Returns `Ok(None)` when the correlation is undefined (constant mask or
/// constant values); callers drop such samples.
pub fn point_biserial(values: &[f64], mask: &[bool]) -> Result<Option<f64>> {
    if values.len() != mask.len() {
        return Err(Error::Dimension {
            op: "point_biserial",
            left: vec![values.len()],
            right: vec![mask.len()],
        });
    }
    if values.len() < 2 {
        return Ok(None);
    }
    let n = values.len() as f64;
    let mean_v = values.iter().sum::<f64>() / n;
    let ones = mask.iter().filter(|&&m| m).count() as f64;
    let mean_m = ones / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&v, &m) in values.iter().zip(mask) {
        let dx = v - mean_v;
        let dy = f64::from(u8::from(m)) - mean_m;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// One-sample Student t-test of `mean(values) = mu0`.
pub fn t_test_one_sample(values: &[f64], mu0: f64, alternative: Alternative) -> Result<TestResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Stats(format!("t-test needs at least 2 values, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Err(Error::Stats("t-test on zero-variance sample".into()));
    }
    let t = (mean - mu0) / (var / nf).sqrt();
    let df = nf - 1.0;
    let upper = student_t_sf(t, df);
    let lower = student_t_sf(-t, df);
    Ok(TestResult {
        statistic: t,
        p_value: tails(upper, lower, alternative),
        n,
        alternative,
    })
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign patterns of ranks `1..=n` giving each rank sum.
fn signed_rank_counts(n: usize) -> Vec<u64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for r in 1..=n {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

/// Exact `(P(W⁺ ≥ w), P(W⁺ ≤ w))` for `n` tie-free ranks.
pub fn wilcoxon_exact_tails(w_plus: f64, n: usize) -> (f64, f64) {
    let counts = signed_rank_counts(n);
    let total = 2f64.powi(n as i32);
    let w = w_plus.round() as usize;
    let upper: u64 = counts[w.min(counts.len())..].iter().sum();
    let lower: u64 = counts[..=w.min(counts.len() - 1)].iter().sum();
    (upper as f64 / total, lower as f64 / total)
}

/// Normal approximation `(upper, lower)` with tie and continuity correction.
/// `tie_sizes` lists the size of every group of equal absolute values.
pub fn wilcoxon_normal_tails(w_plus: f64, n: usize, tie_sizes: &[usize]) -> (f64, f64) {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
    let upper = normal_sf((w_plus - mean - 0.5) / sd);
    let lower = normal_cdf((w_plus - mean + 0.5) / sd);
    (upper.min(1.0), lower.min(1.0))
}

/// Wilcoxon signed-rank test against a zero median. Exact zeros are dropped.
///
/// `statistic` is W⁺, the rank sum of the positive values. The p-value is
/// exact for at most [`WILCOXON_EXACT_MAX_N`] tie-free values, otherwise
/// normal-approximated.
pub fn wilcoxon_signed_rank(values: &[f64], alternative: Alternative) -> Result<TestResult> {
    let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Stats("Wilcoxon test: all values are zero".into()));
    }
    if nonzero.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon input".into()));
    }
    let abs: Vec<f64> = nonzero.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = nonzero.len();

    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        if j > i {
            tie_sizes.push(j - i + 1);
        }
        i = j + 1;
    }

    let (upper, lower) = if n <= WILCOXON_EXACT_MAX_N && tie_sizes.is_empty() {
        wilcoxon_exact_tails(w_plus, n)
    } else {
        wilcoxon_normal_tails(w_plus, n, &tie_sizes)
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value: tails(upper, lower, alternative),
        n,
        alternative,
    })
}

/// Benjamini-Hochberg adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Stats(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let q = p_values[idx] * m as f64 / (rank + 1) as f64;
        running = running.min(q);
        adjusted[idx] = running.min(1.0).max(p_values[idx]);
    }
    Ok(adjusted)
}

/// Significance mask (`p_adj < alpha`, strict) and `-log10(p_adj)` display
/// values for significant entries; `None` renders blank.
pub fn neglog10_threshold(p_adjusted: &[f64], alpha: f64) -> (Vec<Option<f64>>, Vec<bool>) {
    let mask: Vec<bool> = p_adjusted.iter().map(|&p| p < alpha).collect();
    let display = p_adjusted
        .iter()
        .zip(&mask)
        .map(|(&p, &m)| m.then(|| -p.log10()))
        .collect();
    (display, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn point_biserial_cases() {
        let r = point_biserial(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap().unwrap();
        assert!((r - 2.0 / 5f64.sqrt()).abs() <= 1e-12);
        let r = point_biserial(&[1.0, 2.0, 1.0, 2.0], &[false, true, true, false]).unwrap().unwrap();
        assert!(r.abs() <= 1e-15);
        assert_eq!(point_biserial(&[1.0, 2.0, 3.0, 4.0], &[false; 4]).unwrap(), None);
        assert_eq!(point_biserial(&[1.0; 4], &[true, false, true, false]).unwrap(), None);
        assert!(point_biserial(&[1.0], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn point_biserial_properties(
            values in prop::collection::vec(-10.0f64..10.0, 3..40),
            seed in 0u64..10_000,
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = Rng::new(seed);
            let mut mask: Vec<bool> = values.iter().map(|_| rng.bernoulli(0.4)).collect();
            mask[0] = true;
            mask[1] = false;
            let Some(r) = point_biserial(&values, &mask).unwrap() else { return Ok(()); };
            let as_f: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            prop_assert!((r - pearson(&values, &as_f)).abs() <= 1e-12);
            let affine: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
            let ra = point_biserial(&affine, &mask).unwrap().unwrap();
            prop_assert!((r - ra).abs() <= 1e-9);
            let flipped: Vec<bool> = mask.iter().map(|m| !m).collect();
            let rf = point_biserial(&values, &flipped).unwrap().unwrap();
            prop_assert!((r + rf).abs() <= 1e-12);
        }
    }

    #[test]
    fn t_test_cases() {
        let r = t_test_one_sample(&[-1.0, 1.0, -2.0, 2.0], 0.0, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.5).abs() <= 1e-15);

        let data = [0.5, 0.6, 0.4, 0.5, 0.5];
        let r = t_test_one_sample(&data, 0.0, Alternative::Greater).unwrap();
        // mean 0.5, sd sqrt(0.005), se 0.0316228 ⇒ t = 5·sqrt(10)
        assert!((r.statistic - 5.0 * 10f64.sqrt()).abs() <= 1e-12);
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let reference = StudentsT::new(0.0, 1.0, 4.0).unwrap().sf(r.statistic);
        assert!((r.p_value - reference).abs() <= 1e-10);
        let less = t_test_one_sample(&data, 0.0, Alternative::Less).unwrap();
        assert!((r.p_value + less.p_value - 1.0).abs() <= 1e-12);

        assert!(t_test_one_sample(&[0.5; 10], 0.0, Alternative::Greater).is_err());
        assert!(t_test_one_sample(&[0.5], 0.0, Alternative::Greater).is_err());
    }

    // Brute-force enumeration over all 2^n sign patterns.
    fn brute_wilcoxon_upper(w: f64, n: usize) -> f64 {
        let mut hits = 0u64;
        for pattern in 0u64..(1 << n) {
            let s: usize = (0..n).filter(|i| pattern >> i & 1 == 1).map(|i| i + 1).sum();
            if s as f64 >= w {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_cases() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, -4.0], Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 6.0);
        assert_eq!(r.p_value, 7.0 / 16.0);
        assert_eq!(brute_wilcoxon_upper(6.0, 4), 7.0 / 16.0);

        let r = wilcoxon_signed_rank(&[0.3, 1.2, 2.2, 0.7, 5.0], Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert_eq!(r.p_value, 1.0 / 32.0);

        let r = wilcoxon_signed_rank(&[0.0, 2.0], Alternative::Greater).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.p_value, 0.5);
        assert!(wilcoxon_signed_rank(&[0.0, 0.0], Alternative::Greater).is_err());
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration() {
        let mut rng = Rng::new(8);
        for n in 1..=12 {
            for _ in 0..5 {
                let w = rng.range_inclusive(0, n * (n + 1) / 2) as f64;
                assert_eq!(wilcoxon_exact_tails(w, n).0, brute_wilcoxon_upper(w, n));
            }
        }
    }

    #[test]
    fn wilcoxon_sign_flip_identity() {
        let mut rng = Rng::new(81);
        for _ in 0..20 {
            let v: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let a = wilcoxon_signed_rank(&v, Alternative::Greater).unwrap().statistic;
            let b = wilcoxon_signed_rank(&neg, Alternative::Greater).unwrap().statistic;
            assert_eq!(a + b, 78.0);
        }
    }

    #[test]
    fn wilcoxon_exact_close_to_normal_at_n20() {
        let mut rng = Rng::new(2024);
        for _ in 0..50 {
            let v: Vec<f64> = (0..20).map(|_| rng.normal() + 0.3).collect();
            let r = wilcoxon_signed_rank(&v, Alternative::Greater).unwrap();
            let (approx, _) = wilcoxon_normal_tails(r.statistic, 20, &[]);
            assert!((r.p_value - approx).abs() <= 0.01, "{} vs {approx}", r.p_value);
        }
    }

    #[test]
    fn wilcoxon_ties_use_normal_approximation() {
        let v = [1.0, 1.0, 2.0, -2.0, 3.0];
        let r = wilcoxon_signed_rank(&v, Alternative::Greater).unwrap();
        // ranks 1.5 1.5 3.5 3.5 5 ⇒ W⁺ = 1.5 + 1.5 + 3.5 + 5
        assert_eq!(r.statistic, 11.5);
        let (upper, _) = wilcoxon_normal_tails(11.5, 5, &[2, 2]);
        assert_eq!(r.p_value, upper);
    }

    #[test]
    fn bh_cases() {
        let adj = bh_adjust(&[0.01, 0.04, 0.03, 0.005]).unwrap();
        assert_eq!(adj, vec![0.02, 0.04, 0.04, 0.02]);
        assert_eq!(bh_adjust(&[0.3]).unwrap(), vec![0.3]);
        assert_eq!(bh_adjust(&[0.2; 5]).unwrap(), vec![0.2; 5]);
        assert!(bh_adjust(&[0.2, 1.5]).is_err());
        assert!(bh_adjust(&[-0.1]).is_err());
    }

    // Classical step-up: reject the k smallest where k = max{i : p_(i) ≤ iα/m}.
    fn step_up_rejections(p: &[f64], alpha: f64) -> Vec<bool> {
        let m = p.len();
        let mut sorted: Vec<f64> = p.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = (1..=m).rev().find(|&i| sorted[i - 1] <= i as f64 * alpha / m as f64);
        match k {
            None => vec![false; m],
            Some(k) => p.iter().map(|&x| x <= sorted[k - 1]).collect(),
        }
    }

    proptest! {
        #[test]
        fn bh_properties(p in prop::collection::vec(0.0f64..=1.0, 1..60), alpha in 0.001f64..0.2) {
            let adj = bh_adjust(&p).unwrap();
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(a >= r);
                prop_assert!(*a <= 1.0);
            }
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in idx.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            // p_adj ≤ α reproduces the step-up rejection set
            let by_adj: Vec<bool> = adj.iter().map(|&a| a <= alpha).collect();
            prop_assert_eq!(by_adj, step_up_rejections(&p, alpha));
        }
    }

    #[test]
    fn threshold_cases() {
        let (display, mask) = neglog10_threshold(&[0.01, 0.05, 1.0], 0.05);
        assert_eq!(mask, vec![true, false, false]);
        assert!((display[0].unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(display[1], None);
        assert_eq!(display[2], None);
    }

    fn ks_uniform(mut p: Vec<f64>) -> f64 {
        p.sort_by(f64::total_cmp);
        let n = p.len() as f64;
        p.iter()
            .enumerate()
            .map(|(i, &x)| f64::max((i + 1) as f64 / n - x, x - i as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn t_test_uniform_under_null() {
        let rng = Rng::new(1);
        let p: Vec<f64> = (0..1000)
            .map(|i| {
                let mut r = rng.child(i);
                let v: Vec<f64> = (0..30).map(|_| r.normal()).collect();
                t_test_one_sample(&v, 0.0, Alternative::Greater).unwrap().p_value
            })
            .collect();
        let d = ks_uniform(p);
        assert!(d <= 0.06, "KS distance {d}");
    }
}
