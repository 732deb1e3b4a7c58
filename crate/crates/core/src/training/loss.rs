/// Mean binary cross-entropy over labels, from logits. Returns the loss and
/// its gradient with respect to the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        // max(z, 0) - z y + ln(1 + e^{-|z|})
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}

/// Cross-entropy of a softmax over `logits` against `class`.
pub fn softmax_ce(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[class] -= 1.0;
    (lse - logits[class], grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((bce_with_logits(&[0.0], &[1.0]).0 - 2f64.ln()).abs() < 1e-15);
        for k in [2, 3, 7] {
            assert!((softmax_ce(&vec![0.4; k], 1).0 - (k as f64).ln()).abs() < 1e-14);
        }
        // no overflow at extreme logits
        assert!((bce_with_logits(&[800.0], &[1.0]).0).abs() < 1e-300);
        assert!((softmax_ce(&[1000.0, -1000.0], 0).0).abs() < 1e-300);
    }

    fn check_fd(f: impl Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) {
        let (_, g) = f(x);
        let eps = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (f(&xp).0 - f(&xm).0) / (2.0 * eps);
            let scale = g[i].abs().max(1e-3);
            assert!((fd - g[i]).abs() / scale <= 1e-6, "i={i} fd={fd} g={}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = [0.3, -1.7, 2.2, 0.05];
        check_fd(|x| bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0]), &z);
        check_fd(|x| softmax_ce(x, 2), &z);
        check_fd(|x| softmax_ce(x, 1), &z);
    }
}
