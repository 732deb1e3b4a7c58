/// Protein-centric maximum F1 over thresholds 0.01, 0.02, ..., 1.00.
///
/// Precision averages over proteins with at least one score at or above the
/// threshold, recall over proteins with at least one true label. Thresholds
/// at which nothing is predicted are skipped; if that is every threshold the
/// result is 0.
pub fn f_max(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> f64 {
    let mut best = 0.0f64;
    for k in 1..=100 {
        let t = k as f64 / 100.0;
        if let Some(f) = f1_at(scores, truth, t) {
            best = best.max(f);
        }
    }
    best
}

fn f1_at(scores: &[Vec<f64>], truth: &[Vec<bool>], t: f64) -> Option<f64> {
    let (mut prec_sum, mut n_pred) = (0.0, 0usize);
    let (mut rec_sum, mut n_true) = (0.0, 0usize);
    for (s, y) in scores.iter().zip(truth) {
        let predicted = s.iter().filter(|&&v| v >= t).count();
        let positives = y.iter().filter(|&&b| b).count();
        let hits = s.iter().zip(y).filter(|(&v, &b)| b && v >= t).count();
        if predicted > 0 {
            prec_sum += hits as f64 / predicted as f64;
            n_pred += 1;
        }
        if positives > 0 {
            rec_sum += hits as f64 / positives as f64;
            n_true += 1;
        }
    }
    if n_pred == 0 || n_true == 0 {
        return None;
    }
    let p = prec_sum / n_pred as f64;
    let r = rec_sum / n_true as f64;
    Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}
