use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

const MAX_ITER: usize = 300;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            centroids.push(points[rng.below(points.len())].clone());
            continue;
        }
        let mut u = rng.uniform() * total;
        let mut pick = points.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (c, _) = nearest(p, &centroids);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (s, n)) in sums.into_iter().zip(counts).enumerate() {
            if n > 0 {
                centroids[c] = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centroids[l])).sum();
    Clustering {
        labels,
        centroids,
        inertia,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the restart with the lowest
/// inertia wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!("k = {k} with {} points", points.len())));
    }
    let mut rng = Rng::new(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fraction of point pairs on which two labelings agree about being
/// together or apart.
pub fn rand_index<A: PartialEq, B: PartialEq>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rand_index_small_cases() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &["a", "a", "b", "b"]).unwrap(), 1.0);
        assert_eq!(rand_index(&[0, 1, 0, 1], &[5, 5, 7, 7]).unwrap(), 2.0 / 6.0);
        assert!(rand_index(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn separated_groups_are_found() {
        let mut rng = Rng::new(5);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..3 {
            for _ in 0..20 {
                pts.push(vec![10.0 * c as f64 + rng.normal(), rng.normal()]);
                truth.push(c);
            }
        }
        let cl = kmeans(&pts, 3, 5, 1).unwrap();
        assert_eq!(rand_index(&cl.labels, &truth).unwrap(), 1.0);
        assert!(kmeans(&pts, 0, 1, 1).is_err());
    }
}
