use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::pca::pca;

/// Starting layout. `Pca` places rows by their first two principal
/// components, so identical rows start and stay together; `Random` draws
/// from `N(0, 1e-4)` using the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsneInit {
    Pca,
    Random,
}

impl std::str::FromStr for TsneInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(TsneInit::Pca),
            "random" => Ok(TsneInit::Random),
            other => Err(Error::Config(format!("unknown t-SNE init {other:?} (expected pca or random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the lower momentum.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init: TsneInit,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            learning_rate: 200.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init: TsneInit::Pca,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Step size `max(N / exaggeration / 4, 50)`, which keeps the
    /// exaggerated phase stable for small `N` where 200 overshoots.
    pub fn auto_learning_rate(n: usize, early_exaggeration: f64) -> f64 {
        (n as f64 / early_exaggeration / 4.0).max(50.0)
    }

    /// Smallest sample count the perplexity allows: `N − 1 > 3·perplexity`.
    pub fn min_samples(&self) -> usize {
        (3.0 * self.perplexity).floor() as usize + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N × 2`, centered.
    pub points: Vec<[f64; 2]>,
    /// KL(P‖Q) after every iteration, against the unexaggerated P.
    pub kl: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional affinities `p_{j|i}` with each row's Gaussian precision
/// bisected until the row entropy matches `ln(perplexity)`.
fn conditional_affinities(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut probs = vec![0.0; n];
        for _ in 0..MAX_BISECTIONS {
            // shift by the nearest neighbour for stability
            let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-beta * (row[j] - dmin)).exp() };
                sum += probs[j];
            }
            let mut weighted = 0.0;
            for j in 0..n {
                probs[j] /= sum;
                weighted += probs[j] * (row[j] - dmin);
            }
            let entropy = sum.ln() + beta * weighted;
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&probs);
    }
    p
}

fn kl_divergence(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &num)| {
            let q = (num / q_sum).max(P_FLOOR);
            pij * (pij / q).ln()
        })
        .sum()
}

const INIT_STD: f64 = 1e-4;

fn initial_layout(x: &[Vec<f64>], config: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    match config.init {
        TsneInit::Random => {
            let mut rng = Rng::new(config.seed);
            Ok((0..x.len()).map(|_| [INIT_STD * rng.normal(), INIT_STD * rng.normal()]).collect())
        }
        TsneInit::Pca => {
            let k = x[0].len().min(2);
            let scores = pca(x, k)?.scores;
            let sd = (scores.iter().map(|s| s[0] * s[0]).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt();
            Ok(scores
                .iter()
                .map(|s| [s[0] / sd * INIT_STD, s.get(1).map_or(0.0, |v| v / sd * INIT_STD)])
                .collect())
        }
    }
}

/// Exact t-SNE to two dimensions.
pub fn tsne(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    if config.perplexity.is_nan() || config.perplexity <= 0.0 {
        return Err(Error::Config("perplexity must be positive".into()));
    }
    if n < config.min_samples() {
        return Err(Error::Config(format!(
            "perplexity {} needs at least {} samples, got {n}",
            config.perplexity,
            config.min_samples()
        )));
    }
    if x.iter().all(|r| r == &x[0]) {
        return Err(Error::Input("t-SNE input rows are all identical".into()));
    }
    let d = squared_distances(x);
    let cond = conditional_affinities(&d, n, config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }

    let mut y = initial_layout(x, config)?;
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let early = iter < config.exaggeration_iterations;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                q_sum += v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / q_sum).max(P_FLOOR);
                let mult = (exaggeration * p[i * n + j] - q) * num[i * n + j];
                grad[0] += 4.0 * mult * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * mult * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                gains[i][c] = if (grad[c] > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(MIN_GAIN)
                };
                update[i][c] = momentum * update[i][c] - config.learning_rate * gains[i][c] * grad[c];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0; 2], |m, yi| [m[0] + yi[0], m[1] + yi[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        // objective at the updated points
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                q_sum += v;
            }
        }
        kl.push(kl_divergence(&p, &num, q_sum));
        if y.iter().any(|yi| !yi[0].is_finite() || !yi[1].is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE diverged at iteration {iter}")));
        }
    }
    log::debug!("t-SNE final KL {:.6}", kl.last().copied().unwrap_or(f64::NAN));
    Ok(TsneResult { points: y, kl })
}
