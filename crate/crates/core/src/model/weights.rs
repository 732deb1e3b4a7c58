use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

/// One post-LN encoder block. Projection matrices are stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// Pooled features → hidden → ReLU → layer norm → dropout → logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub w_hidden: Tensor,
    pub b_hidden: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub classifier: ClassifierWeights,
}

fn gaussian(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = std * rng.normal();
    }
    t
}

/// Parameter names and shapes in archive order.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("embeddings.token".to_string(), vec![cfg.vocab_size, d]),
        ("embeddings.position".to_string(), vec![cfg.max_positions, d]),
    ];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("attn.q.weight"), vec![d, d]),
            (p("attn.q.bias"), vec![d]),
            (p("attn.k.weight"), vec![d, d]),
            (p("attn.k.bias"), vec![d]),
            (p("attn.v.weight"), vec![d, d]),
            (p("attn.v.bias"), vec![d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("ln1.gain"), vec![d]),
            (p("ln1.bias"), vec![d]),
            (p("ff.in.weight"), vec![d, cfg.d_ff]),
            (p("ff.in.bias"), vec![cfg.d_ff]),
            (p("ff.out.weight"), vec![cfg.d_ff, d]),
            (p("ff.out.bias"), vec![d]),
            (p("ln2.gain"), vec![d]),
            (p("ln2.bias"), vec![d]),
        ]);
    }
    let h = cfg.head_hidden;
    out.extend([
        ("classifier.hidden.weight".to_string(), vec![cfg.pooled_dim(), h]),
        ("classifier.hidden.bias".to_string(), vec![h]),
        ("classifier.ln.gain".to_string(), vec![h]),
        ("classifier.ln.bias".to_string(), vec![h]),
        ("classifier.out.weight".to_string(), vec![h, cfg.n_classes]),
        ("classifier.out.bias".to_string(), vec![cfg.n_classes]),
    ]);
    out
}

pub fn group_of(name: &str) -> ParamGroup {
    if name.starts_with("classifier.") {
        ParamGroup::Head
    } else {
        ParamGroup::Encoder
    }
}

impl ModelWeights {
    /// All-zero tensors with the shapes `cfg` dictates (used for gradient buffers).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let tensors = expected_shapes(cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(&s))
            .collect();
        Self::from_ordered(cfg, tensors).expect("shapes come from the config")
    }

    /// Random initialization.
    ///
    /// Projections are Gaussian with std `1/sqrt(fan_in)`, token embeddings
    /// unit Gaussian, position embeddings sinusoidal, layer-norm gains one.
    /// Biases get a small Gaussian offset instead of zero so that a zero input
    /// does not sit exactly at the layer-norm singularity.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let token_embedding = gaussian(rng, &[cfg.vocab_size, d], 1.0);
        let mut position_embedding = Tensor::zeros(&[cfg.max_positions, d]);
        for pos in 0..cfg.max_positions {
            for i in 0..d {
                let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
                let angle = pos as f64 * rate;
                let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                position_embedding.set(pos, i, v);
            }
        }
        let bias_std = 0.1;
        let proj = |rng: &mut Rng, fan_in: usize, fan_out: usize| {
            gaussian(rng, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                wq: proj(rng, d, d),
                bq: gaussian(rng, &[d], bias_std),
                wk: proj(rng, d, d),
                bk: gaussian(rng, &[d], bias_std),
                wv: proj(rng, d, d),
                bv: gaussian(rng, &[d], bias_std),
                wo: proj(rng, d, d),
                bo: gaussian(rng, &[d], bias_std),
                ln1_gain: Tensor::full(&[d], 1.0),
                ln1_bias: Tensor::zeros(&[d]),
                w1: proj(rng, d, cfg.d_ff),
                b1: gaussian(rng, &[cfg.d_ff], bias_std),
                w2: proj(rng, cfg.d_ff, d),
                b2: gaussian(rng, &[d], bias_std),
                ln2_gain: Tensor::full(&[d], 1.0),
                ln2_bias: Tensor::zeros(&[d]),
            })
            .collect();
        let h = cfg.head_hidden;
        let classifier = ClassifierWeights {
            w_hidden: proj(rng, cfg.pooled_dim(), h),
            b_hidden: gaussian(rng, &[h], bias_std),
            ln_gain: Tensor::full(&[h], 1.0),
            ln_bias: Tensor::zeros(&[h]),
            w_out: proj(rng, h, cfg.n_classes),
            b_out: Tensor::zeros(&[cfg.n_classes]),
        };
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            classifier,
        })
    }

    /// Rebuilds weights from tensors in [`expected_shapes`] order.
    pub fn from_ordered(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = expected_shapes(cfg);
        if tensors.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    manifest: t.shape().to_vec(),
                    expected: shape.clone(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            })
            .collect();
        let classifier = ClassifierWeights {
            w_hidden: next(),
            b_hidden: next(),
            ln_gain: next(),
            ln_bias: next(),
            w_out: next(),
            b_out: next(),
        };
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            classifier,
        })
    }

    /// Tensors in archive order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend([
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain, &l.ln1_bias,
                &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias,
            ]);
        }
        let c = &self.classifier;
        out.extend([&c.w_hidden, &c.b_hidden, &c.ln_gain, &c.ln_bias, &c.w_out, &c.b_out]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
            ]);
        }
        let c = &mut self.classifier;
        out.extend([
            &mut c.w_hidden,
            &mut c.b_hidden,
            &mut c.ln_gain,
            &mut c.ln_bias,
            &mut c.w_out,
            &mut c.b_out,
        ]);
        out
    }

    /// SHA-256 over the little-endian bytes of the tensors in `group`
    /// (all tensors when `None`), in archive order.
    pub fn digest(&self, cfg: &ModelConfig, group: Option<ParamGroup>) -> String {
        let mut bytes = Vec::new();
        for ((name, _), t) in expected_shapes(cfg).iter().zip(self.tensors()) {
            if group.is_none_or(|g| group_of(name) == g) {
                for v in t.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        crate::io::sha256_hex(&bytes)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Fills every tensor with zeros, keeping shapes.
    pub fn clear(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }

    /// Swaps the parameter blocks of heads `a` and `b` in `layer`: columns of
    /// the Q/K/V projections and biases, rows of the output projection.
    pub fn swap_heads(&mut self, cfg: &ModelConfig, layer: usize, a: usize, b: usize) {
        let dh = cfg.head_dim();
        let d = cfg.d_model;
        let lw = &mut self.layers[layer];
        for w in [&mut lw.wq, &mut lw.wk, &mut lw.wv] {
            let data = w.data_mut();
            for row in 0..d {
                for j in 0..dh {
                    data.swap(row * d + a * dh + j, row * d + b * dh + j);
                }
            }
        }
        for bias in [&mut lw.bq, &mut lw.bk, &mut lw.bv] {
            let data = bias.data_mut();
            for j in 0..dh {
                data.swap(a * dh + j, b * dh + j);
            }
        }
        let data = lw.wo.data_mut();
        for j in 0..dh {
            for col in 0..d {
                data.swap((a * dh + j) * d + col, (b * dh + j) * d + col);
            }
        }
    }
}
