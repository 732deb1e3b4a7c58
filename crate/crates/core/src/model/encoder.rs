//! Post-LN transformer encoder with a pooled classification head, and its
//! exact reverse-mode gradients.
//!
//! Per block, with input `s` (`seq × d_model`):
//!
//! ```text
//! c  = concat_h softmax(q_h k_hᵀ / sqrt(d_head)) v_h     (head h owns channels [h·d_head, (h+1)·d_head))
//! r1 = s + c·Wo + bo          h1 = LN1(r1)
//! r2 = h1 + GELU(h1·W1 + b1)·W2 + b2                 out = LN2(r2)
//! ```
//!
//! `c` is the concatenated head output before the output projection; the
//! head-level attribution cut sits there, with `s` as the skip branch.

use super::config::ModelConfig;
use super::tokenizer;
use super::weights::{LayerWeights, ModelWeights};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{add_col_sums, add_row_bias, gemm, gemm_nt, gemm_tn, Tensor};

pub const LN_EPS: f64 = 1e-5;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = gain[i] * h + bias[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates gain/bias gradients when given.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    d: usize,
    gain: &[f64],
    param_grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let rows = dy.len() / d;
    if let Some((dg, db)) = param_grads {
        for r in 0..rows {
            for i in 0..d {
                dg[i] += dy[r * d + i] * cache.xhat[r * d + i];
                db[i] += dy[r * d + i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for i in 0..d {
            dxhat[i] = dy[r * d + i] * gain[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = cache.rstd[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

/// Activations of one encoder block.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Block input `s_ℓ`.
    pub input: Tensor,
    /// Concatenated per-head attention output `c_ℓ`, before the output projection.
    pub heads: Tensor,
    /// Post-residual, post-norm block output.
    pub output: Tensor,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    tail: TailCache,
}

#[derive(Debug, Clone)]
struct TailCache {
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    gu: Vec<f64>,
    ln2: LnCache,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    argmax: Vec<usize>,
    n_residues: usize,
}

#[derive(Debug, Clone)]
struct ClassifierCache {
    z1: Vec<f64>,
    ln: LnCache,
    mask: Option<Vec<f64>>,
    y: Vec<f64>,
}

/// Everything a backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub tokens: Option<Vec<u32>>,
    /// Embedding output `E` (token + position embeddings).
    pub embedding: Tensor,
    pub layers: Vec<LayerCache>,
    /// `[CLS ; max ; mean ; sum/sqrt(n)]` over the final hidden states.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pool: PoolCache,
    classifier: ClassifierCache,
}

impl ForwardCache {
    pub fn seq_len(&self) -> usize {
        self.embedding.rows()
    }
}

/// Gradients of one scalar output with respect to encoder activations.
#[derive(Debug, Clone)]
pub struct ActivationGrads {
    /// `∂y/∂E`.
    pub embedding: Tensor,
    /// Per layer: `(∂y/∂c_ℓ, skip-branch partial ∂y/∂s_ℓ)`.
    pub head_cut: Vec<(Tensor, Tensor)>,
}

/// How far back a backward pass goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Stop at the pooled features (classifier parameters only).
    ClassifierOnly,
    /// Back to the embeddings.
    Full,
}

/// An immutable model: configuration plus weights.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: ModelConfig,
    weights: ModelWeights,
}

impl Encoder {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        let expected = super::weights::expected_shapes(&config);
        let tensors = weights.tensors();
        if tensors.len() != expected.len() {
            return Err(Error::Config("weights do not match layer count".into()));
        }
        for ((name, shape), t) in expected.iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    manifest: t.shape().to_vec(),
                    expected: shape.clone(),
                });
            }
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// Mutable access for optimizers. Shapes must not change.
    pub fn weights_mut(&mut self) -> &mut ModelWeights {
        &mut self.weights
    }

    pub fn into_parts(self) -> (ModelConfig, ModelWeights) {
        (self.config, self.weights)
    }

    /// Token plus position embeddings.
    pub fn embed(&self, tokens: &[u32]) -> Result<Tensor> {
        self.check_len(tokens.len())?;
        let d = self.config.d_model;
        let mut e = Tensor::zeros(&[tokens.len(), d]);
        for (t, &tok) in tokens.iter().enumerate() {
            if tok as usize >= self.config.vocab_size {
                return Err(Error::Input(format!("token id {tok} outside vocabulary")));
            }
            let tr = self.weights.token_embedding.row(tok as usize);
            let pr = self.weights.position_embedding.row(t);
            for ((o, a), b) in e.row_mut(t).iter_mut().zip(tr).zip(pr) {
                *o = a + b;
            }
        }
        Ok(e)
    }

    /// The pad-token embedding at every position of a `seq_len` sequence.
    pub fn pad_embedding(&self, seq_len: usize) -> Result<Tensor> {
        self.embed(&vec![tokenizer::PAD; seq_len])
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < 3 || len > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence of {len} tokens outside [3, {}]",
                self.config.max_positions
            )));
        }
        Ok(())
    }

    /// Deterministic inference forward pass.
    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardCache> {
        let e = self.embed(tokens)?;
        let mut cache = self.forward_embedding(&e, None)?;
        cache.tokens = Some(tokens.to_vec());
        Ok(cache)
    }

    /// Forward pass from an embedding tensor laid out as `[CLS] residues [SEP]`.
    /// With `dropout_rng`, the classifier dropout mask is sampled (training).
    pub fn forward_embedding(&self, e: &Tensor, dropout_rng: Option<&mut Rng>) -> Result<ForwardCache> {
        let d = self.config.d_model;
        if e.rank() != 2 || e.cols() != d {
            return Err(Error::Dimension {
                op: "forward_embedding",
                left: e.shape().to_vec(),
                right: vec![0, d],
            });
        }
        self.check_len(e.rows())?;
        let mut layers = Vec::with_capacity(self.config.n_layers);
        let mut x = e.clone();
        for lw in &self.weights.layers {
            let cache = self.block(lw, x)?;
            x = cache.output.clone();
            layers.push(cache);
        }
        let (pooled, pool) = self.pool(&x);
        let (logits, classifier) = self.classify(&pooled, dropout_rng);
        Ok(ForwardCache {
            tokens: None,
            embedding: e.clone(),
            layers,
            pooled,
            logits,
            pool,
            classifier,
        })
    }

    /// Logits of the computation downstream of block `layer`'s attention,
    /// with the skip input `s` and head output `c` supplied independently.
    pub fn logits_from_cut(&self, layer: usize, s: &Tensor, c: &Tensor) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        if s.shape() != c.shape() || s.rank() != 2 || s.cols() != self.config.d_model {
            return Err(Error::Dimension {
                op: "logits_from_cut",
                left: s.shape().to_vec(),
                right: c.shape().to_vec(),
            });
        }
        let tail = self.tail(&self.weights.layers[layer], s.data(), c.data());
        let mut x = Tensor::new(s.shape().to_vec(), tail.out)?;
        for lw in &self.weights.layers[layer + 1..] {
            x = self.block(lw, x)?.output;
        }
        let (pooled, _) = self.pool(&x);
        Ok(self.classify(&pooled, None).0)
    }

    pub(super) fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.config.n_layers {
            return Err(Error::Input(format!(
                "layer {layer} out of range (model has {})",
                self.config.n_layers
            )));
        }
        Ok(())
    }

    pub(super) fn block(&self, lw: &LayerWeights, s: Tensor) -> Result<LayerCache> {
        let cfg = &self.config;
        let (t, d, nh, dh) = (s.rows(), cfg.d_model, cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let project = |w: &Tensor, b: &Tensor| {
            let mut out = vec![0.0; t * d];
            gemm(s.data(), w.data(), &mut out, t, d, d);
            add_row_bias(&mut out, b.data());
            out
        };
        let q = project(&lw.wq, &lw.bq);
        let k = project(&lw.wk, &lw.bk);
        let v = project(&lw.wv, &lw.bv);
        let mut probs = vec![0.0; nh * t * t];
        let mut c = vec![0.0; t * d];
        for h in 0..nh {
            let off = h * dh;
            let p = &mut probs[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut p[i * t..(i + 1) * t];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *slot = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                crate::tensor::softmax_in_place(row);
                let ci = &mut c[i * d + off..i * d + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (o, vv) in ci.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
        let tail = self.tail(lw, s.data(), &c);
        let output = Tensor::new(vec![t, d], tail.out.clone())?;
        Ok(LayerCache {
            heads: Tensor::new(vec![t, d], c)?,
            input: s,
            output,
            q,
            k,
            v,
            probs,
            tail,
        })
    }

    fn tail(&self, lw: &LayerWeights, s: &[f64], c: &[f64]) -> TailCache {
        let cfg = &self.config;
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let t = s.len() / d;
        let mut r1 = s.to_vec();
        gemm(c, lw.wo.data(), &mut r1, t, d, d);
        add_row_bias(&mut r1, lw.bo.data());
        let (h1, ln1) = layer_norm(&r1, d, lw.ln1_gain.data(), lw.ln1_bias.data());
        let mut u = vec![0.0; t * ff];
        gemm(&h1, lw.w1.data(), &mut u, t, d, ff);
        add_row_bias(&mut u, lw.b1.data());
        let gu: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let mut r2 = h1.clone();
        gemm(&gu, lw.w2.data(), &mut r2, t, ff, d);
        add_row_bias(&mut r2, lw.b2.data());
        let (out, ln2) = layer_norm(&r2, d, lw.ln2_gain.data(), lw.ln2_bias.data());
        TailCache {
            ln1,
            h1,
            u,
            gu,
            ln2,
            out,
        }
    }

    fn pool(&self, x: &Tensor) -> (Vec<f64>, PoolCache) {
        let (t, d) = (x.rows(), x.cols());
        let n = t - 2;
        let mut pooled = vec![0.0; 4 * d];
        pooled[..d].copy_from_slice(x.row(0));
        let mut argmax = vec![1usize; d];
        for c in 0..d {
            let mut best = x.at(1, c);
            let mut sum = 0.0;
            for (pos, r) in (1..t - 1).enumerate() {
                let v = x.at(r, c);
                if pos > 0 && v > best {
                    best = v;
                    argmax[c] = r;
                }
                sum += v;
            }
            pooled[d + c] = best;
            pooled[2 * d + c] = sum / n as f64;
            pooled[3 * d + c] = sum / (n as f64).sqrt();
        }
        (pooled, PoolCache { argmax, n_residues: n })
    }

    fn classify(&self, pooled: &[f64], dropout_rng: Option<&mut Rng>) -> (Vec<f64>, ClassifierCache) {
        let cw = &self.weights.classifier;
        let (p, h, nc) = (pooled.len(), self.config.head_hidden, self.config.n_classes);
        let mut z1 = cw.b_hidden.data().to_vec();
        gemm(pooled, cw.w_hidden.data(), &mut z1, 1, p, h);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let (mut y, ln) = layer_norm(&a1, h, cw.ln_gain.data(), cw.ln_bias.data());
        let mask = dropout_rng.filter(|_| self.config.dropout_rate > 0.0).map(|rng| {
            let keep = 1.0 - self.config.dropout_rate;
            (0..h)
                .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                .collect::<Vec<f64>>()
        });
        if let Some(m) = &mask {
            for (v, k) in y.iter_mut().zip(m) {
                *v *= k;
            }
        }
        let mut logits = cw.b_out.data().to_vec();
        gemm(&y, cw.w_out.data(), &mut logits, 1, h, nc);
        (logits, ClassifierCache { z1, ln, mask, y })
    }

    /// Backpropagates `d_logits` through the cached forward pass.
    ///
    /// Parameter gradients are added into `param_grads` when given. Activation
    /// gradients are returned for [`Depth::Full`].
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        depth: Depth,
        mut param_grads: Option<&mut ModelWeights>,
    ) -> Option<ActivationGrads> {
        let cfg = &self.config;
        let cw = &self.weights.classifier;
        let cc = &cache.classifier;
        let (p, h, nc, d) = (cfg.pooled_dim(), cfg.head_hidden, cfg.n_classes, cfg.d_model);

        // classifier
        if let Some(g) = param_grads.as_deref_mut() {
            gemm_tn(&cc.y, d_logits, g.classifier.w_out.data_mut(), 1, h, nc);
            add_col_sums(d_logits, g.classifier.b_out.data_mut());
        }
        let mut dy = vec![0.0; h];
        gemm_nt(d_logits, cw.w_out.data(), &mut dy, 1, nc, h);
        if let Some(m) = &cc.mask {
            for (v, k) in dy.iter_mut().zip(m) {
                *v *= k;
            }
        }
        let ln_params = param_grads.as_deref_mut().map(|g| {
            let c = &mut g.classifier;
            (c.ln_gain.data_mut(), c.ln_bias.data_mut())
        });
        let mut dz = layer_norm_backward(&dy, &cc.ln, h, cw.ln_gain.data(), ln_params);
        for (g, &z) in dz.iter_mut().zip(&cc.z1) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        if let Some(g) = param_grads.as_deref_mut() {
            gemm_tn(&cache.pooled, &dz, g.classifier.w_hidden.data_mut(), 1, p, h);
            add_col_sums(&dz, g.classifier.b_hidden.data_mut());
        }
        if depth == Depth::ClassifierOnly {
            return None;
        }
        let mut dp = vec![0.0; p];
        gemm_nt(&dz, cw.w_hidden.data(), &mut dp, 1, h, p);

        // pooling
        let t = cache.seq_len();
        let n = cache.pool.n_residues as f64;
        let mut dx = vec![0.0; t * d];
        dx[..d].copy_from_slice(&dp[..d]);
        for c in 0..d {
            dx[cache.pool.argmax[c] * d + c] += dp[d + c];
            let spread = dp[2 * d + c] / n + dp[3 * d + c] / n.sqrt();
            for r in 1..t - 1 {
                dx[r * d + c] += spread;
            }
        }

        let mut head_cut = Vec::with_capacity(cfg.n_layers);
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let lw = &self.weights.layers[l];
            let lg = param_grads.as_deref_mut().map(|g| &mut g.layers[l]);
            let (ds, g_c, g_s) = self.block_backward(lw, lc, dx, lg);
            head_cut.push((
                Tensor::new(vec![t, d], g_c).expect("shape"),
                Tensor::new(vec![t, d], g_s).expect("shape"),
            ));
            dx = ds;
        }
        head_cut.reverse();

        if let (Some(g), Some(tokens)) = (param_grads, cache.tokens.as_ref()) {
            for (pos, &tok) in tokens.iter().enumerate() {
                let src = &dx[pos * d..(pos + 1) * d];
                for (o, v) in g.token_embedding.row_mut(tok as usize).iter_mut().zip(src) {
                    *o += v;
                }
                for (o, v) in g.position_embedding.row_mut(pos).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        Some(ActivationGrads {
            embedding: Tensor::new(vec![t, d], dx).expect("shape"),
            head_cut,
        })
    }

    /// Returns `(∂/∂s total, ∂/∂c, skip-only ∂/∂s)` for one block.
    fn block_backward(
        &self,
        lw: &LayerWeights,
        lc: &LayerCache,
        d_out: Vec<f64>,
        mut g: Option<&mut LayerWeights>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = &self.config;
        let (d, ff, nh, dh) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.head_dim());
        let t = d_out.len() / d;
        let tc = &lc.tail;

        let ln2 = g.as_deref_mut().map(|g| (g.ln2_gain.data_mut(), g.ln2_bias.data_mut()));
        let dr2 = layer_norm_backward(&d_out, &tc.ln2, d, lw.ln2_gain.data(), ln2);
        if let Some(g) = g.as_deref_mut() {
            gemm_tn(&tc.gu, &dr2, g.w2.data_mut(), t, ff, d);
            add_col_sums(&dr2, g.b2.data_mut());
        }
        let mut du = vec![0.0; t * ff];
        gemm_nt(&dr2, lw.w2.data(), &mut du, t, d, ff);
        for (v, &x) in du.iter_mut().zip(&tc.u) {
            *v *= gelu_grad(x);
        }
        if let Some(g) = g.as_deref_mut() {
            gemm_tn(&tc.h1, &du, g.w1.data_mut(), t, d, ff);
            add_col_sums(&du, g.b1.data_mut());
        }
        let mut dh1 = dr2;
        gemm_nt(&du, lw.w1.data(), &mut dh1, t, ff, d);
        let ln1 = g.as_deref_mut().map(|g| (g.ln1_gain.data_mut(), g.ln1_bias.data_mut()));
        let dr1 = layer_norm_backward(&dh1, &tc.ln1, d, lw.ln1_gain.data(), ln1);

        let (dc, g_s) = head_cut_from_block_grad(lw, &dr1, d);
        if let Some(g) = g.as_deref_mut() {
            gemm_tn(lc.heads.data(), &dr1, g.wo.data_mut(), t, d, d);
            add_col_sums(&dr1, g.bo.data_mut());
        }

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut ds_row = vec![0.0; t];
        for h in 0..nh {
            let off = h * dh;
            let p = &lc.probs[h * t * t..(h + 1) * t * t];
            for i in 0..t {
                let dci = &dc[i * d + off..i * d + off + dh];
                let pi = &p[i * t..(i + 1) * t];
                let mut dot = 0.0;
                for j in 0..t {
                    let vj = &lc.v[j * d + off..j * d + off + dh];
                    let dpij = dci.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    ds_row[j] = dpij;
                    dot += pi[j] * dpij;
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (o, x) in dvj.iter_mut().zip(dci) {
                        *o += pi[j] * x;
                    }
                }
                let qi = &lc.q[i * d + off..i * d + off + dh];
                for j in 0..t {
                    let dsij = pi[j] * (ds_row[j] - dot) * scale;
                    if dsij == 0.0 {
                        continue;
                    }
                    let kj = &lc.k[j * d + off..j * d + off + dh];
                    let dqi = &mut dq[i * d + off..i * d + off + dh];
                    for (o, x) in dqi.iter_mut().zip(kj) {
                        *o += dsij * x;
                    }
                    let dkj = &mut dk[j * d + off..j * d + off + dh];
                    for (o, x) in dkj.iter_mut().zip(qi) {
                        *o += dsij * x;
                    }
                }
            }
        }
        let s = lc.input.data();
        if let Some(g) = g.as_deref_mut() {
            gemm_tn(s, &dq, g.wq.data_mut(), t, d, d);
            add_col_sums(&dq, g.bq.data_mut());
            gemm_tn(s, &dk, g.wk.data_mut(), t, d, d);
            add_col_sums(&dk, g.bk.data_mut());
            gemm_tn(s, &dv, g.wv.data_mut(), t, d, d);
            add_col_sums(&dv, g.bv.data_mut());
        }
        let mut ds = g_s.clone();
        gemm_nt(&dq, lw.wq.data(), &mut ds, t, d, d);
        gemm_nt(&dk, lw.wk.data(), &mut ds, t, d, d);
        gemm_nt(&dv, lw.wv.data(), &mut ds, t, d, d);
        (ds, dc, g_s)
    }

    /// `∂logit[class]/∂E`.
    pub fn grad_embedding(&self, cache: &ForwardCache, class: usize) -> Result<Tensor> {
        Ok(self.class_gradients(cache, class)?.embedding)
    }

    /// `(g_c, g_s)` at block `layer`: the gradient with respect to the
    /// concatenated head output, and the partial through the skip branch only.
    pub fn grad_head_cut(&self, cache: &ForwardCache, layer: usize, class: usize) -> Result<(Tensor, Tensor)> {
        self.check_layer(layer)?;
        Ok(self.class_gradients(cache, class)?.head_cut.swap_remove(layer))
    }

    /// All activation gradients of one class logit in a single backward pass.
    pub fn class_gradients(&self, cache: &ForwardCache, class: usize) -> Result<ActivationGrads> {
        if class >= self.config.n_classes {
            return Err(Error::Input(format!(
                "class index {class} out of range ({} classes)",
                self.config.n_classes
            )));
        }
        let mut onehot = vec![0.0; self.config.n_classes];
        onehot[class] = 1.0;
        Ok(self
            .backward(cache, &onehot, Depth::Full, None)
            .expect("full depth yields activation gradients"))
    }
}

/// Splits the gradient arriving at a block's first residual sum into the
/// head-output gradient `g_c = g·Woᵀ` and the skip gradient `g_s = g`.
pub fn head_cut_from_block_grad(lw: &LayerWeights, g_residual: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let t = g_residual.len() / d;
    let mut g_c = vec![0.0; t * d];
    gemm_nt(g_residual, lw.wo.data(), &mut g_c, t, d, d);
    (g_c, g_residual.to_vec())
}
