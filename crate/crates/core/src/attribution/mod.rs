//! Integrated gradients along a straight line in embedding space.
//!
//! Embedding-level attributions integrate the class-logit gradient with
//! respect to the embedding. Head-level attributions follow the same path
//! through the encoder, and at block `ℓ` split the downstream computation into
//! its skip input `s_ℓ` and its concatenated head output `c_ℓ`. Both
//! integrals use the trapezoid rule on gradients with the deltas of the
//! actual path activations, so `Σ Δ` telescopes to the endpoint difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tokenizer::{CLS, SEP};
use crate::model::Encoder;
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 64;

/// Below this `|F(x) − F(x')|` the completeness gap is reported in absolute terms.
pub const GAP_ABSOLUTE_BELOW: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    #[default]
    Zero,
    /// The pad-token embedding (token plus position) at every position.
    Pad,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Baseline::Zero),
            "pad" => Ok(Baseline::Pad),
            _ => Err(Error::Input(format!("unknown baseline {s:?} (expected zero or pad)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSpec {
    pub baseline: Baseline,
    pub steps: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            baseline: Baseline::Zero,
            steps: DEFAULT_STEPS,
        }
    }
}

impl PathSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("integration steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenFlag {
    Cls,
    Residue,
    Sep,
}

pub fn token_flags(tokens: &[u32]) -> Vec<TokenFlag> {
    tokens
        .iter()
        .map(|&t| match t {
            CLS => TokenFlag::Cls,
            SEP => TokenFlag::Sep,
            _ => TokenFlag::Residue,
        })
        .collect()
}

/// A differentiable scalar function of an embedding tensor.
pub trait GradientModel {
    /// `F(e)` and `∂F/∂e` for output `class`.
    fn value_and_grad(&self, e: &Tensor, class: usize) -> Result<(f64, Tensor)>;
}

impl GradientModel for Encoder {
    fn value_and_grad(&self, e: &Tensor, class: usize) -> Result<(f64, Tensor)> {
        let cache = self.forward_embedding(e, None)?;
        let grads = self.class_gradients(&cache, class)?;
        Ok((cache.logits[class], grads.embedding))
    }
}

/// `|total − Δ| / |Δ|` with `Δ = F(x) − F(x')`; absolute when `|Δ|` is tiny.
pub fn completeness_gap(total: f64, f_x: f64, f_baseline: f64) -> f64 {
    let delta = f_x - f_baseline;
    let err = (total - delta).abs();
    if delta.abs() <= GAP_ABSOLUTE_BELOW {
        err
    } else {
        err / delta.abs()
    }
}

/// Point `k` of `m` on the straight line from `baseline` to `sample`.
/// The endpoints are returned exactly.
pub fn path_point(sample: &Tensor, baseline: &Tensor, k: usize, m: usize) -> Tensor {
    if k == 0 {
        return baseline.clone();
    }
    if k == m {
        return sample.clone();
    }
    let a = k as f64 / m as f64;
    let data = baseline
        .data()
        .iter()
        .zip(sample.data())
        .map(|(&b, &x)| b + a * (x - b))
        .collect();
    Tensor::new(sample.shape().to_vec(), data).expect("shape preserved")
}

/// All `m + 1` points of the straight path.
pub fn embedding_path(sample: &Tensor, baseline: &Tensor, m: usize) -> Result<Vec<Tensor>> {
    check_same_shape("embedding_path", sample, baseline)?;
    if m == 0 {
        return Err(Error::Config("integration steps must be at least 1".into()));
    }
    Ok((0..=m).map(|k| path_point(sample, baseline, k, m)).collect())
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_finite(t: &Tensor, what: &str, k: usize) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at path point {k}")))
    }
}

/// `acc += ½ (g0 + g1) ⊙ (x1 − x0)`.
fn trapezoid(acc: &mut [f64], g0: &[f64], g1: &[f64], x0: &[f64], x1: &[f64]) {
    for i in 0..acc.len() {
        acc[i] += 0.5 * (g0[i] + g1[i]) * (x1[i] - x0[i]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAttribution {
    /// `seq × d_model`.
    pub values: Tensor,
    /// Signed channel sum per token.
    pub token_relevance: Vec<f64>,
    pub total: f64,
    pub f_x: f64,
    pub f_baseline: f64,
    pub gap: f64,
}

/// Embedding-level IG of `model` between two embedding tensors.
pub fn ig_embedding_between<M: GradientModel + ?Sized>(
    model: &M,
    sample: &Tensor,
    baseline: &Tensor,
    class: usize,
    steps: usize,
) -> Result<EmbeddingAttribution> {
    check_same_shape("ig_embedding", sample, baseline)?;
    if steps == 0 {
        return Err(Error::Config("integration steps must be at least 1".into()));
    }
    let mut acc = vec![0.0; sample.len()];
    let mut prev_x = path_point(sample, baseline, 0, steps);
    let (f_baseline, mut prev_g) = model.value_and_grad(&prev_x, class)?;
    check_finite(&prev_g, "embedding gradient", 0)?;
    let mut f_x = f_baseline;
    for k in 1..=steps {
        let x = path_point(sample, baseline, k, steps);
        let (f, g) = model.value_and_grad(&x, class)?;
        check_finite(&g, "embedding gradient", k)?;
        trapezoid(&mut acc, prev_g.data(), g.data(), prev_x.data(), x.data());
        f_x = f;
        prev_x = x;
        prev_g = g;
    }
    let values = Tensor::new(sample.shape().to_vec(), acc)?;
    let token_relevance: Vec<f64> = (0..values.rows()).map(|t| values.row(t).iter().sum()).collect();
    let total = token_relevance.iter().sum();
    Ok(EmbeddingAttribution {
        gap: completeness_gap(total, f_x, f_baseline),
        values,
        token_relevance,
        total,
        f_x,
        f_baseline,
    })
}

pub fn baseline_embedding(encoder: &Encoder, seq_len: usize, baseline: Baseline) -> Result<Tensor> {
    match baseline {
        Baseline::Zero => Ok(Tensor::zeros(&[seq_len, encoder.config().d_model])),
        Baseline::Pad => encoder.pad_embedding(seq_len),
    }
}

pub fn ig_embedding(encoder: &Encoder, tokens: &[u32], class: usize, spec: PathSpec) -> Result<EmbeddingAttribution> {
    spec.validate()?;
    let x = encoder.embed(tokens)?;
    let x0 = baseline_embedding(encoder, tokens.len(), spec.baseline)?;
    ig_embedding_between(encoder, &x, &x0, class, spec.steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttribution {
    pub layer: usize,
    /// `seq × n_heads`: each head's channel block of `c_ℓ` summed.
    pub head_map: Tensor,
    /// `seq × d_model` attribution over `c_ℓ` before the head reduction.
    pub head_channels: Tensor,
    /// `seq × d_model` attribution over the skip input `s_ℓ`.
    pub skip_map: Tensor,
    pub total: f64,
    pub f_x: f64,
    pub f_baseline: f64,
    pub gap: f64,
}

/// Sums each contiguous block of `d_model / n_heads` channels.
pub fn reduce_heads(channels: &Tensor, n_heads: usize) -> Result<Tensor> {
    if channels.rank() != 2 || n_heads == 0 || !channels.cols().is_multiple_of(n_heads) {
        return Err(Error::Dimension {
            op: "reduce_heads",
            left: channels.shape().to_vec(),
            right: vec![n_heads],
        });
    }
    let dh = channels.cols() / n_heads;
    let mut out = Tensor::zeros(&[channels.rows(), n_heads]);
    for t in 0..channels.rows() {
        let row = channels.row(t);
        for h in 0..n_heads {
            out.set(t, h, row[h * dh..(h + 1) * dh].iter().sum());
        }
    }
    Ok(out)
}

/// Head-level IG at each block in `layers`, from one shared pass over the
/// path: every path point costs one forward and one backward pass.
pub fn ig_head_levels_between(
    encoder: &Encoder,
    sample: &Tensor,
    baseline: &Tensor,
    class: usize,
    steps: usize,
    layers: &[usize],
) -> Result<Vec<HeadAttribution>> {
    check_same_shape("ig_head_level", sample, baseline)?;
    if steps == 0 {
        return Err(Error::Config("integration steps must be at least 1".into()));
    }
    let n_layers = encoder.config().n_layers;
    if let Some(&bad) = layers.iter().find(|&&l| l >= n_layers) {
        return Err(Error::Input(format!("layer {bad} out of range ({n_layers} layers)")));
    }
    let len = sample.len();
    let mut acc_c = vec![vec![0.0; len]; layers.len()];
    let mut acc_s = vec![vec![0.0; len]; layers.len()];

    // (s, c, g_c, g_s) per requested layer at one path point
    type Cut = Vec<(Tensor, Tensor, Tensor, Tensor)>;
    let eval = |k: usize| -> Result<(f64, Cut)> {
        let x = path_point(sample, baseline, k, steps);
        let cache = encoder.forward_embedding(&x, None)?;
        let mut grads = encoder.class_gradients(&cache, class)?;
        let f = cache.logits[class];
        let mut out = Vec::with_capacity(layers.len());
        for &l in layers {
            let (g_c, g_s) = std::mem::replace(&mut grads.head_cut[l], (Tensor::scalar(0.0), Tensor::scalar(0.0)));
            check_finite(&g_c, &format!("head-output gradient of layer {l}"), k)?;
            check_finite(&g_s, &format!("skip gradient of layer {l}"), k)?;
            let lc = &cache.layers[l];
            out.push((lc.input.clone(), lc.heads.clone(), g_c, g_s));
        }
        Ok((f, out))
    };

    let (f_baseline, mut prev) = eval(0)?;
    let mut f_x = f_baseline;
    for k in 1..=steps {
        let (f, cur) = eval(k)?;
        for (i, ((s1, c1, gc1, gs1), (s0, c0, gc0, gs0))) in cur.iter().zip(&prev).enumerate() {
            trapezoid(&mut acc_c[i], gc0.data(), gc1.data(), c0.data(), c1.data());
            trapezoid(&mut acc_s[i], gs0.data(), gs1.data(), s0.data(), s1.data());
        }
        f_x = f;
        prev = cur;
    }

    let n_heads = encoder.config().n_heads;
    layers
        .iter()
        .zip(acc_c.into_iter().zip(acc_s))
        .map(|(&layer, (c, s))| {
            let head_channels = Tensor::new(sample.shape().to_vec(), c)?;
            let skip_map = Tensor::new(sample.shape().to_vec(), s)?;
            let head_map = reduce_heads(&head_channels, n_heads)?;
            let total = head_channels.sum() + skip_map.sum();
            Ok(HeadAttribution {
                layer,
                head_map,
                head_channels,
                skip_map,
                total,
                f_x,
                f_baseline,
                gap: completeness_gap(total, f_x, f_baseline),
            })
        })
        .collect()
}

pub fn ig_head_levels(
    encoder: &Encoder,
    tokens: &[u32],
    class: usize,
    layers: &[usize],
    spec: PathSpec,
) -> Result<Vec<HeadAttribution>> {
    spec.validate()?;
    let x = encoder.embed(tokens)?;
    let x0 = baseline_embedding(encoder, tokens.len(), spec.baseline)?;
    ig_head_levels_between(encoder, &x, &x0, class, spec.steps, layers)
}

pub fn ig_head_level(encoder: &Encoder, tokens: &[u32], class: usize, layer: usize, spec: PathSpec) -> Result<HeadAttribution> {
    Ok(ig_head_levels(encoder, tokens, class, &[layer], spec)?.remove(0))
}

/// Column sums of a `seq × n_heads` head map.
pub fn sum_over_sequence(head_map: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; head_map.cols()];
    for t in 0..head_map.rows() {
        for (o, v) in out.iter_mut().zip(head_map.row(t)) {
            *o += v;
        }
    }
    out
}

/// Per-protein `n_layers × n_heads` matrix of sequence-summed head relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummedMap {
    pub protein_id: String,
    pub class: String,
    /// Row per layer, column per head.
    pub values: Vec<Vec<f64>>,
}

impl SummedMap {
    pub fn n_layers(&self) -> usize {
        self.values.len()
    }

    pub fn n_heads(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Builds the summed map from head maps of layers `0..n_layers`, given in any order.
pub fn assemble_summed_map(
    protein_id: &str,
    class: &str,
    head_maps: &[(usize, &Tensor)],
    n_layers: usize,
) -> Result<SummedMap> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_layers];
    for &(layer, map) in head_maps {
        let slot = rows
            .get_mut(layer)
            .ok_or_else(|| Error::Input(format!("layer {layer} out of range ({n_layers} layers)")))?;
        *slot = Some(sum_over_sequence(map));
    }
    let values = rows
        .into_iter()
        .enumerate()
        .map(|(l, r)| r.ok_or_else(|| Error::Input(format!("{protein_id}: head map for layer {l} is missing"))))
        .collect::<Result<Vec<_>>>()?;
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{protein_id}: summed map")));
    }
    Ok(SummedMap {
        protein_id: protein_id.to_string(),
        class: class.to_string(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Embedding,
    Head,
}

/// On-disk form of one attribution map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub protein_id: String,
    pub class: String,
    pub kind: MapKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer: Option<usize>,
    pub steps: usize,
    pub baseline: Baseline,
    pub completeness_gap: f64,
    /// `seq × d_model` (embedding) or `seq × n_heads` (head).
    pub values: Vec<Vec<f64>>,
    /// Per-token channel sums (embedding maps only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_relevance: Option<Vec<f64>>,
    /// `seq × d_model` skip-connection attribution (head maps only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skip: Option<Vec<Vec<f64>>>,
    pub token_flags: Vec<TokenFlag>,
}

impl AttributionRecord {
    pub fn from_embedding(protein_id: &str, class: &str, tokens: &[u32], spec: PathSpec, a: &EmbeddingAttribution) -> Self {
        Self {
            protein_id: protein_id.to_string(),
            class: class.to_string(),
            kind: MapKind::Embedding,
            layer: None,
            steps: spec.steps,
            baseline: spec.baseline,
            completeness_gap: a.gap,
            values: a.values.to_rows(),
            token_relevance: Some(a.token_relevance.clone()),
            skip: None,
            token_flags: token_flags(tokens),
        }
    }

    pub fn from_head(protein_id: &str, class: &str, tokens: &[u32], spec: PathSpec, a: &HeadAttribution) -> Self {
        Self {
            protein_id: protein_id.to_string(),
            class: class.to_string(),
            kind: MapKind::Head,
            layer: Some(a.layer),
            steps: spec.steps,
            baseline: spec.baseline,
            completeness_gap: a.gap,
            values: a.head_map.to_rows(),
            token_relevance: None,
            skip: Some(a.skip_map.to_rows()),
            token_flags: token_flags(tokens),
        }
    }

    /// Per-token relevance used for annotation correlation: the channel sum
    /// for embedding maps, or one head's column for head maps.
    pub fn column(&self, head: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[head]).collect()
    }
}

#[cfg(test)]
mod tests;
