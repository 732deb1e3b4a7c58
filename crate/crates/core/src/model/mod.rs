//! BERT-style encoder, its fixed amino-acid tokenizer, weight archive, and
//! exact gradients at the embedding layer and at each block's head output.

pub mod archive;
mod config;
mod encoder;
pub mod tokenizer;
mod weights;

pub use archive::{load_weights, save_weights};
pub use config::{ModelConfig, TaskKind};
pub use encoder::{head_cut_from_block_grad, ActivationGrads, Depth, Encoder, ForwardCache, LayerCache, LN_EPS};
pub use tokenizer::tokenize;
pub use weights::{expected_shapes, group_of, ClassifierWeights, LayerWeights, ModelWeights, ParamGroup};

use crate::error::Result;
use crate::tensor::Tensor;

impl Encoder {
    /// Block `layer`'s concatenated head output for block input `s`.
    pub fn attention_output(&self, layer: usize, s: &Tensor) -> Result<Tensor> {
        let probe = self.run_from(layer, s.clone())?;
        Ok(probe.heads)
    }

    /// Logits when block `layer` receives input `s`.
    pub fn logits_from_layer_input(&self, layer: usize, s: &Tensor) -> Result<Vec<f64>> {
        let lc = self.run_from(layer, s.clone())?;
        self.logits_from_cut(layer, &lc.input, &lc.heads)
    }

    fn run_from(&self, layer: usize, s: Tensor) -> Result<LayerCache> {
        self.check_layer(layer)?;
        self.block(&self.weights().layers[layer], s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::ReduceKind;

    pub(crate) fn toy_config(layers: usize, heads: usize, d: usize) -> ModelConfig {
        ModelConfig {
            n_layers: layers,
            n_heads: heads,
            d_model: d,
            d_ff: 2 * d,
            max_positions: 40,
            n_classes: 3,
            head_hidden: 10,
            ..ModelConfig::default()
        }
    }

    fn toy_model(layers: usize, heads: usize, d: usize, seed: u64) -> Encoder {
        let cfg = toy_config(layers, heads, d);
        let w = ModelWeights::init(&cfg, &mut Rng::new(seed)).unwrap();
        Encoder::new(cfg, w).unwrap()
    }

    fn random_tokens(rng: &mut Rng, residues: usize) -> Vec<u32> {
        let s: String = (0..residues)
            .map(|_| tokenizer::AMINO_ACIDS.as_bytes()[rng.below(20)] as char)
            .collect();
        tokenize(&s).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    // Independent forward pass written with whole-tensor ops.
    fn reference_logits(model: &Encoder, tokens: &[u32]) -> Vec<f64> {
        let cfg = model.config();
        let w = model.weights();
        let d = cfg.d_model;
        let t = tokens.len();
        let rows: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(p, &tok)| {
                (0..d)
                    .map(|i| w.token_embedding.at(tok as usize, i) + w.position_embedding.at(p, i))
                    .collect()
            })
            .collect();
        let mut x = Tensor::from_rows(&rows).unwrap();
        let bias = |m: &Tensor, b: &Tensor| {
            let mut m = m.clone();
            for r in 0..m.rows() {
                for (v, bb) in m.row_mut(r).iter_mut().zip(b.data()) {
                    *v += bb;
                }
            }
            m
        };
        let ln = |m: &Tensor, g: &Tensor, b: &Tensor| {
            let mut out = m.clone();
            for r in 0..m.rows() {
                let row = m.row(r);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
                for (i, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = (row[i] - mean) / (var + LN_EPS).sqrt() * g.data()[i] + b.data()[i];
                }
            }
            out
        };
        for lw in &w.layers {
            let q = bias(&x.matmul(&lw.wq).unwrap(), &lw.bq);
            let k = bias(&x.matmul(&lw.wk).unwrap(), &lw.bk);
            let v = bias(&x.matmul(&lw.wv).unwrap(), &lw.bv);
            let dh = cfg.head_dim();
            let mut c = Tensor::zeros(&[t, d]);
            for h in 0..cfg.n_heads {
                let cols = |m: &Tensor| {
                    Tensor::from_rows(&(0..t).map(|r| m.row(r)[h * dh..(h + 1) * dh].to_vec()).collect::<Vec<_>>())
                        .unwrap()
                };
                let (qh, kh, vh) = (cols(&q), cols(&k), cols(&v));
                let scores = qh.matmul(&kh.transpose().unwrap()).unwrap().scale(1.0 / (dh as f64).sqrt());
                let out = scores.softmax_rows().unwrap().matmul(&vh).unwrap();
                for r in 0..t {
                    c.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(out.row(r));
                }
            }
            let r1 = x.add(&bias(&c.matmul(&lw.wo).unwrap(), &lw.bo)).unwrap();
            let h1 = ln(&r1, &lw.ln1_gain, &lw.ln1_bias);
            let u = bias(&h1.matmul(&lw.w1).unwrap(), &lw.b1)
                .map(|z| 0.5 * z * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt())));
            let r2 = h1.add(&bias(&u.matmul(&lw.w2).unwrap(), &lw.b2)).unwrap();
            x = ln(&r2, &lw.ln2_gain, &lw.ln2_bias);
        }
        let body = Tensor::from_rows(&x.to_rows()[1..t - 1]).unwrap();
        let n = (t - 2) as f64;
        let mut pooled = x.row(0).to_vec();
        pooled.extend(body.reduce(0, ReduceKind::Max).unwrap().data());
        pooled.extend(body.reduce(0, ReduceKind::Mean).unwrap().data());
        pooled.extend(body.reduce(0, ReduceKind::Sum).unwrap().scale(1.0 / n.sqrt()).data());
        let p = Tensor::new(vec![1, pooled.len()], pooled).unwrap();
        let c = &w.classifier;
        let z = bias(&p.matmul(&c.w_hidden).unwrap(), &c.b_hidden).map(|v| v.max(0.0));
        let y = ln(&z, &c.ln_gain, &c.ln_bias);
        bias(&y.matmul(&c.w_out).unwrap(), &c.b_out).into_data()
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = Rng::new(21);
        for (layers, heads) in [(1, 1), (2, 4)] {
            let model = toy_model(layers, heads, 16, 3 + layers as u64);
            let tokens = random_tokens(&mut rng, 12);
            let fast = model.forward(&tokens).unwrap().logits;
            let slow = reference_logits(&model, &tokens);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_logits() {
        let model = toy_model(1, 2, 8, 1);
        let (cfg, mut w) = model.into_parts();
        w.classifier.w_out.data_mut().fill(0.0);
        w.classifier.b_out.data_mut().fill(0.0);
        let model = Encoder::new(cfg, w).unwrap();
        let cache = model.forward(&tokenize("MKLVA").unwrap()).unwrap();
        assert!(cache.logits.iter().all(|&v| v == 0.0));
        assert_eq!(cache.pooled.len(), 4 * 8);
        let g = model.grad_embedding(&cache, 0).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let mut rng = Rng::new(99);
        for layers in [1, 2, 4] {
            for heads in [1, 2, 4] {
                let model = toy_model(layers, heads, 16, rng.next_u64());
                let tokens = random_tokens(&mut rng, 10);
                let e = model.embed(&tokens).unwrap();
                let cache = model.forward_embedding(&e, None).unwrap();
                let class = rng.below(3);
                let g = model.grad_embedding(&cache, class).unwrap();
                for _ in 0..10 {
                    let idx = rng.below(e.len());
                    let eps = 1e-4;
                    let mut plus = e.clone();
                    plus.data_mut()[idx] += eps;
                    let mut minus = e.clone();
                    minus.data_mut()[idx] -= eps;
                    let fp = model.forward_embedding(&plus, None).unwrap().logits[class];
                    let fm = model.forward_embedding(&minus, None).unwrap().logits[class];
                    let fd = (fp - fm) / (2.0 * eps);
                    let err = rel_err(g.data()[idx], fd);
                    assert!(err <= 1e-5, "L{layers} H{heads}: {} vs {fd} ({err})", g.data()[idx]);
                }
            }
        }
    }

    #[test]
    fn head_cut_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let model = toy_model(3, 2, 8, 17);
        let tokens = random_tokens(&mut rng, 9);
        let cache = model.forward(&tokens).unwrap();
        let class = 1;
        let eps = 1e-4;
        for layer in 0..3 {
            let (g_c, g_s) = model.grad_head_cut(&cache, layer, class).unwrap();
            let s = &cache.layers[layer].input;
            let c = &cache.layers[layer].heads;
            for _ in 0..8 {
                let idx = rng.below(c.len());
                let mut cp = c.clone();
                cp.data_mut()[idx] += eps;
                let mut cm = c.clone();
                cm.data_mut()[idx] -= eps;
                let fd = (model.logits_from_cut(layer, s, &cp).unwrap()[class]
                    - model.logits_from_cut(layer, s, &cm).unwrap()[class])
                    / (2.0 * eps);
                assert!(rel_err(g_c.data()[idx], fd) <= 1e-5);

                let mut sp = s.clone();
                sp.data_mut()[idx] += eps;
                let mut sm = s.clone();
                sm.data_mut()[idx] -= eps;
                let fd_skip = (model.logits_from_cut(layer, &sp, c).unwrap()[class]
                    - model.logits_from_cut(layer, &sm, c).unwrap()[class])
                    / (2.0 * eps);
                assert!(rel_err(g_s.data()[idx], fd_skip) <= 1e-5);

                // total derivative = skip partial + head-output chain
                let fd_total = (model.logits_from_layer_input(layer, &sp).unwrap()[class]
                    - model.logits_from_layer_input(layer, &sm).unwrap()[class])
                    / (2.0 * eps);
                let dc = model
                    .attention_output(layer, &sp)
                    .unwrap()
                    .sub(&model.attention_output(layer, &sm).unwrap())
                    .unwrap()
                    .scale(1.0 / (2.0 * eps));
                let chain: f64 = g_c.data().iter().zip(dc.data()).map(|(a, b)| a * b).sum();
                assert!(rel_err(g_s.data()[idx] + chain, fd_total) <= 1e-5);
            }
        }
        // layer 0's block input is the embedding
        let (_, _) = model.grad_head_cut(&cache, 0, class).unwrap();
        assert!(model.grad_head_cut(&cache, 3, class).is_err());
    }

    #[test]
    fn identity_downstream_stub() {
        let cfg = toy_config(1, 2, 4);
        let mut w = ModelWeights::init(&cfg, &mut Rng::new(0)).unwrap();
        w.layers[0].wo = Tensor::identity(4);
        // downstream G = sum of all entries of the residual sum ⇒ upstream gradient is all ones
        let (g_c, g_s) = head_cut_from_block_grad(&w.layers[0], &[1.0; 12], 4);
        assert!(g_c.iter().all(|&v| v == 1.0));
        assert!(g_s.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_output_projection_blocks_head_gradient() {
        let cfg = toy_config(2, 2, 8);
        let mut w = ModelWeights::init(&cfg, &mut Rng::new(12)).unwrap();
        w.layers[1].wo.data_mut().fill(0.0);
        let model = Encoder::new(cfg, w).unwrap();
        let cache = model.forward(&tokenize("MKTAYIAKQR").unwrap()).unwrap();
        let (g_c, g_s) = model.grad_head_cut(&cache, 1, 0).unwrap();
        assert!(g_c.data().iter().all(|&v| v == 0.0));
        assert!(g_s.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn swapping_heads_permutes_channel_blocks() {
        let cfg = toy_config(2, 4, 16);
        let w = ModelWeights::init(&cfg, &mut Rng::new(31)).unwrap();
        let mut swapped = w.clone();
        swapped.swap_heads(&cfg, 1, 0, 2);
        let a = Encoder::new(cfg.clone(), w).unwrap();
        let b = Encoder::new(cfg.clone(), swapped).unwrap();
        let tokens = tokenize("MKWVTFISLLLLFSSAYS").unwrap();
        let ca = a.forward(&tokens).unwrap();
        let cb = b.forward(&tokens).unwrap();
        for (x, y) in ca.logits.iter().zip(&cb.logits) {
            assert!((x - y).abs() <= 1e-12);
        }
        let dh = cfg.head_dim();
        let (ha, hb) = (&ca.layers[1].heads, &cb.layers[1].heads);
        for r in 0..ha.rows() {
            for j in 0..dh {
                assert!((ha.at(r, j) - hb.at(r, 2 * dh + j)).abs() <= 1e-12);
                assert!((ha.at(r, dh + j) - hb.at(r, dh + j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let model = toy_model(2, 2, 8, 7);
        let tokens = tokenize("MSTNPKPQRKTKRNTNRRPQDVKFPGG").unwrap();
        let a = model.forward(&tokens).unwrap().logits;
        let b = model.forward(&tokens).unwrap().logits;
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = toy_config(2, 2, 8);
        let w = ModelWeights::init(&cfg, &mut Rng::new(77)).unwrap();
        let model = Encoder::new(cfg.clone(), w.clone()).unwrap();
        let tokens = tokenize("MKTAYIAKQ").unwrap();
        let cache = model.forward(&tokens).unwrap();
        let mut grads = ModelWeights::zeros(&cfg);
        model.backward(&cache, &[0.3, -1.0, 0.5], Depth::Full, Some(&mut grads));
        let objective = |w: &ModelWeights| {
            let m = Encoder::new(cfg.clone(), w.clone()).unwrap();
            let l = m.forward(&tokens).unwrap().logits;
            0.3 * l[0] - l[1] + 0.5 * l[2]
        };
        let mut rng = Rng::new(1);
        let n_tensors = w.tensors().len();
        for ti in 0..n_tensors {
            let len = w.tensors()[ti].len();
            let idx = if ti == 0 {
                // a token row that actually occurs
                tokens[1] as usize * cfg.d_model + rng.below(cfg.d_model)
            } else {
                rng.below(len)
            };
            let eps = 1e-5;
            let mut plus = w.clone();
            plus.tensors_mut()[ti].data_mut()[idx] += eps;
            let mut minus = w.clone();
            minus.tensors_mut()[ti].data_mut()[idx] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let an = grads.tensors()[ti].data()[idx];
            assert!((an - fd).abs() <= 1e-6 * an.abs().max(1.0), "tensor {ti}: {an} vs {fd}");
        }
    }
}
