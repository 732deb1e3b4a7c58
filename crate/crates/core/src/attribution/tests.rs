use super::*;
use crate::model::{ModelConfig, ModelWeights};
use crate::rng::Rng;

fn toy_encoder(layers: usize, heads: usize, d: usize, seed: u64) -> Encoder {
    let cfg = ModelConfig {
        n_layers: layers,
        n_heads: heads,
        d_model: d,
        d_ff: 2 * d,
        max_positions: 40,
        n_classes: 2,
        head_hidden: 12,
        ..ModelConfig::default()
    };
    let w = ModelWeights::init(&cfg, &mut Rng::new(seed)).unwrap();
    Encoder::new(cfg, w).unwrap()
}

fn random_tokens(rng: &mut Rng, residues: usize) -> Vec<u32> {
    let mut t = vec![CLS];
    t.extend((0..residues).map(|_| 4 + rng.below(20) as u32));
    t.push(SEP);
    t
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

struct Linear {
    w: Tensor,
}

impl GradientModel for Linear {
    fn value_and_grad(&self, e: &Tensor, _class: usize) -> Result<(f64, Tensor)> {
        Ok((self.w.mul(e)?.sum(), self.w.clone()))
    }
}

#[test]
fn path_endpoints_and_midpoint() {
    let mut rng = Rng::new(1);
    let x = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[3, 4]);
    let p1 = embedding_path(&x, &b, 1).unwrap();
    assert_eq!(p1, vec![b.clone(), x.clone()]);
    let p = embedding_path(&x, &b, 8).unwrap();
    assert_eq!(p.len(), 9);
    let mean = x.add(&b).unwrap().scale(0.5);
    assert!(p[4].max_abs_diff(&mean).unwrap() <= 1e-15);
    let same = embedding_path(&x, &x, 5).unwrap();
    assert!(same.iter().all(|t| t == &x));
    assert!(embedding_path(&x, &Tensor::zeros(&[2, 4]), 3).is_err());
    assert!(embedding_path(&x, &b, 0).is_err());
}

#[test]
fn linear_model_gets_exact_attribution() {
    let mut rng = Rng::new(2);
    let w = random_tensor(&mut rng, &[5, 3]);
    let x = random_tensor(&mut rng, &[5, 3]);
    let model = Linear { w: w.clone() };
    for steps in [1, 7, 64] {
        let a = ig_embedding_between(&model, &x, &Tensor::zeros(&[5, 3]), 0, steps).unwrap();
        let expect = w.mul(&x).unwrap();
        assert!(a.values.max_abs_diff(&expect).unwrap() <= 1e-12);
        assert!((a.total - (a.f_x - a.f_baseline)).abs() <= 1e-12);
        let b = random_tensor(&mut rng, &[5, 3]);
        let a = ig_embedding_between(&model, &x, &b, 0, steps).unwrap();
        let expect = w.mul(&x.sub(&b).unwrap()).unwrap();
        assert!(a.values.max_abs_diff(&expect).unwrap() <= 1e-12);
    }
}

#[test]
fn baseline_equal_to_sample_gives_zero() {
    let enc = toy_encoder(2, 2, 8, 3);
    let tokens = random_tokens(&mut Rng::new(3), 6);
    let x = enc.embed(&tokens).unwrap();
    let a = ig_embedding_between(&enc, &x, &x, 1, 16).unwrap();
    assert!(a.values.data().iter().all(|&v| v == 0.0));
    assert_eq!(a.gap, 0.0);
}

#[test]
fn gap_arithmetic() {
    assert_eq!(completeness_gap(3.0, 5.0, 2.0), 0.0);
    assert!((completeness_gap(2.02, 2.0, 0.0) - 0.01).abs() < 1e-15);
    // tiny delta: absolute gap
    assert!((completeness_gap(0.5, 1e-12, 0.0) - (0.5 - 1e-12)).abs() < 1e-15);
}

#[test]
fn embedding_completeness_converges_under_refinement() {
    let enc = toy_encoder(2, 2, 16, 4);
    let mut rng = Rng::new(4);
    for _ in 0..3 {
        let tokens = random_tokens(&mut rng, 10);
        // max pooling and the classifier ReLU make the integrand piecewise
        // smooth, so the trapezoid error shrinks roughly like 1/m
        let gaps: Vec<f64> = [16, 256, 8192]
            .iter()
            .map(|&m| {
                ig_embedding(&enc, &tokens, 0, PathSpec { steps: m, ..PathSpec::default() })
                    .unwrap()
                    .gap
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] <= 1e-3, "{gaps:?}");
    }
}

#[test]
fn token_relevance_is_channel_sum() {
    let enc = toy_encoder(1, 2, 8, 5);
    let tokens = random_tokens(&mut Rng::new(5), 5);
    let a = ig_embedding(&enc, &tokens, 1, PathSpec::default()).unwrap();
    for t in 0..tokens.len() {
        assert_eq!(a.token_relevance[t], a.values.row(t).iter().sum::<f64>());
    }
}

#[test]
fn pad_baseline_is_accepted() {
    let enc = toy_encoder(1, 2, 8, 6);
    let tokens = random_tokens(&mut Rng::new(6), 5);
    let spec = PathSpec {
        baseline: Baseline::Pad,
        steps: 128,
    };
    let a = ig_embedding(&enc, &tokens, 0, spec).unwrap();
    let pad = enc.forward(&vec![crate::model::tokenizer::PAD; tokens.len()]).unwrap().logits[0];
    assert!((a.f_baseline - pad).abs() < 1e-12);
    assert!(a.gap < 1e-2);
}

#[test]
fn head_reduction_is_exact_reassociation() {
    let enc = toy_encoder(2, 4, 16, 7);
    let tokens = random_tokens(&mut Rng::new(7), 8);
    let spec = PathSpec {
        steps: 16,
        ..PathSpec::default()
    };
    for a in ig_head_levels(&enc, &tokens, 0, &[0, 1], spec).unwrap() {
        let by_heads: f64 = a.head_map.data().iter().sum();
        assert!((by_heads - a.head_channels.sum()).abs() <= 1e-12);
        for t in 0..tokens.len() {
            let row_heads: f64 = a.head_map.row(t).iter().sum();
            let row_channels: f64 = a.head_channels.row(t).iter().sum();
            assert!((row_heads - row_channels).abs() <= 1e-12);
        }
    }
}

#[test]
fn head_and_skip_complete_at_each_layer() {
    let enc = toy_encoder(3, 2, 16, 8);
    let tokens = random_tokens(&mut Rng::new(8), 10);
    let coarse = ig_head_levels(&enc, &tokens, 1, &[0, 1, 2], PathSpec { steps: 64, ..PathSpec::default() }).unwrap();
    let fine = ig_head_levels(&enc, &tokens, 1, &[0, 1, 2], PathSpec { steps: 512, ..PathSpec::default() }).unwrap();
    for (c, f) in coarse.iter().zip(&fine) {
        assert!(f.gap <= 1e-2, "layer {}: {}", f.layer, f.gap);
        assert!(f.gap < c.gap, "layer {}: {} vs {}", f.layer, f.gap, c.gap);
    }
    // the shared pass and the single-layer entry point agree
    let single = ig_head_level(&enc, &tokens, 1, 1, PathSpec { steps: 64, ..PathSpec::default() }).unwrap();
    assert_eq!(single, coarse[1]);
}

#[test]
fn zero_output_projection_routes_everything_through_skip() {
    let enc = toy_encoder(2, 2, 8, 9);
    let (cfg, mut w) = enc.into_parts();
    w.layers[1].wo.data_mut().fill(0.0);
    let enc = Encoder::new(cfg, w).unwrap();
    let tokens = random_tokens(&mut Rng::new(9), 6);
    let a = ig_head_level(&enc, &tokens, 0, 1, PathSpec { steps: 256, ..PathSpec::default() }).unwrap();
    assert!(a.head_map.data().iter().all(|&v| v == 0.0));
    assert!(a.skip_map.data().iter().any(|&v| v != 0.0));
    assert!(a.gap <= 1e-2);
}

#[test]
fn head_permutation_permutes_columns() {
    let enc = toy_encoder(2, 4, 16, 10);
    let tokens = random_tokens(&mut Rng::new(10), 7);
    let spec = PathSpec {
        steps: 8,
        ..PathSpec::default()
    };
    let a = ig_head_level(&enc, &tokens, 0, 0, spec).unwrap();
    let (cfg, mut w) = enc.into_parts();
    w.swap_heads(&cfg, 0, 1, 3);
    let swapped = Encoder::new(cfg, w).unwrap();
    let b = ig_head_level(&swapped, &tokens, 0, 0, spec).unwrap();
    for t in 0..tokens.len() {
        for (h, h2) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
            assert!((a.head_map.at(t, h) - b.head_map.at(t, h2)).abs() <= 1e-10);
        }
    }
}

#[test]
fn layer_out_of_range() {
    let enc = toy_encoder(2, 2, 8, 11);
    let tokens = random_tokens(&mut Rng::new(11), 4);
    assert!(ig_head_level(&enc, &tokens, 0, 2, PathSpec::default()).is_err());
}

#[test]
fn summed_map_matches_double_loop() {
    let mut rng = Rng::new(12);
    let maps: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[9, 4])).collect();
    let refs: Vec<(usize, &Tensor)> = vec![(2, &maps[2]), (0, &maps[0]), (1, &maps[1])];
    let s = assemble_summed_map("p", "c", &refs, 3).unwrap();
    for l in 0..3 {
        for h in 0..4 {
            let mut brute = 0.0;
            for t in 0..9 {
                brute += maps[l].at(t, h);
            }
            assert_eq!(s.values[l][h], brute);
        }
    }
    assert_eq!((s.n_layers(), s.n_heads()), (3, 4));
    assert!(assemble_summed_map("p", "c", &refs[..2], 3).is_err());
}

#[test]
fn summed_map_trivial_cases() {
    let single = Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap();
    let s = assemble_summed_map("p", "c", &[(0, &single)], 1).unwrap();
    assert_eq!(s.values, vec![vec![1.5, -2.0]]);
    let z = Tensor::zeros(&[5, 3]);
    let s = assemble_summed_map("p", "c", &[(0, &z), (1, &z)], 2).unwrap();
    assert!(s.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn record_json_round_trip() {
    let enc = toy_encoder(1, 2, 8, 13);
    let tokens = random_tokens(&mut Rng::new(13), 4);
    let spec = PathSpec {
        steps: 4,
        ..PathSpec::default()
    };
    let a = ig_head_level(&enc, &tokens, 0, 0, spec).unwrap();
    let r = AttributionRecord::from_head("p1", "pos", &tokens, spec, &a);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"kind\":\"head\"") && json.contains("\"layer\":0"));
    let back: AttributionRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.token_flags[0], TokenFlag::Cls);
    assert_eq!(*r.token_flags.last().unwrap(), TokenFlag::Sep);
    assert_eq!(r.values.len(), tokens.len());
    assert_eq!(r.values[0].len(), 2);
}
