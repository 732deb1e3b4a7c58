use super::*;

fn blobs(n_per: usize, sep: f64, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for c in 0..2 {
        for _ in 0..n_per {
            rows.push((0..dim).map(|j| rng.normal() + if j == 0 { sep * c as f64 } else { 0.0 }).collect());
            truth.push(c);
        }
    }
    (rows, truth)
}

fn small_tsne(seed: u64) -> TsneConfig {
    TsneConfig {
        perplexity: 10.0,
        learning_rate: 50.0,
        seed,
        ..TsneConfig::default()
    }
}

#[test]
fn flatten_is_row_major_and_invertible() {
    let m = SummedMap {
        protein_id: "p".into(),
        class: "c".into(),
        values: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
    };
    let flat = flatten(std::slice::from_ref(&m)).unwrap();
    assert_eq!(flat.rows, vec![vec![1.0, 2.0, 3.0, 4.0]]);
    assert_eq!(unflatten(&flat), vec![m.clone()]);
    let mut other = m.clone();
    other.values.push(vec![5.0, 6.0]);
    assert!(flatten(&[m, other]).is_err());
    let empty = flatten(&[]).unwrap();
    assert!(empty.rows.is_empty());
    assert!(matches!(embed_maps(&[], &EmbeddingConfig::default()), Err(Error::Empty(_))));
}

#[test]
fn separated_blobs_stay_apart() {
    let (rows, truth) = blobs(30, 20.0, 5, 1);
    let out = tsne(&rows, &small_tsne(1)).unwrap();
    let pts: Vec<Vec<f64>> = out.points.iter().map(|p| p.to_vec()).collect();
    let cl = kmeans(&pts, 2, 5, 0).unwrap();
    assert!(rand_index(&cl.labels, &truth).unwrap() >= 0.95);
}

#[test]
fn output_is_centered_and_deterministic() {
    let (rows, _) = blobs(20, 4.0, 3, 3);
    let a = tsne(&rows, &small_tsne(3)).unwrap();
    let b = tsne(&rows, &small_tsne(3)).unwrap();
    assert_eq!(a, b);
    let scale = a.points.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max);
    for c in 0..2 {
        let m: f64 = a.points.iter().map(|p| p[c]).sum::<f64>() / a.points.len() as f64;
        assert!(m.abs() <= 1e-6 * scale);
    }
}

#[test]
fn duplicate_rows_land_together() {
    let (mut rows, _) = blobs(20, 4.0, 3, 4);
    rows.push(rows[5].clone());
    let out = tsne(&rows, &small_tsne(4)).unwrap();
    let scale = out.points.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max);
    let a = out.points[5];
    let b = out.points[rows.len() - 1];
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    assert!(d <= 1e-3 * scale, "{d} vs scale {scale}");
}

#[test]
fn tsne_preconditions() {
    let (rows, _) = blobs(10, 4.0, 3, 5);
    assert!(matches!(tsne(&rows, &small_tsne(0)), Err(Error::Config(_))));
    let same = vec![vec![1.0, 2.0]; 40];
    assert!(matches!(tsne(&same, &small_tsne(0)), Err(Error::Input(_))));
}

#[test]
fn planted_classes_are_recovered() {
    let maps = synthetic_summed_maps(&SyntheticMapsConfig::default()).unwrap();
    assert_eq!(maps.len(), 90);
    let cfg = EmbeddingConfig {
        tsne: TsneConfig {
            perplexity: 29.0,
            learning_rate: TsneConfig::auto_learning_rate(90, 12.0),
            ..TsneConfig::default()
        },
        ..EmbeddingConfig::default()
    };
    let emb = embed_maps(&maps, &cfg).unwrap();
    assert_eq!(emb.pca.scores[0].len(), 50);
    assert!(cluster_agreement(&emb, 10, 0).unwrap() >= 0.9);
    assert_eq!(emb.tsne.kl.len(), 1000);
    for w in emb.tsne.kl[500..].windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    let csv = scatter_csv(&emb.scatter().unwrap());
    assert_eq!(csv.lines().count(), 91);
    assert_eq!(csv, scatter_csv(&embed_maps(&maps, &cfg).unwrap().scatter().unwrap()));
}
