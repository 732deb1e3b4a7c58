//! Population statistics over per-protein attribution maps.
//!
//! For a class and an annotation type, each eligible protein contributes a
//! `n_layers × n_heads` matrix of point-biserial correlations between head
//! relevance and its annotation mask, and a matrix of sequence-summed head
//! relevance. Cells are tested across proteins (one-sided t-test on the
//! correlations, one-sided Wilcoxon on the relevances), adjusted with
//! Benjamini-Hochberg over all `n_layers · n_heads` cells, thresholded, and
//! overlaid.

mod report;

use serde::{Deserialize, Serialize};

use crate::attribution::{
    assemble_summed_map, ig_embedding_between, ig_head_levels_between, baseline_embedding, PathSpec, SummedMap, TokenFlag,
};
use crate::data::{AnnotationType, ProteinRecord, Split};
use crate::error::{Error, Result};
use crate::model::tokenizer::cropped_len;
use crate::model::{tokenize, Encoder};
use crate::rng::Rng;
use crate::stats::{bh_adjust, neglog10_threshold, point_biserial, t_test_one_sample, wilcoxon_signed_rank, Alternative};

pub use report::{grid_csv, AnalysisReport, EmbeddingLevelTest, SkippedType, TypeReport};

/// Row per layer, column per head.
pub type Grid<T> = Vec<Vec<T>>;

/// Fewest defined correlations for which a cell is t-tested.
pub const MIN_N: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub protein_id: String,
    pub annotation_type: AnnotationType,
    /// `None` where the correlation is undefined.
    pub values: Grid<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    T,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Tested,
    /// Fewer than the minimum number of samples.
    TooFew,
    /// No spread in the samples (constant values, or all zero for Wilcoxon).
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub test: TestKind,
    pub alpha: f64,
    /// Number of hypotheses in the BH family (`n_layers · n_heads`).
    pub family_size: usize,
    pub n_proteins: usize,
    /// Samples entering each cell's test.
    pub n: Grid<usize>,
    pub status: Grid<CellStatus>,
    pub statistic: Grid<Option<f64>>,
    /// 1 for untested cells.
    pub p_raw: Grid<f64>,
    pub p_adjusted: Grid<f64>,
    pub significant: Grid<bool>,
    /// `-log10(p_adjusted)` where significant.
    pub display: Grid<Option<f64>>,
}

impl SignificanceMatrix {
    pub fn n_layers(&self) -> usize {
        self.p_raw.len()
    }

    pub fn n_heads(&self) -> usize {
        self.p_raw.first().map_or(0, Vec::len)
    }

    pub fn count_significant(&self) -> usize {
        self.significant.iter().flatten().filter(|&&s| s).count()
    }

    pub fn count_tested(&self) -> usize {
        self.status.iter().flatten().filter(|&&s| s == CellStatus::Tested).count()
    }
}

fn to_grid<T: Clone>(flat: &[T], n_heads: usize) -> Grid<T> {
    flat.chunks(n_heads).map(<[T]>::to_vec).collect()
}

/// Per-cell test results in row-major order; untested cells enter BH with p = 1.
fn finish(
    test: TestKind,
    alpha: f64,
    n_proteins: usize,
    n_layers: usize,
    n_heads: usize,
    cells: Vec<(usize, CellStatus, Option<f64>, f64)>,
) -> Result<SignificanceMatrix> {
    let p_raw: Vec<f64> = cells.iter().map(|c| c.3).collect();
    let p_adj = bh_adjust(&p_raw)?;
    let (display, significant) = neglog10_threshold(&p_adj, alpha);
    let significant: Vec<bool> = significant
        .iter()
        .zip(&cells)
        .map(|(&s, c)| s && c.1 == CellStatus::Tested)
        .collect();
    let display: Vec<Option<f64>> = display.into_iter().zip(&significant).map(|(d, &s)| d.filter(|_| s)).collect();
    Ok(SignificanceMatrix {
        test,
        alpha,
        family_size: n_layers * n_heads,
        n_proteins,
        n: to_grid(&cells.iter().map(|c| c.0).collect::<Vec<_>>(), n_heads),
        status: to_grid(&cells.iter().map(|c| c.1).collect::<Vec<_>>(), n_heads),
        statistic: to_grid(&cells.iter().map(|c| c.2).collect::<Vec<_>>(), n_heads),
        p_raw: to_grid(&p_raw, n_heads),
        p_adjusted: to_grid(&p_adj, n_heads),
        significant: to_grid(&significant, n_heads),
        display: to_grid(&display, n_heads),
    })
}

/// Values of `per_token` at residue positions, in order.
pub fn residue_values(per_token: &[f64], flags: &[TokenFlag]) -> Vec<f64> {
    per_token
        .iter()
        .zip(flags)
        .filter(|(_, f)| **f == TokenFlag::Residue)
        .map(|(v, _)| *v)
        .collect()
}

/// Truncates an annotation mask to the residues the tokenizer keeps.
pub fn crop_mask(mask: &[bool], n_residues: usize) -> Result<&[bool]> {
    if mask.len() == n_residues || (mask.len() > n_residues && n_residues == cropped_len(mask.len())) {
        Ok(&mask[..n_residues])
    } else {
        Err(Error::Input(format!(
            "annotation mask of length {} does not match {n_residues} attributed residues",
            mask.len()
        )))
    }
}

/// Point-biserial correlation of each head's residue relevance with `mask`.
///
/// `head_maps[ℓ]` is the `seq × n_heads` map of layer `ℓ`, special-token rows
/// included; `flags` marks which rows are residues.
pub fn correlate_protein(
    protein_id: &str,
    head_maps: &[Grid<f64>],
    flags: &[TokenFlag],
    mask: &[bool],
    annotation_type: AnnotationType,
) -> Result<CorrelationMatrix> {
    let n_res = flags.iter().filter(|&&f| f == TokenFlag::Residue).count();
    let mask = crop_mask(mask, n_res)?;
    let values = head_maps
        .iter()
        .enumerate()
        .map(|(l, map)| {
            if map.len() != flags.len() {
                return Err(Error::Input(format!(
                    "{protein_id}: layer {l} map has {} rows for {} tokens",
                    map.len(),
                    flags.len()
                )));
            }
            let n_heads = map.first().map_or(0, Vec::len);
            (0..n_heads)
                .map(|h| {
                    let column: Vec<f64> = map.iter().map(|row| row[h]).collect();
                    point_biserial(&residue_values(&column, flags), mask)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Grid<_>>>()?;
    Ok(CorrelationMatrix {
        protein_id: protein_id.to_string(),
        annotation_type,
        values,
    })
}

/// One-sided t-test (mean correlation > 0) per cell over defined correlations.
pub fn population_correlation_significance(
    matrices: &[CorrelationMatrix],
    n_layers: usize,
    n_heads: usize,
    alpha: f64,
) -> Result<SignificanceMatrix> {
    let mut cells = Vec::with_capacity(n_layers * n_heads);
    for l in 0..n_layers {
        for h in 0..n_heads {
            let rs: Vec<f64> = matrices
                .iter()
                .filter_map(|m| m.values.get(l).and_then(|r| r.get(h)).copied().flatten())
                .collect();
            cells.push(if rs.len() < MIN_N {
                (rs.len(), CellStatus::TooFew, None, 1.0)
            } else {
                match t_test_one_sample(&rs, 0.0, Alternative::Greater) {
                    Ok(t) => (rs.len(), CellStatus::Tested, Some(t.statistic), t.p_value),
                    Err(Error::Stats(_)) => (rs.len(), CellStatus::Degenerate, None, 1.0),
                    Err(e) => return Err(e),
                }
            });
        }
    }
    if cells.iter().all(|c| c.1 != CellStatus::Tested) {
        return Err(Error::Empty("no (layer, head) cell has enough defined correlations to test".into()));
    }
    finish(TestKind::T, alpha, matrices.len(), n_layers, n_heads, cells)
}

/// One-sided Wilcoxon signed-rank test (relevance > 0) per cell.
pub fn population_relevance_significance(maps: &[SummedMap], alpha: f64) -> Result<SignificanceMatrix> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("no summed maps for the relevance test".into()))?;
    let (n_layers, n_heads) = (first.n_layers(), first.n_heads());
    if let Some(bad) = maps.iter().find(|m| m.n_layers() != n_layers || m.n_heads() != n_heads) {
        return Err(Error::Input(format!("summed map of {} has a different shape", bad.protein_id)));
    }
    let mut cells = Vec::with_capacity(n_layers * n_heads);
    for l in 0..n_layers {
        for h in 0..n_heads {
            let v: Vec<f64> = maps.iter().map(|m| m.values[l][h]).collect();
            cells.push(match wilcoxon_signed_rank(&v, Alternative::Greater) {
                Ok(t) => (t.n, CellStatus::Tested, Some(t.statistic), t.p_value),
                Err(Error::Stats(_)) => (0, CellStatus::Degenerate, None, 1.0),
                Err(e) => return Err(e),
            });
        }
    }
    finish(TestKind::Wilcoxon, alpha, maps.len(), n_layers, n_heads, cells)
}

/// A's display where B is significant, blank elsewhere.
pub fn overlay(a: &SignificanceMatrix, b: &SignificanceMatrix) -> Result<Grid<Option<f64>>> {
    if a.n_layers() != b.n_layers() || a.n_heads() != b.n_heads() {
        return Err(Error::Dimension {
            op: "overlay",
            left: vec![a.n_layers(), a.n_heads()],
            right: vec![b.n_layers(), b.n_heads()],
        });
    }
    Ok(a.display
        .iter()
        .zip(&b.significant)
        .map(|(row, mask)| row.iter().zip(mask).map(|(d, &m)| d.filter(|_| m)).collect())
        .collect())
}

/// Rotates a mask right by `offset` positions.
pub fn rotate_mask(mask: &[bool], offset: usize) -> Vec<bool> {
    let n = mask.len();
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|i| mask[(i + n - offset % n) % n]).collect()
}

/// Everything the statistics need from one protein's attributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProteinAttributions {
    pub protein_id: String,
    pub token_flags: Vec<TokenFlag>,
    /// Channel-summed embedding relevance per token.
    pub embedding_relevance: Vec<f64>,
    /// Per layer, `seq × n_heads`.
    pub head_maps: Vec<Grid<f64>>,
    pub summed: SummedMap,
    /// Worst completeness gap over the embedding and head-level integrals.
    pub max_gap: f64,
}

/// Embedding-level IG plus head-level IG at every layer for one protein.
pub fn attribute_protein(
    encoder: &Encoder,
    record: &ProteinRecord,
    class_index: usize,
    class: &str,
    spec: PathSpec,
) -> Result<ProteinAttributions> {
    spec.validate()?;
    let tokens = tokenize(&record.sequence)?;
    let x = encoder.embed(&tokens)?;
    let x0 = baseline_embedding(encoder, tokens.len(), spec.baseline)?;
    let emb = ig_embedding_between(encoder, &x, &x0, class_index, spec.steps)?;
    let layers: Vec<usize> = (0..encoder.config().n_layers).collect();
    let heads = ig_head_levels_between(encoder, &x, &x0, class_index, spec.steps, &layers)?;
    let refs: Vec<(usize, &crate::tensor::Tensor)> = heads.iter().map(|a| (a.layer, &a.head_map)).collect();
    let summed = assemble_summed_map(&record.id, class, &refs, layers.len())?;
    let max_gap = heads.iter().map(|a| a.gap).fold(emb.gap, f64::max);
    Ok(ProteinAttributions {
        protein_id: record.id.clone(),
        token_flags: crate::attribution::token_flags(&tokens),
        embedding_relevance: emb.token_relevance,
        head_maps: heads.iter().map(|a| a.head_map.to_rows()).collect(),
        summed,
        max_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub alpha: f64,
    /// Rotate each protein's mask by a random nonzero offset (negative control).
    pub control_seed: Option<u64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            control_seed: None,
        }
    }
}

/// Test-split proteins carrying `class`, or all proteins carrying it when the
/// dataset has no split assignments.
pub fn class_candidates<'a>(records: &'a [ProteinRecord], class: &str) -> Vec<&'a ProteinRecord> {
    let any_split = records.iter().any(|r| r.split.is_some());
    let mut out: Vec<&ProteinRecord> = records
        .iter()
        .filter(|r| (!any_split || r.split == Some(Split::Test)) && r.labels.contains(class))
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// The cropped mask of `record` for `kind` if it has at least one annotated residue.
pub fn eligible_mask(record: &ProteinRecord, kind: AnnotationType) -> Option<Vec<bool>> {
    let mask = record.annotations.get(&kind)?;
    let n = cropped_len(mask.len());
    let cropped = &mask[..n];
    cropped.iter().any(|&b| b).then(|| cropped.to_vec())
}

/// Aggregates precomputed attributions into a report.
///
/// `attributions` must be sorted by protein id; proteins without an entry in
/// `records` are ignored.
pub fn analyze_attributions(
    records: &[&ProteinRecord],
    attributions: &[ProteinAttributions],
    class: &str,
    types: &[AnnotationType],
    options: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let by_id: std::collections::BTreeMap<&str, &ProteinAttributions> =
        attributions.iter().map(|a| (a.protein_id.as_str(), a)).collect();
    let first = attributions
        .first()
        .ok_or_else(|| Error::Empty(format!("no attributions for class {class:?}")))?;
    let (n_layers, n_heads) = (first.summed.n_layers(), first.summed.n_heads());

    let mut type_reports = Vec::new();
    let mut skipped = Vec::new();
    for &kind in types {
        let mut matrices = Vec::new();
        let mut summed = Vec::new();
        let mut emb_r = Vec::new();
        let mut n_eligible = 0;
        for r in records {
            let (Some(a), Some(mut mask)) = (by_id.get(r.id.as_str()), eligible_mask(r, kind)) else {
                continue;
            };
            n_eligible += 1;
            if let Some(seed) = options.control_seed {
                let mut rng = Rng::new(seed).child(crate::rng::splitmix64(hash_id(&r.id)) ^ kind as u64);
                let offset = 1 + rng.below(mask.len().max(2) - 1);
                mask = rotate_mask(&mask, offset);
            }
            if a.summed.n_layers() != n_layers || a.summed.n_heads() != n_heads {
                return Err(Error::Input(format!("{}: attribution shape differs from other proteins", r.id)));
            }
            matrices.push(correlate_protein(&r.id, &a.head_maps, &a.token_flags, &mask, kind)?);
            summed.push(a.summed.clone());
            let res = residue_values(&a.embedding_relevance, &a.token_flags);
            if let Some(rv) = point_biserial(&res, crop_mask(&mask, res.len())?)? {
                emb_r.push(rv);
            }
        }
        if n_eligible == 0 {
            let reason = format!("no attributed test proteins of class {class:?} with a {kind} annotation");
            log::warn!("{reason}");
            skipped.push(SkippedType {
                annotation_type: kind,
                reason,
            });
            continue;
        }
        let correlation = match population_correlation_significance(&matrices, n_layers, n_heads, options.alpha) {
            Ok(m) => m,
            Err(Error::Empty(reason)) => {
                log::warn!("{kind}: {reason}");
                skipped.push(SkippedType {
                    annotation_type: kind,
                    reason,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let relevance = population_relevance_significance(&summed, options.alpha)?;
        let overlay = overlay(&correlation, &relevance)?;
        let embedding = EmbeddingLevelTest::new(&emb_r);
        type_reports.push(TypeReport {
            annotation_type: kind,
            n_proteins: n_eligible,
            n_undefined_embedding: n_eligible - emb_r.len(),
            embedding,
            overlay_count: overlay.iter().flatten().filter(|v| v.is_some()).count(),
            correlation,
            relevance,
            overlay,
        });
    }
    EmbeddingLevelTest::adjust(&mut type_reports, options.alpha)?;
    Ok(AnalysisReport {
        class: class.to_string(),
        alpha: options.alpha,
        n_layers,
        n_heads,
        control_seed: options.control_seed,
        types: type_reports,
        skipped,
    })
}

fn hash_id(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Attributes every eligible protein and aggregates the results. Work is
/// spread over `jobs` threads; results are merged in protein-id order.
pub fn run_class_analysis(
    encoder: &Encoder,
    records: &[ProteinRecord],
    class: &str,
    class_index: usize,
    types: &[AnnotationType],
    spec: PathSpec,
    options: &AnalysisOptions,
    jobs: usize,
) -> Result<(AnalysisReport, Vec<ProteinAttributions>)> {
    let candidates: Vec<&ProteinRecord> = class_candidates(records, class)
        .into_iter()
        .filter(|r| types.iter().any(|&t| eligible_mask(r, t).is_some()))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Empty(format!(
            "no test proteins of class {class:?} carry any of the requested annotation types"
        )));
    }
    let attributions = parallel_map(jobs, &candidates, |r| attribute_protein(encoder, r, class_index, class, spec))?;
    let report = analyze_attributions(&candidates, &attributions, class, types, options)?;
    Ok((report, attributions))
}

/// Maps `f` over `items` with a pool of `jobs` threads, preserving order.
pub fn parallel_map<T: Sync, U: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}
