use serde::{Deserialize, Serialize};

use super::{CellStatus, Grid, SignificanceMatrix, MIN_N};
use crate::data::AnnotationType;
use crate::error::{Error, Result};
use crate::stats::{bh_adjust, t_test_one_sample, Alternative};

/// One correlation per protein between channel-summed embedding relevance
/// and the annotation mask, t-tested for a positive mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLevelTest {
    pub n: usize,
    pub status: CellStatus,
    pub mean_r: Option<f64>,
    pub statistic: Option<f64>,
    pub p_value: f64,
    /// Adjusted across the annotation types of the report.
    pub p_adjusted: f64,
    pub significant: bool,
}

impl EmbeddingLevelTest {
    pub fn new(rs: &[f64]) -> Self {
        let mean_r = (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64);
        let (status, statistic, p_value) = if rs.len() < MIN_N {
            (CellStatus::TooFew, None, 1.0)
        } else {
            match t_test_one_sample(rs, 0.0, Alternative::Greater) {
                Ok(t) => (CellStatus::Tested, Some(t.statistic), t.p_value),
                Err(_) => (CellStatus::Degenerate, None, 1.0),
            }
        };
        Self {
            n: rs.len(),
            status,
            mean_r,
            statistic,
            p_value,
            p_adjusted: p_value,
            significant: false,
        }
    }

    /// Benjamini-Hochberg over the types in the report.
    pub(super) fn adjust(types: &mut [TypeReport], alpha: f64) -> Result<()> {
        let raw: Vec<f64> = types.iter().map(|t| t.embedding.p_value).collect();
        let adj = bh_adjust(&raw)?;
        for (t, p) in types.iter_mut().zip(adj) {
            t.embedding.p_adjusted = p;
            t.embedding.significant = t.embedding.status == CellStatus::Tested && p < alpha;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub annotation_type: AnnotationType,
    /// Proteins with the class label and at least one annotated residue.
    pub n_proteins: usize,
    /// Proteins whose embedding-level correlation was undefined.
    pub n_undefined_embedding: usize,
    pub embedding: EmbeddingLevelTest,
    pub correlation: SignificanceMatrix,
    pub relevance: SignificanceMatrix,
    /// Correlation display masked by relevance significance.
    pub overlay: Grid<Option<f64>>,
    pub overlay_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedType {
    pub annotation_type: AnnotationType,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub class: String,
    pub alpha: f64,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub control_seed: Option<u64>,
    pub types: Vec<TypeReport>,
    pub skipped: Vec<SkippedType>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// CSV files as `(file name, contents)`: correlation significance,
    /// relevance significance and overlay for each annotation type.
    pub fn csv_files(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for t in &self.types {
            let k = t.annotation_type;
            out.push((format!("{k}.corr_sig.csv"), grid_csv(&t.correlation.display)));
            out.push((format!("{k}.relev_sig.csv"), grid_csv(&t.relevance.display)));
            out.push((format!("{k}.overlay.csv"), grid_csv(&t.overlay)));
        }
        out
    }

    pub fn type_report(&self, kind: AnnotationType) -> Result<&TypeReport> {
        self.types
            .iter()
            .find(|t| t.annotation_type == kind)
            .ok_or_else(|| Error::Input(format!("report has no results for {kind}")))
    }
}

/// Rows are layers, columns heads; blank cells are masked.
pub fn grid_csv(grid: &Grid<Option<f64>>) -> String {
    let n_heads = grid.first().map_or(0, Vec::len);
    let mut out = String::from("layer");
    for h in 0..n_heads {
        out.push_str(&format!(",head{h}"));
    }
    out.push('\n');
    for (l, row) in grid.iter().enumerate() {
        out.push_str(&l.to_string());
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}
