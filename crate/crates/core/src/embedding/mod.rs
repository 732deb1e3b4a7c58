//! Low-dimensional views of summed attribution maps: flattening, PCA,
//! exact t-SNE, k-means checks and scatter output.

mod kmeans;
mod pca;
mod scatter;
mod tsne;

pub use kmeans::{kmeans, rand_index, Clustering};
pub use pca::{pca, Pca};
pub use scatter::{class_colors, emit_scatter, scatter_csv, scatter_points, scatter_svg, ScatterPoint, PALETTE};
pub use tsne::{tsne, TsneConfig, TsneInit, TsneResult};

use serde::{Deserialize, Serialize};

use crate::attribution::SummedMap;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub pca_dims: usize,
    pub tsne: TsneConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            pca_dims: 50,
            tsne: TsneConfig::default(),
        }
    }
}

/// One row per map, layers major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMaps {
    pub protein_ids: Vec<String>,
    pub classes: Vec<String>,
    pub n_layers: usize,
    pub n_heads: usize,
    pub rows: Vec<Vec<f64>>,
}

pub fn flatten(maps: &[SummedMap]) -> Result<FlatMaps> {
    let (n_layers, n_heads) = maps.first().map_or((0, 0), |m| (m.n_layers(), m.n_heads()));
    let mut rows = Vec::with_capacity(maps.len());
    for m in maps {
        if m.values.len() != n_layers || m.values.iter().any(|r| r.len() != n_heads) {
            return Err(Error::Input(format!(
                "summed map for {} does not have shape {n_layers}x{n_heads}",
                m.protein_id
            )));
        }
        rows.push(m.values.concat());
    }
    Ok(FlatMaps {
        protein_ids: maps.iter().map(|m| m.protein_id.clone()).collect(),
        classes: maps.iter().map(|m| m.class.clone()).collect(),
        n_layers,
        n_heads,
        rows,
    })
}

pub fn unflatten(flat: &FlatMaps) -> Vec<SummedMap> {
    flat.rows
        .iter()
        .zip(&flat.protein_ids)
        .zip(&flat.classes)
        .map(|((row, id), class)| SummedMap {
            protein_id: id.clone(),
            class: class.clone(),
            values: row.chunks(flat.n_heads.max(1)).map(<[f64]>::to_vec).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEmbedding {
    pub flat: FlatMaps,
    pub pca: Pca,
    pub tsne: TsneResult,
}

impl MapEmbedding {
    pub fn scatter(&self) -> Result<Vec<ScatterPoint>> {
        scatter_points(&self.flat.protein_ids, &self.flat.classes, &self.tsne.points)
    }
}

/// Flatten, reduce with PCA, then embed in two dimensions with t-SNE.
pub fn embed_maps(maps: &[SummedMap], config: &EmbeddingConfig) -> Result<MapEmbedding> {
    if maps.is_empty() {
        return Err(Error::Empty("no summed maps to embed".into()));
    }
    let flat = flatten(maps)?;
    let pca = pca(&flat.rows, config.pca_dims)?;
    let tsne = tsne(&pca.scores, &config.tsne)?;
    Ok(MapEmbedding { flat, pca, tsne })
}

/// Rand index of k-means (k = number of distinct labels) on the t-SNE
/// points against the map labels.
pub fn cluster_agreement(embedding: &MapEmbedding, restarts: usize, seed: u64) -> Result<f64> {
    let mut distinct = embedding.flat.classes.clone();
    distinct.sort();
    distinct.dedup();
    let pts: Vec<Vec<f64>> = embedding.tsne.points.iter().map(|p| p.to_vec()).collect();
    let cl = kmeans(&pts, distinct.len(), restarts, seed)?;
    rand_index(&cl.labels, &embedding.flat.classes)
}

/// Summed maps drawn from planted class patterns: each class raises a
/// random set of cells by `amplitude` over unit Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticMapsConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub cells_per_pattern: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticMapsConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            per_class: 30,
            n_layers: 30,
            n_heads: 16,
            cells_per_pattern: 40,
            amplitude: 3.0,
            seed: 0,
        }
    }
}

pub fn synthetic_summed_maps(cfg: &SyntheticMapsConfig) -> Result<Vec<SummedMap>> {
    let cells = cfg.n_layers * cfg.n_heads;
    if cfg.cells_per_pattern > cells || cfg.n_classes == 0 {
        return Err(Error::Config(format!(
            "{} classes with {} pattern cells on a {}x{} grid",
            cfg.n_classes, cfg.cells_per_pattern, cfg.n_layers, cfg.n_heads
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut pattern_rng = root.child(0);
    let patterns: Vec<Vec<usize>> = (0..cfg.n_classes)
        .map(|_| {
            let mut idx: Vec<usize> = (0..cells).collect();
            pattern_rng.shuffle(&mut idx);
            idx.truncate(cfg.cells_per_pattern);
            idx
        })
        .collect();
    let mut noise = root.child(1);
    let mut maps = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for (c, pattern) in patterns.iter().enumerate() {
        for i in 0..cfg.per_class {
            let mut flat: Vec<f64> = (0..cells).map(|_| noise.normal()).collect();
            for &cell in pattern {
                flat[cell] += cfg.amplitude;
            }
            maps.push(SummedMap {
                protein_id: format!("map{c}_{i:03}"),
                class: format!("class{c}"),
                values: flat.chunks(cfg.n_heads).map(<[f64]>::to_vec).collect(),
            });
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests;
