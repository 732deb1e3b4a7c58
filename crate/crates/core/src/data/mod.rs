//! Protein records and their on-disk formats: FASTA sequences, and
//! tab-separated label, annotation and split tables.
//!
//! A dataset directory holds `sequences.fasta` plus optional `labels.tsv`,
//! `annotations.tsv` and `splits.tsv`.

mod fasta;
mod synth;
mod tsv;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fasta::{parse_fasta, write_fasta};
pub use synth::{generate_synthetic, synthetic_classes, MotifSpec, SplitFractions, SynthConfig};
pub use tsv::{
    parse_annotations, parse_labels, parse_splits, write_annotations, write_labels, write_splits, AnnotationTable,
};

pub const SEQUENCES_FILE: &str = "sequences.fasta";
pub const LABELS_FILE: &str = "labels.tsv";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

/// Per-residue annotation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationType {
    ActiveSite,
    BindingSite,
    Transmembrane,
    Motif,
    PrositePattern,
}

impl AnnotationType {
    pub const ALL: [AnnotationType; 5] = [
        AnnotationType::ActiveSite,
        AnnotationType::BindingSite,
        AnnotationType::Transmembrane,
        AnnotationType::Motif,
        AnnotationType::PrositePattern,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationType::ActiveSite => "active_site",
            AnnotationType::BindingSite => "binding_site",
            AnnotationType::Transmembrane => "transmembrane",
            AnnotationType::Motif => "motif",
            AnnotationType::PrositePattern => "prosite_pattern",
        }
    }
}

impl fmt::Display for AnnotationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnnotationType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown annotation type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinRecord {
    pub id: String,
    pub sequence: String,
    pub labels: BTreeSet<String>,
    /// One mask per annotation type, as long as the sequence.
    pub annotations: BTreeMap<AnnotationType, Vec<bool>>,
    pub split: Option<Split>,
}

impl ProteinRecord {
    pub fn new(id: impl Into<String>, sequence: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            sequence: sequence.into(),
            labels: BTreeSet::new(),
            annotations: BTreeMap::new(),
            split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<ProteinRecord>,
}

impl Dataset {
    pub fn new(records: Vec<ProteinRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProteinRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Sorted, deduplicated class ids over all records.
    pub fn class_vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| &r.labels).collect();
        set.into_iter().cloned().collect()
    }

    pub fn split(&self, split: Split) -> Vec<&ProteinRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    /// Reads a dataset directory. Only `sequences.fasta` is mandatory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(path, e)),
            }
        };
        let fasta = read(SEQUENCES_FILE)?
            .ok_or_else(|| Error::Input(format!("{} has no {SEQUENCES_FILE}", dir.display())))?;
        let mut records = parse_fasta(&fasta)?;
        let lengths: BTreeMap<String, usize> = records.iter().map(|r| (r.id.clone(), r.len())).collect();
        let ids: BTreeSet<String> = lengths.keys().cloned().collect();
        if ids.len() != records.len() {
            return Err(Error::Input("duplicate protein ids in FASTA".into()));
        }
        let mut labels = match read(LABELS_FILE)? {
            Some(t) => parse_labels(&t, &ids)?,
            None => BTreeMap::new(),
        };
        let mut annotations = match read(ANNOTATIONS_FILE)? {
            Some(t) => parse_annotations(&t, &lengths)?,
            None => BTreeMap::new(),
        };
        let splits = match read(SPLITS_FILE)? {
            Some(t) => parse_splits(&t, &ids)?,
            None => BTreeMap::new(),
        };
        for r in &mut records {
            r.labels = labels.remove(&r.id).unwrap_or_default();
            r.annotations = annotations.remove(&r.id).unwrap_or_default();
            r.split = splits.get(&r.id).copied();
            for mask in r.annotations.values() {
                debug_assert_eq!(mask.len(), r.len());
            }
        }
        Ok(Self { records })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, body: String| crate::io::write_atomic(&dir.join(name), body.as_bytes());
        write(SEQUENCES_FILE, write_fasta(&self.records))?;
        write(LABELS_FILE, write_labels(&self.records))?;
        write(ANNOTATIONS_FILE, write_annotations(&self.records))?;
        write(SPLITS_FILE, write_splits(&self.records))?;
        Ok(())
    }
}
