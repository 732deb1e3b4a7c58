//! Planted-motif corpus: uniform random sequences where a class is caused by
//! an inserted motif whose span is also the ground-truth `motif` annotation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AnnotationType, Dataset, ProteinRecord, Split};
use crate::error::{Error, Result};
use crate::model::tokenizer::AMINO_ACIDS;
use crate::rng::Rng;

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub class_id: String,
    pub motif: String,
    /// Fraction of proteins that carry the motif (exact count, rounded).
    pub insertion_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_proteins: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub motifs: Vec<MotifSpec>,
    /// Label given to proteins that carry no motif.
    pub negative_label: Option<String>,
    pub seed: u64,
    pub split_fractions: SplitFractions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_proteins: 2000,
            min_len: 12,
            max_len: 20,
            motifs: vec![MotifSpec {
                class_id: "pos".into(),
                motif: "HDC".into(),
                insertion_probability: 0.5,
            }],
            negative_label: Some("neg".into()),
            seed: 42,
            split_fractions: SplitFractions::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_proteins == 0 {
            return bad("n_proteins must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if self.motifs.is_empty() {
            return bad("at least one motif is required".into());
        }
        let mut total = 0;
        for m in &self.motifs {
            if m.motif.is_empty() {
                return bad(format!("class {:?} has an empty motif", m.class_id));
            }
            if let Some(c) = m.motif.chars().find(|c| !AMINO_ACIDS.contains(*c)) {
                return bad(format!("motif {:?} contains non-standard residue {c:?}", m.motif));
            }
            if m.motif.len() > self.min_len {
                return bad(format!(
                    "motif {:?} is longer than the minimum sequence length {}",
                    m.motif, self.min_len
                ));
            }
            if !(0.0..=1.0).contains(&m.insertion_probability) {
                return bad(format!("insertion probability {} outside [0, 1]", m.insertion_probability));
            }
            total += m.motif.len();
        }
        if total > self.min_len {
            return bad("motifs cannot all fit in the shortest sequence".into());
        }
        for m in &self.motifs {
            for o in &self.motifs {
                if m.motif != o.motif && o.motif.contains(&m.motif) {
                    return bad(format!("motif {:?} occurs inside motif {:?}", m.motif, o.motif));
                }
            }
        }
        let f = self.split_fractions;
        if [f.train, f.valid, f.test].iter().any(|&x| !(0.0..=1.0).contains(&x))
            || (f.train + f.valid + f.test - 1.0).abs() > 1e-9
        {
            return bad("split fractions must be in [0, 1] and sum to 1".into());
        }
        Ok(())
    }
}

fn count_occurrences(seq: &[u8], motif: &[u8]) -> usize {
    seq.windows(motif.len()).filter(|w| *w == motif).count()
}

/// Exactly `k` indices out of `n`, chosen uniformly.
fn choose(rng: &mut Rng, n: usize, k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut out = vec![false; n];
    for &i in &order[..k] {
        out[i] = true;
    }
    out
}

/// Generates a dataset deterministically from `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_proteins;
    let alphabet = AMINO_ACIDS.as_bytes();
    let root = Rng::new(config.seed);

    let mut assign_rng = root.child(1);
    let carries: Vec<Vec<bool>> = config
        .motifs
        .iter()
        .map(|m| choose(&mut assign_rng, n, (m.insertion_probability * n as f64).round() as usize))
        .collect();

    let mut seq_rng = root.child(2);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let assigned: Vec<usize> = (0..config.motifs.len()).filter(|&k| carries[k][i]).collect();
        let len = seq_rng.range_inclusive(config.min_len, config.max_len);
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let mut seq: Vec<u8> = (0..len).map(|_| alphabet[seq_rng.below(alphabet.len())]).collect();
            let mut spans = Vec::new();
            let mut occupied = vec![false; len];
            let mut placed = true;
            for &k in &assigned {
                let motif = config.motifs[k].motif.as_bytes();
                let start = seq_rng.below(len - motif.len() + 1);
                if occupied[start..start + motif.len()].iter().any(|&o| o) {
                    placed = false;
                    break;
                }
                occupied[start..start + motif.len()].fill(true);
                seq[start..start + motif.len()].copy_from_slice(motif);
                spans.push((k, start));
            }
            if !placed {
                continue;
            }
            let clean = config.motifs.iter().enumerate().all(|(k, m)| {
                let want = usize::from(assigned.contains(&k));
                count_occurrences(&seq, m.motif.as_bytes()) == want
            });
            if clean {
                accepted = Some((seq, spans));
                break;
            }
        }
        let (seq, spans) = accepted
            .ok_or_else(|| Error::Config(format!("could not place motifs in protein {i} after {MAX_REJECTIONS} tries")))?;

        let mut record = ProteinRecord::new(format!("syn{i:05}"), String::from_utf8(seq).expect("ascii"));
        let mut mask = vec![false; len];
        for &(k, start) in &spans {
            mask[start..start + config.motifs[k].motif.len()].fill(true);
            record.labels.insert(config.motifs[k].class_id.clone());
        }
        if record.labels.is_empty() {
            if let Some(neg) = &config.negative_label {
                record.labels.insert(neg.clone());
            }
        }
        if !spans.is_empty() {
            record.annotations.insert(AnnotationType::Motif, mask);
        }
        records.push(record);
    }

    let f = config.split_fractions;
    let n_train = (f.train * n as f64).round() as usize;
    let n_valid = ((f.valid * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    root.child(3).shuffle(&mut order);
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        });
    }
    Ok(Dataset::new(records))
}

/// Class ids produced by a configuration, sorted.
pub fn synthetic_classes(config: &SynthConfig) -> Vec<String> {
    let mut set: BTreeSet<String> = config.motifs.iter().map(|m| m.class_id.clone()).collect();
    set.extend(config.negative_label.clone());
    set.into_iter().collect()
}
