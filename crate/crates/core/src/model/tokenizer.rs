//! Fixed amino-acid vocabulary.
//!
//! | id | token |
//! |----|-------|
//! | 0  | `[PAD]` |
//! | 1  | `[UNK]` (ambiguity codes B, Z, X, U, O) |
//! | 2  | `[CLS]` |
//! | 3  | `[SEP]` |
//! | 4..=23 | `A C D E F G H I K L M N P Q R S T V W Y` in that order |
//!
//! Lowercase residues are accepted and treated as uppercase.

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const VOCAB_SIZE: usize = 24;
/// Residues beyond this many are cropped before tokenization.
pub const MAX_RESIDUES: usize = 1000;

pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

pub fn residue_token(ch: char) -> Option<u32> {
    let up = ch.to_ascii_uppercase();
    if let Some(i) = AMINO_ACIDS.find(up) {
        return Some(4 + i as u32);
    }
    matches!(up, 'B' | 'Z' | 'X' | 'U' | 'O').then_some(UNK)
}

/// `[CLS] residues… [SEP]`, cropped to [`MAX_RESIDUES`] residues.
/// Positions in errors are 1-based.
pub fn tokenize(sequence: &str) -> Result<Vec<u32>> {
    if sequence.is_empty() {
        return Err(Error::Input("empty sequence".into()));
    }
    let mut tokens = Vec::with_capacity(sequence.len().min(MAX_RESIDUES) + 2);
    tokens.push(CLS);
    for (i, ch) in sequence.chars().enumerate() {
        let tok = residue_token(ch).ok_or(Error::IllegalResidue { ch, position: i + 1 })?;
        if i < MAX_RESIDUES {
            tokens.push(tok);
        }
    }
    tokens.push(SEP);
    Ok(tokens)
}

/// Residue count after cropping.
pub fn cropped_len(sequence_len: usize) -> usize {
    sequence_len.min(MAX_RESIDUES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_residue() {
        let t = tokenize("M").unwrap();
        assert_eq!(t, vec![CLS, residue_token('M').unwrap(), SEP]);
    }

    #[test]
    fn long_sequences_are_cropped() {
        let s: String = std::iter::repeat("ACDEFGHIKL").take(150).collect();
        assert_eq!(s.len(), 1500);
        assert_eq!(tokenize(&s).unwrap().len(), 1002);
    }

    #[test]
    fn illegal_character_position() {
        match tokenize("A?") {
            Err(Error::IllegalResidue { ch: '?', position: 2 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(tokenize("").is_err());
    }

    #[test]
    fn ambiguity_codes_map_to_unknown() {
        assert_eq!(tokenize("BZXUO").unwrap()[1..6], [UNK; 5]);
        assert_eq!(residue_token('a'), residue_token('A'));
    }

    proptest! {
        #[test]
        fn cropping_is_prefix_invariant(extra in 1usize..300, seed in 0u64..1000) {
            let mut rng = crate::rng::Rng::new(seed);
            let s: String = (0..MAX_RESIDUES + extra)
                .map(|_| AMINO_ACIDS.as_bytes()[rng.below(20)] as char)
                .collect();
            prop_assert_eq!(tokenize(&s).unwrap(), tokenize(&s[..MAX_RESIDUES]).unwrap());
        }
    }
}
