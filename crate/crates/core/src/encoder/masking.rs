use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    /// Every selected position becomes the mask token.
    #[default]
    PureMask,
    /// 80% mask token, 10% random vocabulary id, 10% unchanged.
    Bert801010,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::PureMask => "pure-mask",
            MaskStrategy::Bert801010 => "bert-80-10-10",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure-mask" => Ok(MaskStrategy::PureMask),
            "bert-80-10-10" => Ok(MaskStrategy::Bert801010),
            other => Err(Error::config(format!(
                "unknown mask strategy {other:?} (expected pure-mask or bert-80-10-10)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Replacement {
    Masked,
    Random,
    Kept,
}

/// A padded batch with the positions chosen for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// Rows padded with `pad_id` to the longest sequence.
    pub sequences: Vec<Vec<usize>>,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
    pub mask_positions: Vec<Vec<usize>>,
    pub labels: Vec<Vec<usize>>,
    pub replacement_kinds: Vec<Vec<Replacement>>,
    pub pad_id: usize,
    pub mask_id: usize,
}

impl MaskedBatch {
    pub fn num_masked(&self) -> usize {
        self.mask_positions.iter().map(Vec::len).sum()
    }

    /// The unpadded row `i`.
    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.sequences[i][..self.lengths[i]]
    }
}

/// Selects each non-padding position independently with probability
/// `mask_rate` and replaces it according to `strategy`. Vocabulary ids are
/// `0..vocab_size`; padding is `vocab_size` and the mask token `vocab_size + 1`.
pub fn mask_tokens(
    batch: &[&[usize]],
    vocab_size: usize,
    mask_rate: f64,
    strategy: MaskStrategy,
    seed: u64,
) -> Result<MaskedBatch> {
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::config(format!("mask rate {mask_rate} outside [0, 1]")));
    }
    let pad_id = vocab_size;
    let mask_id = vocab_size + 1;
    if let Some(i) = batch.iter().position(|s| s.is_empty()) {
        return Err(Error::config(format!("sequence {i} in masking batch has no tokens")));
    }
    if let Some(&bad) = batch.iter().flat_map(|s| s.iter()).find(|&&t| t >= vocab_size) {
        return Err(Error::config(format!("token id {bad} outside vocabulary of size {vocab_size}")));
    }
    let mut rng = util::seeded(seed);
    let width = batch.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = MaskedBatch {
        sequences: Vec::with_capacity(batch.len()),
        lengths: Vec::with_capacity(batch.len()),
        mask_positions: Vec::with_capacity(batch.len()),
        labels: Vec::with_capacity(batch.len()),
        replacement_kinds: Vec::with_capacity(batch.len()),
        pad_id,
        mask_id,
    };
    for seq in batch {
        let mut row = seq.to_vec();
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        let mut kinds = Vec::new();
        for (i, tok) in row.iter_mut().enumerate() {
            if rng.random::<f64>() >= mask_rate {
                continue;
            }
            positions.push(i);
            labels.push(*tok);
            let kind = match strategy {
                MaskStrategy::PureMask => Replacement::Masked,
                MaskStrategy::Bert801010 => {
                    let u: f64 = rng.random();
                    if u < 0.8 {
                        Replacement::Masked
                    } else if u < 0.9 {
                        Replacement::Random
                    } else {
                        Replacement::Kept
                    }
                }
            };
            match kind {
                Replacement::Masked => *tok = mask_id,
                Replacement::Random => *tok = rng.random_range(0..vocab_size),
                Replacement::Kept => {}
            }
            kinds.push(kind);
        }
        out.lengths.push(row.len());
        row.resize(width, pad_id);
        out.sequences.push(row);
        out.mask_positions.push(positions);
        out.labels.push(labels);
        out.replacement_kinds.push(kinds);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_one_masks_everything() {
        let seq = [3usize, 1, 2];
        let b = mask_tokens(&[&seq], 5, 1.0, MaskStrategy::PureMask, 9).unwrap();
        assert_eq!(b.sequences[0], vec![6, 6, 6]);
        assert_eq!(b.labels[0], vec![3, 1, 2]);
        assert_eq!(b.mask_positions[0], vec![0, 1, 2]);
    }

    #[test]
    fn rate_zero_masks_nothing() {
        let seq = [3usize, 1, 2];
        let b = mask_tokens(&[&seq], 5, 0.0, MaskStrategy::Bert801010, 9).unwrap();
        assert_eq!(b.num_masked(), 0);
        assert_eq!(b.sequences[0], vec![3, 1, 2]);
    }

    #[test]
    fn padding_fills_short_rows() {
        let a = [0usize, 1, 2, 3];
        let c = [4usize];
        let b = mask_tokens(&[&a, &c], 5, 0.5, MaskStrategy::PureMask, 1).unwrap();
        assert_eq!(b.sequences[1][1..], [5, 5, 5]);
        assert_eq!(b.sequence(1).len(), 1);
    }

    #[test]
    fn bad_rate_and_strategy_rejected() {
        let seq = [0usize];
        assert!(mask_tokens(&[&seq], 2, 1.5, MaskStrategy::PureMask, 0).is_err());
        assert!(mask_tokens(&[&seq], 2, -0.1, MaskStrategy::PureMask, 0).is_err());
        assert!("bert".parse::<MaskStrategy>().is_err());
        assert_eq!("bert-80-10-10".parse::<MaskStrategy>().unwrap(), MaskStrategy::Bert801010);
    }
}
