use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::masking::{mask_tokens, MaskStrategy};
use super::model::{EncoderConfig, EncoderParams};
use super::PROB_FLOOR;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util;

pub const DEFAULT_MASK_RATE: f64 = 0.15;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub strategy: MaskStrategy,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_rate: DEFAULT_MASK_RATE,
            strategy: MaskStrategy::PureMask,
            steps: DEFAULT_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::config(format!("mask rate {} outside [0, 1]", self.mask_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be > 0"));
        }
        Ok(())
    }
}

/// Masked-token cross-entropy: the negative natural log of each label's
/// probability, summed. Probabilities below `1e-12` are clamped and counted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MlmLoss {
    pub loss: f64,
    pub clamped: usize,
}

pub fn mlm_loss(predictions: &[Vec<f64>], labels: &[usize]) -> Result<MlmLoss> {
    if predictions.len() != labels.len() {
        return Err(Error::config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut out = MlmLoss::default();
    for (p, &y) in predictions.iter().zip(labels) {
        let py = *p
            .get(y)
            .ok_or_else(|| Error::config(format!("label {y} outside distribution of size {}", p.len())))?;
        if py < PROB_FLOOR {
            out.clamped += 1;
        }
        out.loss -= py.max(PROB_FLOOR).ln();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Summed loss of each step's batch (zero when nothing was masked).
    pub loss_history: Vec<f64>,
    pub masked_counts: Vec<usize>,
    pub clamped: usize,
}

/// Splits every non-empty document into pieces no longer than `max_len`.
pub fn training_sequences(corpus: &Corpus, max_len: usize) -> Vec<Vec<usize>> {
    corpus
        .docs()
        .iter()
        .flat_map(|d| d.chunks(max_len.max(1)).map(<[usize]>::to_vec))
        .collect()
}

/// Summed masked loss over a batch, optionally adding the gradient of the
/// per-masked-token mean into `grads`.
pub fn batch_loss(
    params: &EncoderParams,
    sequences: &[&[usize]],
    cfg: &TrainConfig,
    mask_seed: u64,
    grads: Option<&mut EncoderParams>,
) -> Result<(MlmLoss, usize)> {
    let batch = mask_tokens(sequences, params.vocab_size, cfg.mask_rate, cfg.strategy, mask_seed)?;
    let masked = batch.num_masked();
    let mut total = MlmLoss::default();
    let scale = if masked > 0 { 1.0 / masked as f64 } else { 0.0 };
    let mut grads = grads;
    for i in 0..batch.sequences.len() {
        if batch.mask_positions[i].is_empty() {
            continue;
        }
        let g = grads.as_deref_mut().map(|g| (g, scale));
        let l = params.loss_and_backward(batch.sequence(i), &batch.mask_positions[i], &batch.labels[i], g)?;
        total.loss += l.loss;
        total.clamped += l.clamped;
    }
    Ok((total, masked))
}

/// Plain SGD on the masked-token objective. Each step draws `batch_size`
/// sequences from a seeded shuffle of the corpus chunks.
pub fn train(corpus: &Corpus, encoder: &EncoderConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.num_docs() == 0 || corpus.total_tokens() == 0 {
        return Err(Error::config("cannot train the encoder on an empty corpus"));
    }
    let mut params = EncoderParams::init(encoder, corpus.vocab_size())?;
    let sequences = training_sequences(corpus, encoder.max_len);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut rng = util::seeded(util::derive_seed(cfg.seed, 3));
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps);
    let mut masked_counts = Vec::with_capacity(cfg.steps);
    let mut clamped = 0;
    let mut last_finite: Option<f64> = None;
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(sequences.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(sequences[order[cursor]].as_slice());
            cursor += 1;
        }
        let mut grads = params.zeros_like();
        let mask_seed = util::derive_seed(cfg.seed, 1_000_000 + step as u64);
        let (loss, masked) = batch_loss(&params, &picked, cfg, mask_seed, Some(&mut grads))?;
        if !loss.loss.is_finite() {
            return Err(Error::Numerical(match last_finite {
                Some(l) => format!("non-finite encoder loss at step {step}; last finite loss {l}"),
                None => format!("non-finite encoder loss at step {step}; no finite loss recorded"),
            }));
        }
        clamped += loss.clamped;
        history.push(loss.loss);
        masked_counts.push(masked);
        last_finite = Some(loss.loss);
        if masked > 0 {
            params.sgd_step(&grads, cfg.learning_rate);
            if !params.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite encoder parameters after step {step}; last finite loss {}",
                    loss.loss
                )));
            }
        }
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
        masked_counts,
        clamped,
    })
}

pub fn loss_history_csv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("step,loss,masked\n");
    for (i, (l, m)) in outcome.loss_history.iter().zip(&outcome.masked_counts).enumerate() {
        out.push_str(&format!("{i},{l:.9},{m}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let uniform = vec![vec![0.25; 4]];
        assert!((mlm_loss(&uniform, &[2]).unwrap().loss - 4f64.ln()).abs() < 1e-12);
        let perfect = vec![vec![0.0, 1.0]];
        assert_eq!(mlm_loss(&perfect, &[1]).unwrap().loss, 0.0);
        let two = vec![vec![0.5, 0.5], vec![0.25, 0.75]];
        let l = mlm_loss(&two, &[0, 0]).unwrap().loss;
        assert!((l - (2f64.ln() + 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped_and_counted() {
        let l = mlm_loss(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert_eq!(l.clamped, 1);
        assert!((l.loss - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(mlm_loss(&[vec![1.0]], &[]).is_err());
    }
}
