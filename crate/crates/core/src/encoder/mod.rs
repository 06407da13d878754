//! Masked-language-model encoder: masking, a small transformer trained with
//! SGD, contextual token vectors, pooled document vectors and optional
//! sense clustering.

mod embeddings;
mod masking;
mod model;
mod senses;
mod train;

pub use embeddings::{export_embeddings, import_embeddings, pool_document, EmbeddingSet, EmbeddingSource};
pub use masking::{mask_tokens, MaskStrategy, MaskedBatch, Replacement};
pub use model::{Encoded, EncoderConfig, EncoderParams, Layer, SequenceLoss};
pub use senses::{cluster_tokens, kmeans, refine_corpus, SenseAssignment, MAX_KMEANS_ITERATIONS};
pub use train::{
    batch_loss, loss_history_csv, mlm_loss, train, training_sequences, MlmLoss, TrainConfig, TrainOutcome,
    DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_MASK_RATE, DEFAULT_STEPS,
};

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::Result;

/// Label probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Contextual vectors for every token of every document plus mean-pooled
/// document vectors. Documents longer than the encoder's `max_len` are
/// encoded in consecutive chunks.
pub fn embed_corpus(params: &EncoderParams, corpus: &Corpus) -> Result<EmbeddingSet> {
    let max_len = params.config.max_len;
    let dim = params.config.dim;
    let token_vectors = corpus
        .docs()
        .par_iter()
        .map(|doc| -> Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(doc.len());
            for chunk in doc.chunks(max_len) {
                let enc = params.encode(chunk, &[])?;
                out.extend(enc.vectors.rows().into_iter().map(|r| r.to_vec()));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let doc_vectors = token_vectors.iter().map(|t| pool_document(t, dim).0).collect();
    Ok(EmbeddingSet {
        dim,
        doc_ids: corpus.doc_ids().to_vec(),
        doc_vectors,
        token_vectors: Some(token_vectors),
        source: EmbeddingSource::TrainedEncoder,
    })
}
