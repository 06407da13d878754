//! Sense refinement: k-means over contextual token vectors, with each token
//! occurrence replaced by its cluster id.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::util;

pub const MAX_KMEANS_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseAssignment {
    pub num_senses: usize,
    /// Per document, one sense id per token occurrence.
    pub senses: Vec<Vec<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times an empty cluster was re-seeded.
    pub reseeds: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = dist2(p, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding. Stops when assignments repeat or
/// after `MAX_KMEANS_ITERATIONS` rounds.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>, usize, bool, usize)> {
    if k == 0 {
        return Err(Error::config("number of senses must be >= 1"));
    }
    if k > points.len() {
        return Err(Error::config(format!(
            "{k} senses requested but only {} token occurrences available",
            points.len()
        )));
    }
    let mut rng = util::seeded(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            util::sample_index(&d2, total, rng.random::<f64>())
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[idx].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut reseeds = 0;
    while iterations < MAX_KMEANS_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut dists = Vec::with_capacity(points.len());
        for (a, p) in assign.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
            dists.push(d);
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its own centroid; ties to the lowest index
                let far = util::argmax(&dists);
                centroids[c] = points[far].to_vec();
                dists[far] = f64::NEG_INFINITY;
                reseeds += 1;
            } else {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
    }
    Ok((assign, centroids, iterations, converged, reseeds))
}

/// Clusters every token occurrence vector into `k` senses.
pub fn cluster_tokens(set: &EmbeddingSet, k: usize, seed: u64) -> Result<SenseAssignment> {
    let tokens = set
        .token_vectors
        .as_ref()
        .ok_or_else(|| Error::config("sense clustering needs per-token vectors"))?;
    let points: Vec<&[f64]> = tokens.iter().flatten().map(Vec::as_slice).collect();
    let (flat, centroids, iterations, converged, reseeds) = kmeans(&points, k, seed)?;
    let mut senses = Vec::with_capacity(tokens.len());
    let mut it = flat.into_iter();
    for doc in tokens {
        senses.push(it.by_ref().take(doc.len()).collect());
    }
    Ok(SenseAssignment {
        num_senses: k,
        senses,
        centroids,
        iterations,
        converged,
        reseeds,
    })
}

/// Rewrites the corpus over sense ids. Unused senses are dropped; each
/// remaining sense is labelled `<most frequent word>#<sense>` and the
/// vocabulary is ordered by descending frequency.
pub fn refine_corpus(corpus: &Corpus, assignment: &SenseAssignment) -> Result<Corpus> {
    if assignment.senses.len() != corpus.num_docs() {
        return Err(Error::Alignment(format!(
            "sense assignment covers {} documents, corpus has {}",
            assignment.senses.len(),
            corpus.num_docs()
        )));
    }
    let mut word_counts: Vec<HashMap<usize, u64>> = vec![HashMap::new(); assignment.num_senses];
    let mut totals = vec![0u64; assignment.num_senses];
    for (m, (doc, senses)) in corpus.docs().iter().zip(&assignment.senses).enumerate() {
        if doc.len() != senses.len() {
            return Err(Error::Alignment(format!(
                "document {} has {} tokens but {} sense labels",
                corpus.doc_ids()[m],
                doc.len(),
                senses.len()
            )));
        }
        for (&w, &s) in doc.iter().zip(senses) {
            *word_counts[s].entry(w).or_default() += 1;
            totals[s] += 1;
        }
    }
    let mut used: Vec<usize> = (0..assignment.num_senses).filter(|&s| totals[s] > 0).collect();
    used.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
    let mut remap = vec![usize::MAX; assignment.num_senses];
    let mut entries = Vec::with_capacity(used.len());
    for (new_id, &s) in used.iter().enumerate() {
        remap[s] = new_id;
        let (&top, _) = word_counts[s]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("used sense has words");
        entries.push((format!("{}#{s}", corpus.vocab().surface_of(top)), totals[s]));
    }
    let vocab = Vocabulary::from_entries(entries, 0)?;
    let docs = assignment
        .senses
        .iter()
        .map(|d| d.iter().map(|&s| remap[s]).collect())
        .collect();
    Corpus::new(corpus.doc_ids().to_vec(), docs, vocab)
}
