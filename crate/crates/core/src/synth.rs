//! Synthetic corpora: planted LDA corpora with known θ/φ, and a small
//! review-style text corpus with three aspects.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{Corpus, RawDocument, Vocabulary};
use crate::util::{self, sample_index};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub num_topics: usize,
    pub vocab_size: usize,
    pub num_docs: usize,
    pub doc_len: usize,
    /// Dirichlet concentration of each document's topic mixture.
    pub doc_concentration: f64,
    /// Share of each topic's mass spread uniformly over the whole vocabulary.
    pub background: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            num_topics: 3,
            vocab_size: 40,
            num_docs: 500,
            doc_len: 50,
            doc_concentration: 0.2,
            background: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub corpus: Corpus,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Topic that generated each token.
    pub z: Vec<Vec<usize>>,
}

fn dirichlet(rng: &mut util::Rng, concentration: f64, dim: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let xs: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let s: f64 = xs.iter().sum();
        if s > 0.0 {
            return xs.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Topic-word distributions where topic `k` owns a contiguous block of the
/// vocabulary, plus a thin uniform background.
pub fn planted_phi(num_topics: usize, vocab_size: usize, background: f64, rng: &mut util::Rng) -> Vec<Vec<f64>> {
    (0..num_topics)
        .map(|k| {
            let lo = k * vocab_size / num_topics;
            let hi = (k + 1) * vocab_size / num_topics;
            let weights: Vec<f64> = (lo..hi).map(|_| rng.random_range(1.0..2.0)).collect();
            let wsum: f64 = weights.iter().sum();
            let mut row = vec![background / vocab_size as f64; vocab_size];
            for (v, w) in (lo..hi).zip(&weights) {
                row[v] += (1.0 - background) * w / wsum;
            }
            row
        })
        .collect()
}

/// Draws a corpus from the LDA generative process with block-structured φ.
pub fn planted_corpus(spec: &PlantedSpec) -> Planted {
    let mut rng = util::seeded(spec.seed);
    let phi = planted_phi(spec.num_topics, spec.vocab_size, spec.background, &mut rng);
    let mut theta = Vec::with_capacity(spec.num_docs);
    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut zs = Vec::with_capacity(spec.num_docs);
    for _ in 0..spec.num_docs {
        let th = dirichlet(&mut rng, spec.doc_concentration, spec.num_topics);
        let mut doc = Vec::with_capacity(spec.doc_len);
        let mut z = Vec::with_capacity(spec.doc_len);
        for _ in 0..spec.doc_len {
            let k = sample_index(&th, 1.0, rng.random());
            let v = sample_index(&phi[k], 1.0, rng.random());
            z.push(k);
            doc.push(v);
        }
        theta.push(th);
        docs.push(doc);
        zs.push(z);
    }
    let corpus = corpus_from_ids(docs, spec.vocab_size);
    Planted { corpus, phi, theta, z: zs }
}

/// Wraps id sequences in a corpus with surfaces `w00`, `w01`, ...
pub fn corpus_from_ids(docs: Vec<Vec<usize>>, vocab_size: usize) -> Corpus {
    let mut counts = vec![0u64; vocab_size];
    for d in &docs {
        for &v in d {
            counts[v] += 1;
        }
    }
    let width = vocab_size.saturating_sub(1).to_string().len().max(2);
    let vocab = Vocabulary::from_entries(
        counts.iter().enumerate().map(|(v, &c)| (format!("w{v:0width$}"), c)).collect(),
        0,
    )
    .expect("non-empty vocabulary");
    let ids = (0..docs.len()).map(|m| format!("doc-{}", m + 1)).collect();
    Corpus::new(ids, docs, vocab).expect("ids within vocabulary")
}

const LOGISTICS: &[&str] = &[
    "delivery", "shipping", "courier", "package", "arrived", "fast", "slow", "tracking", "box",
    "dispatch", "logistics", "days",
];
const PRICE: &[&str] = &[
    "price", "cheap", "expensive", "discount", "value", "money", "affordable", "deal", "cost",
    "bargain", "worth", "coupon",
];
const QUALITY: &[&str] = &[
    "quality", "fabric", "material", "durable", "stitching", "broke", "sturdy", "flimsy",
    "texture", "solid", "defect", "build",
];
const FILLER: &[&str] = &["good", "bad", "really", "great", "okay", "item", "product", "bought"];
const GLUE: &[&str] = &["the", "was", "and", "it", "is", "very", "a", "for", "with", "this"];

/// The three planted aspects of [`sample_reviews`], in order.
pub const SAMPLE_ASPECTS: [&str; 3] = ["logistics", "price", "quality"];

/// Review-like documents, each dominated by one of three aspects.
pub fn sample_reviews(num_docs: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = util::seeded(seed);
    let aspects = [LOGISTICS, PRICE, QUALITY];
    (0..num_docs)
        .map(|i| {
            let main = i % aspects.len();
            let len = rng.random_range(8..16);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let r: f64 = rng.random();
                let pool = if r < 0.6 {
                    aspects[main]
                } else if r < 0.7 {
                    aspects[(main + 1 + rng.random_range(0..2)) % 3]
                } else if r < 0.82 {
                    FILLER
                } else {
                    GLUE
                };
                words.push(*pool.choose(&mut rng).expect("non-empty pool"));
            }
            let mut text = words.join(" ");
            if let Some(first) = text.get(..1) {
                text = first.to_uppercase() + &text[1..];
            }
            text.push(if i % 4 == 0 { '!' } else { '.' });
            RawDocument {
                id: format!("review-{:04}", i + 1),
                text,
            }
        })
        .collect()
}
