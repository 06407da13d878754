//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.
//!
//! The sampler keeps three count tables consistent with the per-token topic
//! assignments `z`:
//!
//! * `n_mk[m][k]` tokens of document `m` assigned to topic `k`
//! * `n_kv[k][v]` occurrences of word `v` assigned to topic `k`
//! * `n_k[k]`     tokens assigned to topic `k`
//!
//! Each token is resampled from
//! `p(z = k | rest) ∝ (n_mk + α) · (n_kv + β) / (n_k + Vβ)` with its own
//! assignment removed from the counts. θ and φ are read off the counts with
//! Dirichlet smoothing.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics;
use crate::util::{self, derive_seed, sample_index};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_ITERATIONS: usize = 500;
pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_FOLD_IN_ITERATIONS: usize = 50;
pub const DEFAULT_K_MIN: usize = 1;
pub const DEFAULT_K_MAX: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    /// Symmetric prior on θ. `None` resolves to 50/K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Average θ/φ over post-burn-in sweeps instead of reading the final state.
    /// Averaging across sweeps is exposed to label switching.
    #[serde(default)]
    pub average_samples: bool,
}

impl LdaConfig {
    pub fn new(num_topics: usize) -> Self {
        LdaConfig {
            num_topics,
            alpha: None,
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
            average_samples: false,
        }
    }

    pub fn with_topics(&self, num_topics: usize) -> Self {
        LdaConfig {
            num_topics,
            ..self.clone()
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.num_topics as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_topics < 1 {
            return Err(Error::config("number of topics must be >= 1"));
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be > 0, got {alpha}")));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SampleAverage {
    theta: Vec<f64>,
    phi: Vec<f64>,
    samples: usize,
}

/// Sampler state: assignments plus the count tables they induce.
#[derive(Debug, Clone)]
pub struct LdaModel {
    config: LdaConfig,
    alpha: f64,
    vocab_size: usize,
    z: Vec<Vec<usize>>,
    n_mk: Vec<u32>,
    n_kv: Vec<u32>,
    n_k: Vec<u32>,
    doc_len: Vec<usize>,
    sweeps: usize,
    rng: util::Rng,
    average: Option<SampleAverage>,
}

impl LdaModel {
    pub fn config(&self) -> &LdaConfig {
        &self.config
    }

    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    pub fn num_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    pub fn doc_topic_count(&self, m: usize, k: usize) -> u32 {
        self.n_mk[m * self.num_topics() + k]
    }

    pub fn topic_word_count(&self, k: usize, v: usize) -> u32 {
        self.n_kv[k * self.vocab_size + v]
    }

    pub fn topic_count(&self, k: usize) -> u32 {
        self.n_k[k]
    }

    pub fn doc_topic_counts(&self) -> &[u32] {
        &self.n_mk
    }

    pub fn topic_word_counts(&self) -> &[u32] {
        &self.n_kv
    }

    /// Checks the three count identities against `z` and the corpus.
    pub fn audit(&self, corpus: &Corpus) -> Result<()> {
        let k_n = self.num_topics();
        let v_n = self.vocab_size;
        let mut n_mk = vec![0u32; self.num_docs() * k_n];
        let mut n_kv = vec![0u32; k_n * v_n];
        let mut n_k = vec![0u32; k_n];
        for (m, (zs, doc)) in self.z.iter().zip(corpus.docs()).enumerate() {
            if zs.len() != doc.len() {
                return Err(Error::Alignment(format!("document {m}: {} assignments for {} tokens", zs.len(), doc.len())));
            }
            for (&k, &v) in zs.iter().zip(doc) {
                n_mk[m * k_n + k] += 1;
                n_kv[k * v_n + v] += 1;
                n_k[k] += 1;
            }
        }
        if n_mk != self.n_mk || n_kv != self.n_kv || n_k != self.n_k {
            return Err(Error::Numerical("count tables disagree with assignments".into()));
        }
        for m in 0..self.num_docs() {
            let s: u32 = self.n_mk[m * k_n..(m + 1) * k_n].iter().sum();
            if s as usize != corpus.doc(m).len() {
                return Err(Error::Numerical(format!("document {m}: topic counts sum to {s}")));
            }
        }
        for k in 0..k_n {
            let s: u32 = self.n_kv[k * v_n..(k + 1) * v_n].iter().sum();
            if s != self.n_k[k] {
                return Err(Error::Numerical(format!("topic {k}: word counts sum to {s}, n_k = {}", self.n_k[k])));
            }
        }
        let total: u64 = self.n_k.iter().map(|&c| c as u64).sum();
        if total as usize != corpus.total_tokens() {
            return Err(Error::Numerical(format!("topic totals sum to {total}")));
        }
        Ok(())
    }

    /// Assigns every token a uniformly random topic.
    pub fn init(corpus: &Corpus, config: &LdaConfig) -> Result<Self> {
        config.validate()?;
        if corpus.num_docs() == 0 {
            return Err(Error::config("corpus has no documents"));
        }
        let k_n = config.num_topics;
        let v_n = corpus.vocab_size();
        let mut rng = util::seeded(config.seed);
        let mut model = LdaModel {
            config: config.clone(),
            alpha: config.alpha(),
            vocab_size: v_n,
            z: Vec::with_capacity(corpus.num_docs()),
            n_mk: vec![0; corpus.num_docs() * k_n],
            n_kv: vec![0; k_n * v_n],
            n_k: vec![0; k_n],
            doc_len: corpus.doc_lengths(),
            sweeps: 0,
            rng: util::seeded(derive_seed(config.seed, 1)),
            average: None,
        };
        for (m, doc) in corpus.docs().iter().enumerate() {
            let zs: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k_n)).collect();
            for (&k, &v) in zs.iter().zip(doc) {
                model.n_mk[m * k_n + k] += 1;
                model.n_kv[k * v_n + v] += 1;
                model.n_k[k] += 1;
            }
            model.z.push(zs);
        }
        Ok(model)
    }

    /// Resamples every token once, in document then position order.
    pub fn sweep(&mut self, corpus: &Corpus) {
        let k_n = self.num_topics();
        let v_n = self.vocab_size;
        let alpha = self.alpha;
        let beta = self.config.beta;
        let v_beta = v_n as f64 * beta;
        let mut weights = vec![0.0; k_n];
        for (m, doc) in corpus.docs().iter().enumerate() {
            let row = m * k_n;
            for (n, &v) in doc.iter().enumerate() {
                let old = self.z[m][n];
                self.n_mk[row + old] -= 1;
                self.n_kv[old * v_n + v] -= 1;
                self.n_k[old] -= 1;

                let mut total = 0.0;
                for (k, w) in weights.iter_mut().enumerate() {
                    *w = (self.n_mk[row + k] as f64 + alpha) * (self.n_kv[k * v_n + v] as f64 + beta)
                        / (self.n_k[k] as f64 + v_beta);
                    total += *w;
                }
                let u: f64 = self.rng.random();
                let new = sample_index(&weights, total, u);

                self.z[m][n] = new;
                self.n_mk[row + new] += 1;
                self.n_kv[new * v_n + v] += 1;
                self.n_k[new] += 1;
            }
        }
        self.sweeps += 1;
        if self.config.average_samples && self.sweeps > self.config.burn_in {
            let theta = self.theta_from_counts();
            let phi = self.phi_from_counts();
            match &mut self.average {
                Some(avg) => {
                    avg.theta.iter_mut().zip(&theta).for_each(|(a, b)| *a += b);
                    avg.phi.iter_mut().zip(&phi).for_each(|(a, b)| *a += b);
                    avg.samples += 1;
                }
                None => self.average = Some(SampleAverage { theta, phi, samples: 1 }),
            }
        }
    }

    fn theta_from_counts(&self) -> Vec<f64> {
        let k_n = self.num_topics();
        let k_alpha = k_n as f64 * self.alpha;
        let mut out = Vec::with_capacity(self.n_mk.len());
        for (m, &len) in self.doc_len.iter().enumerate() {
            let denom = len as f64 + k_alpha;
            out.extend((0..k_n).map(|k| (self.n_mk[m * k_n + k] as f64 + self.alpha) / denom));
        }
        out
    }

    fn phi_from_counts(&self) -> Vec<f64> {
        let v_n = self.vocab_size;
        let beta = self.config.beta;
        let v_beta = v_n as f64 * beta;
        let mut out = Vec::with_capacity(self.n_kv.len());
        for k in 0..self.num_topics() {
            let denom = self.n_k[k] as f64 + v_beta;
            out.extend((0..v_n).map(|v| (self.n_kv[k * v_n + v] as f64 + beta) / denom));
        }
        out
    }

    /// θ as an M×K row-major matrix: `(n_mk + α) / (N_m + Kα)`.
    pub fn theta(&self) -> Vec<Vec<f64>> {
        let flat = match &self.average {
            Some(avg) => avg.theta.iter().map(|x| x / avg.samples as f64).collect(),
            None => self.theta_from_counts(),
        };
        flat.chunks(self.num_topics()).map(<[f64]>::to_vec).collect()
    }

    /// φ as a K×V row-major matrix: `(n_kv + β) / (n_k + Vβ)`.
    pub fn phi(&self) -> Vec<Vec<f64>> {
        let flat = match &self.average {
            Some(avg) => avg.phi.iter().map(|x| x / avg.samples as f64).collect(),
            None => self.phi_from_counts(),
        };
        flat.chunks(self.vocab_size).map(<[f64]>::to_vec).collect()
    }

    /// Collapsed joint log-likelihood `log p(w, z | α, β)`.
    pub fn log_joint(&self) -> f64 {
        let k_n = self.num_topics();
        let v_n = self.vocab_size;
        let (alpha, beta) = (self.alpha, self.config.beta);
        let mut ll = 0.0;
        let topic_const = ln_gamma(v_n as f64 * beta) - v_n as f64 * ln_gamma(beta);
        for k in 0..k_n {
            ll += topic_const;
            for v in 0..v_n {
                ll += ln_gamma(self.n_kv[k * v_n + v] as f64 + beta);
            }
            ll -= ln_gamma(self.n_k[k] as f64 + v_n as f64 * beta);
        }
        let doc_const = ln_gamma(k_n as f64 * alpha) - k_n as f64 * ln_gamma(alpha);
        for (m, &len) in self.doc_len.iter().enumerate() {
            ll += doc_const;
            for k in 0..k_n {
                ll += ln_gamma(self.n_mk[m * k_n + k] as f64 + alpha);
            }
            ll -= ln_gamma(len as f64 + k_n as f64 * alpha);
        }
        ll
    }

    /// Relabels topics: old topic `k` becomes `perm[k]`.
    pub fn permute_topics(&self, perm: &[usize]) -> LdaModel {
        let k_n = self.num_topics();
        let v_n = self.vocab_size;
        assert_eq!(perm.len(), k_n, "permutation length must equal K");
        let mut out = self.clone();
        out.average = None;
        for zs in &mut out.z {
            for k in zs.iter_mut() {
                *k = perm[*k];
            }
        }
        for m in 0..self.num_docs() {
            for k in 0..k_n {
                out.n_mk[m * k_n + perm[k]] = self.n_mk[m * k_n + k];
            }
        }
        for k in 0..k_n {
            out.n_k[perm[k]] = self.n_k[k];
            out.n_kv[perm[k] * v_n..(perm[k] + 1) * v_n].copy_from_slice(&self.n_kv[k * v_n..(k + 1) * v_n]);
        }
        out
    }

    /// Top `top_n` words of a topic by φ, ties by ascending id.
    pub fn top_keywords(&self, topic: usize, top_n: usize) -> TopKeywords {
        assert!(topic < self.num_topics(), "topic index out of range");
        let v_n = self.vocab_size;
        let beta = self.config.beta;
        let row: Vec<f64> = match &self.average {
            Some(avg) => avg.phi[topic * v_n..(topic + 1) * v_n].iter().map(|x| x / avg.samples as f64).collect(),
            None => {
                let denom = self.n_k[topic] as f64 + v_n as f64 * beta;
                (0..v_n).map(|v| (self.n_kv[topic * v_n + v] as f64 + beta) / denom).collect()
            }
        };
        rank_row(&row, top_n)
    }

    /// Topic report with surfaces from `vocab`.
    pub fn report(&self, vocab: &Vocabulary, top_n: usize) -> TopicReport {
        let topics = (0..self.num_topics())
            .map(|k| {
                let top = self.top_keywords(k, top_n);
                TopicEntry {
                    topic_index: k,
                    label: None,
                    keywords: top
                        .ranked
                        .iter()
                        .map(|&(v, prob)| Keyword {
                            word: vocab.surface_of(v).to_string(),
                            prob,
                        })
                        .collect(),
                }
            })
            .collect();
        TopicReport { topics }
    }
}

/// Ranked `(word id, probability)` pairs for one topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKeywords {
    pub ranked: Vec<(usize, f64)>,
    /// Set when the requested count exceeded V.
    pub truncated: bool,
}

impl TopKeywords {
    pub fn ids(&self) -> Vec<usize> {
        self.ranked.iter().map(|&(v, _)| v).collect()
    }
}

pub fn rank_row(row: &[f64], top_n: usize) -> TopKeywords {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let truncated = top_n > row.len();
    idx.truncate(top_n.min(row.len()));
    TopKeywords {
        ranked: idx.into_iter().map(|v| (v, row[v])).collect(),
        truncated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub word: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub topic_index: usize,
    #[serde(default)]
    pub label: Option<String>,
    pub keywords: Vec<Keyword>,
}

/// Serializes as a JSON array of topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicReport {
    pub topics: Vec<TopicEntry>,
}

/// Runs `init` followed by `config.iterations` sweeps.
pub fn fit(corpus: &Corpus, config: &LdaConfig) -> Result<LdaModel> {
    let mut model = LdaModel::init(corpus, config)?;
    for _ in 0..config.iterations {
        model.sweep(corpus);
    }
    Ok(model)
}

/// θ for held-out documents.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldIn {
    pub theta: Vec<Vec<f64>>,
    /// False when no fold-in sweeps were run.
    pub converged: bool,
}

/// Gibbs fold-in with the topic-word counts frozen; only per-document
/// counts move.
pub fn infer_held_out(model: &LdaModel, held_out: &Corpus, iterations: usize, seed: u64) -> Result<FoldIn> {
    if held_out.vocab_size() != model.vocab_size() {
        return Err(Error::Alignment(format!(
            "held-out vocabulary size {} differs from model vocabulary size {}",
            held_out.vocab_size(),
            model.vocab_size()
        )));
    }
    let k_n = model.num_topics();
    let v_n = model.vocab_size;
    let alpha = model.alpha;
    let beta = model.config.beta;
    let v_beta = v_n as f64 * beta;
    let mut rng = util::seeded(seed);
    let word_term = |k: usize, v: usize| {
        (model.n_kv[k * v_n + v] as f64 + beta) / (model.n_k[k] as f64 + v_beta)
    };
    let mut weights = vec![0.0; k_n];
    let mut theta = Vec::with_capacity(held_out.num_docs());
    for doc in held_out.docs() {
        let mut counts = vec![0u32; k_n];
        let mut z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k_n)).collect();
        for &k in &z {
            counts[k] += 1;
        }
        for _ in 0..iterations {
            for (n, &v) in doc.iter().enumerate() {
                counts[z[n]] -= 1;
                let mut total = 0.0;
                for (k, w) in weights.iter_mut().enumerate() {
                    *w = (counts[k] as f64 + alpha) * word_term(k, v);
                    total += *w;
                }
                let u: f64 = rng.random();
                z[n] = sample_index(&weights, total, u);
                counts[z[n]] += 1;
            }
        }
        let denom = doc.len() as f64 + k_n as f64 * alpha;
        theta.push(counts.iter().map(|&c| (c as f64 + alpha) / denom).collect());
    }
    Ok(FoldIn {
        theta,
        converged: iterations > 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub curve: Vec<SweepPoint>,
    pub best_k: usize,
    pub train_docs: usize,
    pub held_out_docs: usize,
}

impl SweepResult {
    /// CSV with header `K,perplexity`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,perplexity\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{:.6}", p.k, p.perplexity);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub k_min: usize,
    pub k_max: usize,
    /// Fraction of documents used for training.
    pub split_ratio: f64,
    pub fold_in_iterations: usize,
    pub estimator: HeldOutEstimator,
    pub jobs: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
            split_ratio: 0.8,
            fold_in_iterations: DEFAULT_FOLD_IN_ITERATIONS,
            estimator: HeldOutEstimator::DocumentCompletion,
            jobs: 1,
        }
    }
}

/// Seeded train/held-out split of document indices.
pub fn split_documents(num_docs: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..num_docs).collect();
    idx.shuffle(&mut util::seeded(seed));
    let n_train = ((num_docs as f64) * train_fraction).round() as usize;
    let n_train = n_train.min(num_docs);
    let mut train = idx[..n_train].to_vec();
    let mut held = idx[n_train..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// How held-out θ is estimated before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeldOutEstimator {
    /// Fold in on every token and score the same tokens.
    FoldInAll,
    /// Fold in on even positions, score odd positions.
    DocumentCompletion,
}

/// Splits each document into its even-position and odd-position tokens.
pub fn split_positions(corpus: &Corpus) -> (Corpus, Corpus) {
    let even = corpus.docs().iter().map(|d| d.iter().step_by(2).copied().collect()).collect();
    let odd = corpus.docs().iter().map(|d| d.iter().skip(1).step_by(2).copied().collect()).collect();
    let ids = corpus.doc_ids().to_vec();
    (
        Corpus::new(ids.clone(), even, corpus.vocab().clone()).expect("same vocabulary"),
        Corpus::new(ids, odd, corpus.vocab().clone()).expect("same vocabulary"),
    )
}

/// Held-out perplexity of a fitted model.
pub fn held_out_perplexity(
    model: &LdaModel,
    held_out: &Corpus,
    estimator: HeldOutEstimator,
    fold_in_iterations: usize,
    seed: u64,
) -> Result<f64> {
    match estimator {
        HeldOutEstimator::FoldInAll => {
            let fold = infer_held_out(model, held_out, fold_in_iterations, seed)?;
            evalmetrics::perplexity(&fold.theta, &model.phi(), held_out)
        }
        HeldOutEstimator::DocumentCompletion => {
            let (observed, scored) = split_positions(held_out);
            let fold = infer_held_out(model, &observed, fold_in_iterations, seed)?;
            evalmetrics::perplexity(&fold.theta, &model.phi(), &scored)
        }
    }
}

/// Fits one model per K on a seeded training split and scores each on the
/// held-out split; K* minimizes perplexity, ties to the smaller K.
pub fn select_topic_count(corpus: &Corpus, template: &LdaConfig, settings: &SweepSettings) -> Result<SweepResult> {
    if settings.k_min < 1 || settings.k_min > settings.k_max {
        return Err(Error::config(format!(
            "topic sweep bounds must satisfy 1 <= kmin <= kmax, got {}..{}",
            settings.k_min, settings.k_max
        )));
    }
    if !(settings.split_ratio > 0.0 && settings.split_ratio < 1.0) {
        return Err(Error::config(format!("split ratio must lie in (0,1), got {}", settings.split_ratio)));
    }
    template.with_topics(settings.k_min).validate()?;
    let (train_idx, held_idx) = split_documents(corpus.num_docs(), settings.split_ratio, derive_seed(template.seed, 7));
    let train = corpus.subset(&train_idx);
    let held = corpus.subset(&held_idx);
    if held.total_tokens() == 0 {
        return Err(Error::config("held-out split is empty"));
    }
    if train.total_tokens() == 0 {
        return Err(Error::config("training split is empty"));
    }
    let ks: Vec<usize> = (settings.k_min..=settings.k_max).collect();
    let score = |k: usize| -> Result<SweepPoint> {
        let cfg = template.with_topics(k);
        let model = fit(&train, &cfg)?;
        let perplexity = held_out_perplexity(&model, &held, settings.estimator, settings.fold_in_iterations, derive_seed(template.seed, 1000 + k as u64))?;
        Ok(SweepPoint { k, perplexity })
    };
    let curve: Vec<SweepPoint> = if settings.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.jobs)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| ks.par_iter().map(|&k| score(k)).collect::<Result<Vec<_>>>())?
    } else {
        ks.iter().map(|&k| score(k)).collect::<Result<Vec<_>>>()?
    };
    let mut best = &curve[0];
    for p in &curve[1..] {
        if p.perplexity < best.perplexity {
            best = p;
        }
    }
    Ok(SweepResult {
        best_k: best.k,
        curve,
        train_docs: train_idx.len(),
        held_out_docs: held_idx.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    config: LdaConfig,
    alpha: f64,
    vocab_size: usize,
    num_docs: usize,
    sweeps: usize,
    checksums: Checksums,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checksums {
    n_mk: u64,
    n_kv: u64,
    tokens: u64,
}

const MODEL_FORMAT: &str = "topicmine-lda/1";

fn fnv1a(counts: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &c in counts {
        for b in c.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn write_rows(out: &mut String, values: &[u32], width: usize) {
    for row in values.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Saved model: a JSON header line, then `n_mk`, `n_kv` and `z` sections
/// of space-separated integers.
pub fn save_model(model: &LdaModel) -> String {
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        config: model.config.clone(),
        alpha: model.alpha,
        vocab_size: model.vocab_size,
        num_docs: model.num_docs(),
        sweeps: model.sweeps,
        checksums: Checksums {
            n_mk: fnv1a(&model.n_mk),
            n_kv: fnv1a(&model.n_kv),
            tokens: model.n_k.iter().map(|&c| c as u64).sum(),
        },
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str("# n_mk\n");
    write_rows(&mut out, &model.n_mk, model.num_topics());
    out.push_str("# n_kv\n");
    write_rows(&mut out, &model.n_kv, model.vocab_size);
    out.push_str("# z\n");
    for zs in &model.z {
        let line: Vec<String> = zs.iter().map(usize::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_model(text: &str, source_name: &str) -> Result<LdaModel> {
    let mut lines = text.split('\n').enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(source_name, 1, "empty model file"))?;
    let header: ModelHeader =
        serde_json::from_str(first).map_err(|e| Error::parse(source_name, 1, format!("bad header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(Error::parse(source_name, 1, format!("unsupported format {:?}", header.format)));
    }
    let k_n = header.config.num_topics;
    let v_n = header.vocab_size;
    let m_n = header.num_docs;

    let expect_marker = |name: &str, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<()> {
        match lines.next() {
            Some((_, l)) if l == format!("# {name}") => Ok(()),
            Some((i, _)) => Err(Error::parse(source_name, i + 1, format!("expected section marker '# {name}'"))),
            None => Err(Error::parse(source_name, 0, format!("missing section {name}"))),
        }
    };
    let parse_row = |i: usize, line: &str, width: Option<usize>| -> Result<Vec<u32>> {
        let row: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| Error::parse(source_name, i + 1, format!("bad integer {t:?}"))))
            .collect::<Result<_>>()?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::parse(source_name, i + 1, format!("expected {w} values, found {}", row.len())));
            }
        }
        Ok(row)
    };
    let read_section = |rows: usize, width: Option<usize>, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<Vec<Vec<u32>>> {
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source_name, 0, format!("section ended after {r} of {rows} rows")))?;
            out.push(parse_row(i, line, width)?);
        }
        Ok(out)
    };

    expect_marker("n_mk", &mut lines)?;
    let n_mk: Vec<u32> = read_section(m_n, Some(k_n), &mut lines)?.concat();
    expect_marker("n_kv", &mut lines)?;
    let n_kv: Vec<u32> = read_section(k_n, Some(v_n), &mut lines)?.concat();
    expect_marker("z", &mut lines)?;
    let z_rows = read_section(m_n, None, &mut lines)?;
    let z: Vec<Vec<usize>> = z_rows.into_iter().map(|r| r.into_iter().map(|k| k as usize).collect()).collect();

    if fnv1a(&n_mk) != header.checksums.n_mk || fnv1a(&n_kv) != header.checksums.n_kv {
        return Err(Error::parse(source_name, 1, "checksum mismatch"));
    }
    let mut n_k = vec![0u32; k_n];
    for k in 0..k_n {
        n_k[k] = n_kv[k * v_n..(k + 1) * v_n].iter().sum();
    }
    let doc_len: Vec<usize> = (0..m_n).map(|m| n_mk[m * k_n..(m + 1) * k_n].iter().map(|&c| c as usize).sum()).collect();
    for (m, zs) in z.iter().enumerate() {
        if zs.len() != doc_len[m] || zs.iter().any(|&k| k >= k_n) {
            return Err(Error::parse(source_name, 0, format!("assignments of document {m} inconsistent with counts")));
        }
    }
    Ok(LdaModel {
        rng: util::seeded(derive_seed(header.config.seed, 1 + header.sweeps as u64)),
        alpha: header.alpha,
        config: header.config,
        vocab_size: v_n,
        z,
        n_mk,
        n_kv,
        n_k,
        doc_len,
        sweeps: header.sweeps,
        average: None,
    })
}
