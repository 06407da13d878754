//! Held-out perplexity and co-occurrence based topic coherence.
//!
//! Coherence scores are computed from window co-occurrence counts:
//!
//! * u_mass: `Σ_{t=2..T} Σ_{l<t} log2((N(w_t, w_l) + θ) / N(w_l))`, reported as
//!   the raw sum and as the mean over the `T(T-1)/2` ordered pairs.
//! * PMI / NPMI with window-relative probabilities and natural logarithms.
//! * c_v: `Σ_{i<j} NPMI(w_i, w_j)` divided by `|W|` (`c_v_paper`) and by the
//!   pair count (`c_v_mean`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lda::LdaModel;

pub const DEFAULT_TOP_T: usize = 10;
pub const DEFAULT_SLIDING_WIDTH: usize = 10;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Each document is one window.
    Document,
    /// Every contiguous span of the given width, step 1.
    Sliding(usize),
}

impl WindowMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WindowMode::Sliding(w) if w < 2 => Err(Error::config(format!("sliding window width must be >= 2, got {w}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowMode::Document => write!(f, "doc"),
            WindowMode::Sliding(w) => write!(f, "slide:{w}"),
        }
    }
}

impl FromStr for WindowMode {
    type Err = Error;

    /// `doc` or `slide:N`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "doc" || s == "document" {
            return Ok(WindowMode::Document);
        }
        if let Some(w) = s.strip_prefix("slide:") {
            let w: usize = w.parse().map_err(|_| Error::config(format!("bad window width in {s:?}")))?;
            let mode = WindowMode::Sliding(w);
            mode.validate()?;
            return Ok(mode);
        }
        Err(Error::config(format!("window must be 'doc' or 'slide:N', got {s:?}")))
    }
}

/// Window counts restricted to a keyword set.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceStats {
    pub window_mode: WindowMode,
    pub n_windows: u64,
    doc_freq: BTreeMap<usize, u64>,
    pair_freq: BTreeMap<(usize, usize), u64>,
    /// Additive constant in the u_mass numerator.
    pub smoothing: f64,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CooccurrenceStats {
    /// Number of windows containing `w` (N(w)).
    pub fn doc_freq(&self, w: usize) -> u64 {
        self.doc_freq.get(&w).copied().unwrap_or(0)
    }

    /// Number of windows containing both words (N(a, b)); symmetric.
    pub fn pair_freq(&self, a: usize, b: usize) -> u64 {
        self.pair_freq.get(&ordered(a, b)).copied().unwrap_or(0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.pair_freq.iter().map(|(&k, &v)| (k, v))
    }
}

/// Windows a document yields under `mode`; every document yields at least one.
pub fn windows(doc: &[usize], mode: WindowMode) -> Vec<&[usize]> {
    match mode {
        WindowMode::Document => vec![doc],
        WindowMode::Sliding(w) => {
            if doc.len() <= w {
                vec![doc]
            } else {
                doc.windows(w).collect()
            }
        }
    }
}

pub fn count_cooccurrence(corpus: &Corpus, mode: WindowMode, keywords: &[usize]) -> Result<CooccurrenceStats> {
    mode.validate()?;
    if keywords.is_empty() {
        return Err(Error::config("keyword restriction must be non-empty"));
    }
    let restrict: BTreeSet<usize> = keywords.iter().copied().collect();
    let mut doc_freq = BTreeMap::new();
    let mut pair_freq = BTreeMap::new();
    let mut n_windows = 0u64;
    let mut present: Vec<usize> = Vec::new();
    for doc in corpus.docs() {
        for win in windows(doc, mode) {
            n_windows += 1;
            present.clear();
            present.extend(win.iter().copied().filter(|t| restrict.contains(t)));
            present.sort_unstable();
            present.dedup();
            for (i, &a) in present.iter().enumerate() {
                *doc_freq.entry(a).or_insert(0) += 1;
                for &b in &present[i + 1..] {
                    *pair_freq.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(CooccurrenceStats {
        window_mode: mode,
        n_windows,
        doc_freq,
        pair_freq,
        smoothing: DEFAULT_SMOOTHING,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UMass {
    pub sum: f64,
    pub mean: f64,
    /// False when fewer than two usable keywords remained.
    pub defined: bool,
    /// Keywords dropped because they occur in no window.
    pub skipped: usize,
}

/// u_mass over a ranked keyword list, base-2 logarithm, denominator from
/// the earlier-ranked word.
pub fn tc_umass(stats: &CooccurrenceStats, keywords: &[usize]) -> UMass {
    let kept: Vec<usize> = keywords.iter().copied().filter(|&w| stats.doc_freq(w) >= 1).collect();
    let skipped = keywords.len() - kept.len();
    let t_n = kept.len();
    if t_n < 2 {
        return UMass { sum: 0.0, mean: 0.0, defined: false, skipped };
    }
    let mut sum = 0.0;
    for t in 1..t_n {
        for l in 0..t {
            let joint = stats.pair_freq(kept[t], kept[l]) as f64;
            sum += ((joint + stats.smoothing) / stats.doc_freq(kept[l]) as f64).log2();
        }
    }
    let pairs = (t_n * (t_n - 1) / 2) as f64;
    UMass { sum, mean: sum / pairs, defined: true, skipped }
}

/// Natural-log PMI; `-inf` when the pair never co-occurs.
pub fn pmi(stats: &CooccurrenceStats, a: usize, b: usize) -> Result<f64> {
    let (fa, fb) = (stats.doc_freq(a), stats.doc_freq(b));
    if fa == 0 || fb == 0 {
        return Err(Error::config(format!("word {} never occurs in a window", if fa == 0 { a } else { b })));
    }
    let n = stats.n_windows as f64;
    let joint = stats.pair_freq(a, b);
    if joint == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (pa, pb, pab) = (fa as f64 / n, fb as f64 / n, joint as f64 / n);
    Ok((pab / (pa * pb)).ln())
}

/// NPMI in [-1, 1]; zero co-occurrence gives -1, a pair present in every
/// window gives +1.
pub fn npmi(stats: &CooccurrenceStats, a: usize, b: usize) -> Result<f64> {
    let p = pmi(stats, a, b)?;
    if p == f64::NEG_INFINITY {
        return Ok(-1.0);
    }
    let joint = stats.pair_freq(a, b);
    if joint == stats.n_windows {
        return Ok(1.0);
    }
    let pab = joint as f64 / stats.n_windows as f64;
    Ok((p / -pab.ln()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub c_v_paper: f64,
    pub c_v_mean: f64,
    pub defined: bool,
}

/// Pairwise NPMI aggregated over a keyword set. Keywords absent from every
/// window are skipped.
pub fn c_v_score(stats: &CooccurrenceStats, keywords: &[usize]) -> CvScore {
    let kept: Vec<usize> = keywords.iter().copied().filter(|&w| stats.doc_freq(w) >= 1).collect();
    let w_n = kept.len();
    if w_n < 2 {
        return CvScore { c_v_paper: 0.0, c_v_mean: 0.0, defined: false };
    }
    let mut sum = 0.0;
    for i in 0..w_n {
        for j in i + 1..w_n {
            sum += npmi(stats, kept[i], kept[j]).expect("kept keywords occur");
        }
    }
    let c_v_mean = sum / (w_n * (w_n - 1) / 2) as f64;
    let c_v_paper = c_v_mean * ((w_n - 1) as f64 / 2.0);
    CvScore { c_v_paper, c_v_mean, defined: true }
}

/// `exp(-Σ_d Σ_n ln Σ_k θ[d][k] φ[k][w_dn] / Σ_d N_d)`.
pub fn perplexity(theta: &[Vec<f64>], phi: &[Vec<f64>], corpus: &Corpus) -> Result<f64> {
    if theta.len() != corpus.num_docs() {
        return Err(Error::Alignment(format!(
            "theta has {} rows for {} documents",
            theta.len(),
            corpus.num_docs()
        )));
    }
    let total = corpus.total_tokens();
    if total == 0 {
        return Err(Error::config("empty evaluation corpus"));
    }
    let k_n = phi.len();
    if let Some(row) = theta.iter().find(|r| r.len() != k_n) {
        return Err(Error::Alignment(format!("theta row of width {} for {} topics", row.len(), k_n)));
    }
    if let Some(row) = phi.iter().find(|r| r.len() != corpus.vocab_size()) {
        return Err(Error::Alignment(format!("phi row of width {} for vocabulary {}", row.len(), corpus.vocab_size())));
    }
    // Log-ratios against the first token's probability keep a constant model
    // exact: every ratio is 1 and the result is just 1/p.
    let mut anchor = None;
    let mut log_ratio = 0.0;
    for (doc, th) in corpus.docs().iter().zip(theta) {
        for &w in doc {
            let p: f64 = th.iter().zip(phi).map(|(t, row)| t * row[w]).sum();
            if p <= 0.0 {
                return Ok(f64::INFINITY);
            }
            let a = *anchor.get_or_insert(p);
            log_ratio += (p / a).ln();
        }
    }
    let anchor = anchor.expect("non-empty corpus has a first token");
    Ok((-log_ratio / total as f64).exp() / anchor)
}

/// Window modes for the two score families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceWindows {
    pub u_mass: WindowMode,
    pub c_v: WindowMode,
}

impl Default for CoherenceWindows {
    fn default() -> Self {
        CoherenceWindows {
            u_mass: WindowMode::Document,
            c_v: WindowMode::Sliding(DEFAULT_SLIDING_WIDTH),
        }
    }
}

impl CoherenceWindows {
    pub fn uniform(mode: WindowMode) -> Self {
        CoherenceWindows { u_mass: mode, c_v: mode }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCoherence {
    pub topic_index: usize,
    pub keywords: Vec<String>,
    pub u_mass_sum: f64,
    pub u_mass_mean: f64,
    pub c_v_paper: f64,
    pub c_v_mean: f64,
    /// Set when a score was undefined (fewer than two usable keywords).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceAggregate {
    pub u_mass_sum: f64,
    pub u_mass_mean: f64,
    pub c_v_paper: f64,
    pub c_v_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub top_t: usize,
    pub u_mass_window: String,
    pub c_v_window: String,
    pub topics: Vec<TopicCoherence>,
    pub aggregate: CoherenceAggregate,
}

/// Scores arbitrary ranked keyword sets against a corpus.
pub fn coherence_for_keyword_sets(
    corpus: &Corpus,
    keyword_sets: &[Vec<usize>],
    windows: CoherenceWindows,
) -> Result<CoherenceReport> {
    let all: Vec<usize> = keyword_sets.iter().flatten().copied().collect();
    let umass_stats = count_cooccurrence(corpus, windows.u_mass, &all)?;
    let cv_stats = if windows.c_v == windows.u_mass {
        umass_stats.clone()
    } else {
        count_cooccurrence(corpus, windows.c_v, &all)?
    };
    let topics: Vec<TopicCoherence> = keyword_sets
        .iter()
        .enumerate()
        .map(|(k, kw)| {
            let um = tc_umass(&umass_stats, kw);
            let cv = c_v_score(&cv_stats, kw);
            TopicCoherence {
                topic_index: k,
                keywords: kw.iter().map(|&w| corpus.vocab().surface_of(w).to_string()).collect(),
                u_mass_sum: um.sum,
                u_mass_mean: um.mean,
                c_v_paper: cv.c_v_paper,
                c_v_mean: cv.c_v_mean,
                degenerate: !(um.defined && cv.defined),
            }
        })
        .collect();
    let n = topics.len().max(1) as f64;
    let mean = |f: fn(&TopicCoherence) -> f64| topics.iter().map(f).sum::<f64>() / n;
    let aggregate = CoherenceAggregate {
        u_mass_sum: mean(|t| t.u_mass_sum),
        u_mass_mean: mean(|t| t.u_mass_mean),
        c_v_paper: mean(|t| t.c_v_paper),
        c_v_mean: mean(|t| t.c_v_mean),
    };
    Ok(CoherenceReport {
        top_t: keyword_sets.iter().map(Vec::len).max().unwrap_or(0),
        u_mass_window: windows.u_mass.to_string(),
        c_v_window: windows.c_v.to_string(),
        topics,
        aggregate,
    })
}

/// Extracts each topic's top `top_t` keywords and scores them.
pub fn coherence_report(model: &LdaModel, corpus: &Corpus, top_t: usize, windows: CoherenceWindows) -> Result<CoherenceReport> {
    if model.vocab_size() != corpus.vocab_size() {
        return Err(Error::Alignment(format!(
            "model vocabulary {} differs from corpus vocabulary {}",
            model.vocab_size(),
            corpus.vocab_size()
        )));
    }
    let sets: Vec<Vec<usize>> = (0..model.num_topics()).map(|k| model.top_keywords(k, top_t).ids()).collect();
    let mut report = coherence_for_keyword_sets(corpus, &sets, windows)?;
    report.top_t = top_t;
    Ok(report)
}
