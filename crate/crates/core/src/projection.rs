//! Fusion of document embeddings with topic mixtures, and exact t-SNE.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingSet;
use crate::error::{Error, Result};
use crate::util::{self, argmax};

/// `[embedding / ‖embedding‖ ; λ·θ_d]` for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionVector {
    pub doc_id: String,
    pub vector: Vec<f64>,
    pub lambda: f64,
    /// The embedding was all zeros and was left unnormalized.
    pub zero_embedding: bool,
}

pub fn fuse_vectors(embeddings: &EmbeddingSet, theta: &[Vec<f64>], lambda: f64) -> Result<Vec<FusionVector>> {
    if embeddings.num_docs() != theta.len() {
        return Err(Error::Alignment(format!(
            "{} embedding rows but {} topic rows",
            embeddings.num_docs(),
            theta.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be a finite value >= 0, got {lambda}")));
    }
    Ok(embeddings
        .doc_ids
        .iter()
        .zip(&embeddings.doc_vectors)
        .zip(theta)
        .map(|((id, emb), th)| {
            let norm = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
            let zero = norm == 0.0;
            let mut vector: Vec<f64> = if zero {
                vec![0.0; emb.len()]
            } else {
                emb.iter().map(|x| x / norm).collect()
            };
            vector.extend(th.iter().map(|t| lambda * t));
            FusionVector {
                doc_id: id.clone(),
                vector,
                lambda,
                zero_embedding: zero,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSettings {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_sigma: f64,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for TsneSettings {
    fn default() -> Self {
        TsneSettings {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_sigma: 1e-4,
            record_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRecord {
    pub iteration: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub kl_history: Vec<KlRecord>,
    /// Points whose bandwidth search did not reach the entropy tolerance.
    pub unconverged_points: Vec<usize>,
    pub settings: TsneSettings,
}

/// Conditional affinities `p_{j|i}` with per-point Gaussian bandwidths.
#[derive(Debug, Clone)]
pub struct Affinities {
    /// Row-major M×M, zero diagonal.
    pub conditional: Vec<f64>,
    /// Entropy (nats) reached for each row.
    pub entropy: Vec<f64>,
    pub unconverged: Vec<usize>,
}

const BANDWIDTH_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;

pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Bisects each row's precision so its entropy matches `ln(perplexity)`.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Affinities {
    let target = perplexity.ln();
    let mut conditional = vec![0.0; n * n];
    let mut entropy = vec![0.0; n];
    let mut unconverged = Vec::new();
    let mut row = vec![0.0; n];
    for i in 0..n {
        let di = &dist[i * n..(i + 1) * n];
        let dmin = (0..n).filter(|&j| j != i).map(|j| di[j]).fold(f64::INFINITY, f64::min);
        let mut beta = 1.0;
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut h = 0.0;
        let mut converged = false;
        for _ in 0..BANDWIDTH_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let shifted = di[j] - dmin;
                let p = (-beta * shifted).exp();
                row[j] = p;
                sum += p;
                weighted += shifted * p;
            }
            h = sum.ln() + beta * weighted / sum;
            for p in row.iter_mut() {
                *p /= sum;
            }
            let diff = h - target;
            if diff.abs() <= ENTROPY_TOL {
                converged = true;
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        if !converged {
            unconverged.push(i);
        }
        entropy[i] = h;
        conditional[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Affinities {
        conditional,
        entropy,
        unconverged,
    }
}

/// `(p_{j|i} + p_{i|j}) / 2M`, summing to 1.
pub fn joint_probabilities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    p
}

/// Student-t (one degree of freedom) similarities, normalized, plus the
/// unnormalized kernel values.
pub fn student_t_q(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    let q = num.iter().map(|v| v / sum).collect();
    (q, num)
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Adds seeded noise (σ = 1e-9) to every repeat of an earlier row.
fn jitter_duplicates(x: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = util::seeded(seed);
    let noise = Normal::new(0.0, 1e-9).expect("valid sigma");
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    x.iter()
        .map(|row| {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key, ()).is_some() {
                row.iter().map(|v| v + noise.sample(&mut rng)).collect()
            } else {
                row.clone()
            }
        })
        .collect()
}

/// Exact O(M²) t-SNE to two dimensions.
pub fn tsne(vectors: &[Vec<f64>], settings: &TsneSettings) -> Result<Projection2D> {
    let n = vectors.len();
    if n < 4 {
        return Err(Error::config(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(settings.perplexity > 0.0) || 3.0 * settings.perplexity > (n - 1) as f64 {
        return Err(Error::config(format!(
            "t-SNE perplexity {} too large for {n} points (must be <= (M-1)/3 = {:.3})",
            settings.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Alignment("t-SNE input rows differ in length".into()));
    }
    let x = jitter_duplicates(vectors, util::derive_seed(settings.seed, 2));
    let dist = squared_distances(&x);
    let aff = conditional_affinities(&dist, n, settings.perplexity);
    let p = joint_probabilities(&aff.conditional, n);

    let mut rng = util::seeded(settings.seed);
    let init = Normal::new(0.0, settings.init_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_history = Vec::new();
    let record_every = settings.record_every.max(1);

    for it in 0..settings.iterations {
        let (q, num) = student_t_q(&y);
        if it % record_every == 0 {
            kl_history.push(KlRecord { iteration: it, kl: kl_divergence(&p, &q) });
        }
        let exaggeration = if it < settings.exaggeration_iterations {
            settings.early_exaggeration
        } else {
            1.0
        };
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let ij = i * n + j;
                let m = (exaggeration * p[ij] - q[ij]) * num[ij];
                gx += m * (y[i][0] - y[j][0]);
                gy += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * gx, 4.0 * gy];
            if !(grad[i][0].is_finite() && grad[i][1].is_finite()) {
                return Err(Error::Numerical(format!("non-finite t-SNE gradient at iteration {it}")));
            }
        }
        let momentum = if it < settings.momentum_switch {
            settings.initial_momentum
        } else {
            settings.final_momentum
        };
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (velocity[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(0.01);
                velocity[i][c] = momentum * velocity[i][c] - settings.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += velocity[i][c];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for p in y.iter_mut() {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
    }
    let (q, _) = student_t_q(&y);
    kl_history.push(KlRecord { iteration: settings.iterations, kl: kl_divergence(&p, &q) });
    if y.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Numerical("t-SNE produced non-finite coordinates".into()));
    }
    Ok(Projection2D {
        points: y,
        kl_history,
        unconverged_points: aff.unconverged,
        settings: settings.clone(),
    })
}

/// Mean silhouette (Euclidean) of `points` under `labels`. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k_n = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k_n];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k_n];
        for j in 0..n {
            if i != j {
                let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sums[labels[j]] += d;
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k_n)
            .filter(|&k| k != own && sizes[k] > 0)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

pub fn dominant_topics(theta: &[Vec<f64>]) -> Vec<usize> {
    theta.iter().map(|row| argmax(row)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRow {
    pub doc_id: String,
    pub x: f64,
    pub y: f64,
    pub dominant_topic: usize,
}

/// `doc_id,x,y,dominant_topic` rows ordered by doc id, 6 fractional digits.
pub fn emit_points(doc_ids: &[String], projection: &Projection2D, theta: &[Vec<f64>]) -> Result<String> {
    if doc_ids.len() != projection.points.len() || theta.len() != doc_ids.len() {
        return Err(Error::Alignment(format!(
            "{} ids, {} points, {} topic rows",
            doc_ids.len(),
            projection.points.len(),
            theta.len()
        )));
    }
    let dominant = dominant_topics(theta);
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.sort_by(|&a, &b| doc_ids[a].cmp(&doc_ids[b]));
    let mut out = String::from("doc_id,x,y,dominant_topic\n");
    for i in order {
        let [x, y] = projection.points[i];
        let _ = writeln!(out, "{},{:.6},{:.6},{}", doc_ids[i], x, y, dominant[i]);
    }
    Ok(out)
}

pub fn parse_points(csv: &str) -> Result<Vec<PointRow>> {
    let mut rows = Vec::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse("points.csv", i + 1, "expected doc_id,x,y,dominant_topic");
        if cols.len() != 4 {
            return Err(bad());
        }
        rows.push(PointRow {
            doc_id: cols[0].to_string(),
            x: cols[1].parse().map_err(|_| bad())?,
            y: cols[2].parse().map_err(|_| bad())?,
            dominant_topic: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf", "#393b79", "#637939",
];

/// Scatter plot with one circle per point, colored by dominant topic.
pub fn points_svg(projection: &Projection2D, dominant: &[usize]) -> String {
    let size = 600.0;
    let margin = 20.0;
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &projection.points {
        for c in 0..2 {
            min[c] = min[c].min(p[c]);
            max[c] = max[c].max(p[c]);
        }
    }
    let scale = |v: f64, c: usize| {
        let span = (max[c] - min[c]).max(1e-12);
        margin + (v - min[c]) / span * (size - 2.0 * margin)
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    for (p, &k) in projection.points.iter().zip(dominant) {
        let _ = writeln!(
            out,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
            scale(p[0], 0),
            scale(p[1], 1),
            PALETTE[k % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}
