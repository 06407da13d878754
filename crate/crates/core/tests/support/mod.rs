//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's metric code; only plain vectors go in.
#![allow(dead_code)]

use std::collections::HashSet;

/// Brute-force coherence scores for one ranked keyword list.
#[derive(Debug, Clone, Copy)]
pub struct OracleScores {
    pub u_mass_sum: f64,
    pub u_mass_mean: f64,
    pub c_v_paper: f64,
    pub c_v_mean: f64,
    pub npmi_min: f64,
    pub npmi_max: f64,
}

/// Windows as sets of distinct tokens. `width == None` is one window per
/// document; otherwise every width-`w` span, or the whole document if shorter.
pub fn oracle_windows(docs: &[Vec<usize>], width: Option<usize>) -> Vec<HashSet<usize>> {
    let mut out = Vec::new();
    for doc in docs {
        match width {
            None => out.push(doc.iter().copied().collect()),
            Some(w) => {
                if doc.len() <= w {
                    out.push(doc.iter().copied().collect());
                } else {
                    for start in 0..=doc.len() - w {
                        out.push(doc[start..start + w].iter().copied().collect());
                    }
                }
            }
        }
    }
    out
}

fn count_containing(windows: &[HashSet<usize>], words: &[usize]) -> usize {
    windows.iter().filter(|w| words.iter().all(|x| w.contains(x))).count()
}

/// Rescans every window for every word and pair.
pub fn oracle_scores(
    docs: &[Vec<usize>],
    keywords: &[usize],
    umass_width: Option<usize>,
    cv_width: Option<usize>,
) -> OracleScores {
    let uw = oracle_windows(docs, umass_width);
    let kept: Vec<usize> = keywords.iter().copied().filter(|&w| count_containing(&uw, &[w]) > 0).collect();
    let (mut u_sum, mut u_mean) = (0.0, 0.0);
    if kept.len() >= 2 {
        let mut pairs = 0usize;
        for t in 1..kept.len() {
            for l in 0..t {
                let joint = count_containing(&uw, &[kept[t], kept[l]]) as f64;
                let nl = count_containing(&uw, &[kept[l]]) as f64;
                u_sum += ((joint + 1.0) / nl).ln() / std::f64::consts::LN_2;
                pairs += 1;
            }
        }
        u_mean = u_sum / pairs as f64;
    }

    let cw = oracle_windows(docs, cv_width);
    let n = cw.len() as f64;
    let kept: Vec<usize> = keywords.iter().copied().filter(|&w| count_containing(&cw, &[w]) > 0).collect();
    let (mut cv_paper, mut cv_mean) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    if kept.len() >= 2 {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                let pi = count_containing(&cw, &[kept[i]]) as f64 / n;
                let pj = count_containing(&cw, &[kept[j]]) as f64 / n;
                let pij = count_containing(&cw, &[kept[i], kept[j]]) as f64 / n;
                let v = if pij == 0.0 {
                    -1.0
                } else if pij == 1.0 {
                    1.0
                } else {
                    (pij / (pi * pj)).ln() / -pij.ln()
                };
                lo = lo.min(v);
                hi = hi.max(v);
                total += v;
                pairs += 1;
            }
        }
        cv_paper = total / kept.len() as f64;
        cv_mean = total / pairs as f64;
    }
    OracleScores {
        u_mass_sum: u_sum,
        u_mass_mean: u_mean,
        c_v_paper: cv_paper,
        c_v_mean: cv_mean,
        npmi_min: lo,
        npmi_max: hi,
    }
}

/// Token-by-token perplexity with products accumulated in log space the
/// other way round: per-document likelihood products, then one global mean.
pub fn oracle_perplexity(theta: &[Vec<f64>], phi: &[Vec<f64>], docs: &[Vec<usize>]) -> f64 {
    let mut per_doc = Vec::new();
    let mut tokens = 0usize;
    for (d, doc) in docs.iter().enumerate() {
        let mut lp = 0.0;
        for &w in doc {
            let mut p = 0.0;
            for k in (0..phi.len()).rev() {
                p += phi[k][w] * theta[d][k];
            }
            lp += p.ln();
        }
        per_doc.push(lp);
        tokens += doc.len();
    }
    let total: f64 = per_doc.iter().rev().sum();
    (-total / tokens as f64).exp()
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum over topic relabelings of the mean row-wise L1 distance.
pub fn best_permutation_l1(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> f64 {
    assert_eq!(truth.len(), estimate.len());
    let k = truth.len();
    permutations(k)
        .iter()
        .map(|perm| {
            (0..k)
                .map(|i| truth[i].iter().zip(&estimate[perm[i]]).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .sum::<f64>()
                / k as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Two isotropic Gaussian clouds in `dim` dimensions with centers `sep`
/// standard deviations apart along the first axis.
pub fn two_clouds(per_cloud: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..per_cloud {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            v[0] += c as f64 * sep;
            pts.push(v);
            labels.push(c);
        }
    }
    (pts, labels)
}

/// Plain O(n²) silhouette.
pub fn oracle_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let clusters: HashSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            let members: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == c && j != i).collect();
            if members.is_empty() {
                continue;
            }
            let mean = members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / members.len() as f64;
            if c == labels[i] {
                a = mean;
            } else {
                b = b.min(mean);
            }
        }
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        total += if own <= 1 { 0.0 } else { (b - a) / a.max(b) };
    }
    total / points.len() as f64
}
