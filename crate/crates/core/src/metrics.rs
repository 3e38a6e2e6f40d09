//! Task metrics, the diffusion-coefficient sensitivity sweep and latent
//! trajectory profiling.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{bbscore, estimate_sigma_sq_doc};
use crate::error::{Error, Result};
use crate::harness::{DatasetStats, ShuffleDataset};
use crate::sequence::{common_dim, LatentSequence};

/// Probability that a random incoherent score exceeds a random coherent one,
/// ties counting one half (normalised Mann-Whitney U).
pub fn auc(incoherent: &[f64], coherent: &[f64]) -> Result<f64> {
    if incoherent.is_empty() || coherent.is_empty() {
        return Err(Error::EmptyScores);
    }
    if incoherent.iter().chain(coherent).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut pooled: Vec<(f64, bool)> = incoherent
        .iter()
        .map(|&v| (v, true))
        .chain(coherent.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // midranks, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let n1 = incoherent.len() as f64;
    let n2 = coherent.len() as f64;
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n2))
}

/// Fraction of `(original, altered)` pairs where the original scores strictly
/// lower. Ties are failures.
pub fn pairwise_accuracy(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let wins = pairs.iter().filter(|(orig, alt)| orig < alt).count();
    Ok(wins as f64 / pairs.len() as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// 1-D Wasserstein-1 distance between two empirical distributions, computed
/// as the integral of `|F_p^{-1}(u) - F_q^{-1}(u)|` over `u` in `[0, 1]`.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let (p, q) = (sorted(p), sorted(q));
    let (n, m) = (p.len(), q.len());
    if n == m {
        return Ok(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64);
    }
    // Walk the merged quantile breakpoints i/n and j/m using integer
    // numerators over the common denominator n*m.
    let (mut i, mut j) = (0usize, 0usize);
    let mut last = 0usize;
    let mut total = 0.0;
    while i < n && j < m {
        let next_p = (i + 1) * m;
        let next_q = (j + 1) * n;
        let next = next_p.min(next_q);
        total += (next - last) as f64 * (p[i] - q[j]).abs();
        last = next;
        if next_p == next {
            i += 1;
        }
        if next_q == next {
            j += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

/// Min-max rescaling onto `[1, 2]`; a constant column maps to all ones.
pub fn normalize_1_2(column: &[f64]) -> Vec<f64> {
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    column
        .iter()
        .map(|&v| {
            if range > 0.0 {
                1.0 + (v - lo) / range
            } else {
                1.0
            }
        })
        .collect()
}

/// Scores for one row of a shuffle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub doc_id: String,
    /// One-based permutation that produced the shuffled copy.
    pub perm: Vec<usize>,
    pub original: f64,
    pub shuffled: f64,
}

/// Per-document result of a shuffle test at one diffusion coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleEvaluation {
    pub sigma_sq: f64,
    /// `(doc_id, score)` for every original that has at least one shuffle.
    pub originals: Vec<(String, f64)>,
    pub pairs: Vec<PairScore>,
    pub auc: f64,
    pub pairwise_accuracy: f64,
}

impl ShuffleEvaluation {
    /// Recomputes both aggregates from the stored per-document scores.
    pub fn recomputed(&self) -> Result<(f64, f64)> {
        let coherent: Vec<f64> = self.originals.iter().map(|(_, s)| *s).collect();
        let incoherent: Vec<f64> = self.pairs.iter().map(|p| p.shuffled).collect();
        let pairs: Vec<(f64, f64)> = self
            .pairs
            .iter()
            .map(|p| (p.original, p.shuffled))
            .collect();
        Ok((auc(&incoherent, &coherent)?, pairwise_accuracy(&pairs)?))
    }
}

/// Scores every original and every shuffled copy of a dataset at `sigma_sq`.
///
/// The coherent class holds each original that has at least one shuffled
/// copy (once); the incoherent class holds every shuffled copy.
pub fn evaluate_shuffle_task(
    corpus: &[LatentSequence],
    dataset: &ShuffleDataset,
    sigma_sq: f64,
) -> Result<ShuffleEvaluation> {
    if dataset.pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let mut used: Vec<usize> = dataset.pairs.iter().map(|p| p.doc_index).collect();
    used.sort_unstable();
    used.dedup();
    let original_scores: Vec<f64> = used
        .par_iter()
        .map(|&i| bbscore(&corpus[i], sigma_sq))
        .collect::<Result<_>>()?;
    let lookup = |i: usize| original_scores[used.binary_search(&i).expect("index collected above")];
    let shuffled_scores: Vec<f64> = dataset
        .pairs
        .par_iter()
        .map(|p| bbscore(&p.shuffled, sigma_sq))
        .collect::<Result<_>>()?;

    let originals: Vec<(String, f64)> = used
        .iter()
        .zip(&original_scores)
        .map(|(&i, &s)| (corpus[i].doc_id().to_string(), s))
        .collect();
    let pairs: Vec<PairScore> = dataset
        .pairs
        .iter()
        .zip(&shuffled_scores)
        .map(|(p, &s)| PairScore {
            doc_id: p.doc_id.clone(),
            perm: p.perm.to_one_based(),
            original: lookup(p.doc_index),
            shuffled: s,
        })
        .collect();
    let mut eval = ShuffleEvaluation {
        sigma_sq,
        originals,
        pairs,
        auc: 0.0,
        pairwise_accuracy: 0.0,
    };
    (eval.auc, eval.pairwise_accuracy) = eval.recomputed()?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma_sq: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub points: Vec<SweepPoint>,
    /// The corpus estimate the sweep is compared against, if supplied.
    pub estimate: Option<f64>,
    /// Index of the grid point nearest `estimate` on a log scale.
    pub nearest_to_estimate: Option<usize>,
}

impl SigmaSweep {
    /// `sigma,auc` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,auc\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.sigma_sq, p.auc);
        }
        out
    }
}

/// Shuffle-test AUC at every diffusion coefficient of `grid`.
pub fn sigma_sweep(
    corpus: &[LatentSequence],
    dataset: &ShuffleDataset,
    grid: &[f64],
    estimate: Option<f64>,
) -> Result<SigmaSweep> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty sigma grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::NonPositiveSigma(bad));
    }
    let points = grid
        .iter()
        .map(|&sigma_sq| {
            Ok(SweepPoint {
                sigma_sq,
                auc: evaluate_shuffle_task(corpus, dataset, sigma_sq)?.auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nearest_to_estimate = estimate.filter(|e| *e > 0.0).map(|e| {
        grid.iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1.ln() - e.ln())
                    .abs()
                    .total_cmp(&(b.1.ln() - e.ln()).abs())
            })
            .map(|(i, _)| i)
            .expect("grid is nonempty")
    });
    Ok(SigmaSweep {
        points,
        estimate,
        nearest_to_estimate,
    })
}

/// Per-position latent statistics after resampling every document to a
/// common length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProfile {
    pub length: usize,
    pub dim: usize,
    /// `mean[pos][dim]`
    pub mean: Vec<Vec<f64>>,
    /// Population variance across documents, `variance[pos][dim]`.
    pub variance: Vec<Vec<f64>>,
    pub n_docs: usize,
    pub skipped: Vec<String>,
}

impl TrajectoryProfile {
    /// Variance summed over dimensions at each position.
    pub fn total_variance(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.iter().sum()).collect()
    }

    /// `pos,dim,mean,var` CSV with a header row; positions are one-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pos,dim,mean,var\n");
        for (pos, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            for d in 0..self.dim {
                let _ = writeln!(out, "{},{},{},{}", pos + 1, d, m[d], v[d]);
            }
        }
        out
    }
}

/// Linear interpolation of `s` onto `length` evenly spaced positions that
/// span the first row to the last row inclusive.
pub fn resample(s: &LatentSequence, length: usize) -> Vec<Vec<f64>> {
    let span = (s.len() - 1) as f64;
    (0..length)
        .map(|k| {
            let x = k as f64 * span / (length - 1) as f64;
            let lo = (x.floor() as usize).min(s.len() - 1);
            let hi = (lo + 1).min(s.len() - 1);
            let frac = x - lo as f64;
            s.row(lo)
                .iter()
                .zip(s.row(hi))
                .map(|(a, b)| if frac == 0.0 { *a } else { a + frac * (b - a) })
                .collect()
        })
        .collect()
}

/// Mean and variance of resampled trajectories at each position.
///
/// Single-row documents cannot be interpolated and are skipped with a warning.
pub fn trajectory_profile(corpus: &[LatentSequence], length: usize) -> Result<TrajectoryProfile> {
    if length < 2 {
        return Err(Error::InvalidConfig(
            "profile length must be at least 2".into(),
        ));
    }
    let dim = common_dim(corpus)?;
    let (usable, short): (Vec<&LatentSequence>, Vec<&LatentSequence>) =
        corpus.iter().partition(|s| s.len() >= 2);
    let skipped: Vec<String> = short.iter().map(|s| s.doc_id().to_string()).collect();
    for id in &skipped {
        log::warn!("skipping single-row document {id} in trajectory profile");
    }
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let resampled: Vec<Vec<Vec<f64>>> = usable.par_iter().map(|s| resample(s, length)).collect();
    let n = resampled.len() as f64;
    let mut mean = vec![vec![0.0; dim]; length];
    for doc in &resampled {
        for (m, row) in mean.iter_mut().zip(doc) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
    }
    mean.iter_mut().flatten().for_each(|v| *v /= n);
    let mut variance = vec![vec![0.0; dim]; length];
    for doc in &resampled {
        for ((v, row), m) in variance.iter_mut().zip(doc).zip(&mean) {
            for d in 0..dim {
                v[d] += (row[d] - m[d]).powi(2);
            }
        }
    }
    variance.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(TrajectoryProfile {
        length,
        dim,
        mean,
        variance,
        n_docs: resampled.len(),
        skipped,
    })
}

/// Per-document diffusion estimates, documents too short for an estimate dropped.
pub fn sigma_distribution(corpus: &[LatentSequence]) -> Vec<f64> {
    corpus
        .par_iter()
        .filter_map(|s| estimate_sigma_sq_doc(s).ok())
        .collect()
}

/// Summary emitted by scoring commands: per-document entries plus aggregates
/// that can be recomputed from them, and the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: String,
    pub documents: Vec<DocumentScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<ShuffleEvaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_matrix: Option<DistanceMatrix>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub doc_id: String,
    pub len: usize,
    pub global: f64,
    /// `(w, score)`, in the order requested; absent windows did not fit.
    pub windowed: Vec<(usize, f64)>,
    pub sigma_floored: bool,
}

/// Row-labelled, column-labelled matrix of distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `values[row][column]`
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// CSV with a header of column labels and one labelled line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source");
        for c in &self.columns {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (r, vals) in self.rows.iter().zip(&self.values) {
            out.push_str(r);
            for v in vals {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
