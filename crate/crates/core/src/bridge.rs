//! Brownian bridge mathematics over latent trajectories.
//!
//! Rows are indexed from zero. Row `k` of a `T`-row sequence sits at bridge
//! time `k`, so the first row is pinned at time 0 and the last at `T - 1`.
//! With that convention the interior moments are
//!
//! ```text
//! mu_k    = s_0 + k / (T-1) * (s_{T-1} - s_0)
//! alpha_k = 2 pi k (T-1-k) / (T-1)
//! beta_k  = (T-1) |s_k - mu_k|^2 / (2 k (T-1-k))
//! ```
//!
//! for `k = 1..=T-2`. `beta_k` uses the full squared Euclidean norm across
//! all latent dimensions. The per-document diffusion estimate is the mean of
//! `beta_k` additionally averaged over dimensions.
//!
//! The mean divisor is `T - 1` rather than `T` so that `mu_{T-1}` coincides
//! with the last row.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sequence::{LatentSequence, Sequence};

/// Floor applied to degenerate diffusion estimates before scoring.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Corpus-level diffusion coefficient and the per-document values it pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub sigma_sq: f64,
    pub per_doc: Vec<(String, f64)>,
    pub n_docs: usize,
    pub dim: usize,
}

impl DiffusionEstimate {
    pub fn values(&self) -> Vec<f64> {
        self.per_doc.iter().map(|(_, v)| *v).collect()
    }

    /// The pooled estimate made safe for scoring, and whether the floor was hit.
    pub fn scoring_sigma_sq(&self) -> (f64, bool) {
        floor_sigma_sq(self.sigma_sq)
    }
}

/// Applies [`SIGMA_FLOOR`] to a (possibly degenerate) estimate.
pub fn floor_sigma_sq(sigma_sq: f64) -> (f64, bool) {
    if sigma_sq < SIGMA_FLOOR {
        (SIGMA_FLOOR, true)
    } else {
        (sigma_sq, false)
    }
}

/// Parameters of one simulated bridge path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSimConfig {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Number of rows, including both pinned endpoints.
    pub len: usize,
    pub sigma_sq: f64,
    pub seed: u64,
}

impl BridgeSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::InvalidConfig(format!(
                "bridge length must be at least 2, got {}",
                self.len
            )));
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::NonPositiveSigma(self.sigma_sq));
        }
        if self.start.is_empty() || self.start.len() != self.end.len() {
            return Err(Error::DimMismatch {
                expected: self.start.len(),
                found: self.end.len(),
            });
        }
        if self.start.iter().chain(&self.end).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite bridge endpoint".into()));
        }
        Ok(())
    }
}

fn require_len(s: &LatentSequence, min: usize) -> Result<()> {
    if s.len() < min {
        Err(Error::too_short(s.doc_id(), s.len(), min))
    } else {
        Ok(())
    }
}

fn check_sigma(sigma_sq: f64) -> Result<()> {
    if sigma_sq > 0.0 && sigma_sq.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveSigma(sigma_sq))
    }
}

fn sq_dist_to_interpolant(x: &[f64], from: &[f64], to: &[f64], frac: f64) -> f64 {
    x.iter()
        .zip(from.iter().zip(to))
        .map(|(&v, (&a, &b))| {
            let d = v - (a + frac * (b - a));
            d * d
        })
        .sum()
}

/// Bridge mean at interior row `k` (zero-based, `1 <= k <= T-2`).
pub fn bridge_mean(s: &LatentSequence, k: usize) -> Result<Vec<f64>> {
    require_len(s, 3)?;
    let last = s.len() - 1;
    if k == 0 || k >= last {
        return Err(Error::IndexOutOfRange {
            index: k,
            lo: 1,
            hi: last - 1,
        });
    }
    let frac = k as f64 / last as f64;
    let (a, b) = (s.row(0), s.row(last));
    Ok(a.iter().zip(b).map(|(a, b)| a + frac * (b - a)).collect())
}

/// `alpha_k` for every interior row of a `len`-row sequence.
fn alpha_terms(len: usize) -> impl Iterator<Item = f64> {
    let span = (len - 1) as f64;
    (1..len - 1).map(move |k| {
        let k = k as f64;
        2.0 * PI * k * (span - k) / span
    })
}

/// The `beta_k` terms, one per interior row.
pub fn beta_terms(s: &LatentSequence) -> Result<Vec<f64>> {
    require_len(s, 3)?;
    let last = s.len() - 1;
    let span = last as f64;
    let (a, b) = (s.row(0), s.row(last));
    Ok((1..last)
        .map(|k| {
            let kf = k as f64;
            let frac = kf / span;
            span * sq_dist_to_interpolant(s.row(k), a, b, frac) / (2.0 * kf * (span - kf))
        })
        .collect())
}

/// Per-document maximum-likelihood diffusion coefficient averaged over the
/// latent dimensions: `sum(beta) / (n (T - 2))`.
///
/// Returns 0 for trajectories lying exactly on the endpoint segment.
pub fn estimate_sigma_sq_doc(s: &LatentSequence) -> Result<f64> {
    let betas = beta_terms(s)?;
    Ok(betas.iter().sum::<f64>() / (s.dim() * betas.len()) as f64)
}

/// Pools per-document estimates over a corpus by arithmetic mean.
///
/// Every document must have at least three rows; a shorter one aborts the
/// estimate with an error naming it.
pub fn estimate_sigma_sq_corpus(corpus: &[LatentSequence]) -> Result<DiffusionEstimate> {
    let dim = crate::sequence::common_dim(corpus)?;
    let per_doc = corpus
        .par_iter()
        .map(|s| Ok((s.doc_id().to_string(), estimate_sigma_sq_doc(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let sigma_sq = per_doc.iter().map(|(_, v)| v).sum::<f64>() / per_doc.len() as f64;
    Ok(DiffusionEstimate {
        sigma_sq,
        per_doc,
        n_docs: corpus.len(),
        dim,
    })
}

/// Bridge log-likelihood `-sum_k (ln(alpha_k sigma^2) + beta_k / sigma^2)`.
pub fn log_likelihood(s: &LatentSequence, sigma_sq: f64) -> Result<f64> {
    check_sigma(sigma_sq)?;
    let betas = beta_terms(s)?;
    let ln_sigma = sigma_sq.ln();
    let total: f64 = alpha_terms(s.len())
        .zip(&betas)
        .map(|(alpha, beta)| alpha.ln() + ln_sigma + beta / sigma_sq)
        .sum();
    Ok(-total)
}

/// Global BBScore: `|log_likelihood| / (T - 2)`. Lower is more bridge-like.
pub fn bbscore(s: &LatentSequence, sigma_sq: f64) -> Result<f64> {
    let ll = log_likelihood(s, sigma_sq)?;
    Ok(ll.abs() / (s.len() - 2) as f64)
}

/// Shifting-window BBScore with half-width `w` (window of `2w + 1` rows).
///
/// Within each window the pinned rows are `k - w` and `k + w` and the mean
/// fraction is `(w + 1) / (2w + 1)`. That fraction is not the window
/// midpoint, so unlike [`bbscore`] this score is not reversal-invariant.
pub fn bbscore_windowed(s: &LatentSequence, sigma_sq: f64, w: usize) -> Result<f64> {
    check_sigma(sigma_sq)?;
    if w == 0 {
        return Err(Error::InvalidConfig(
            "window half-width must be positive".into(),
        ));
    }
    let needed = 2 * w + 1;
    if s.len() < needed {
        return Err(Error::WindowExceedsSequence {
            doc_id: s.doc_id().to_string(),
            w,
            needed,
            len: s.len(),
        });
    }
    let wf = w as f64;
    let width = 2.0 * wf + 1.0;
    let frac = (wf + 1.0) / width;
    let ln_alpha = (2.0 * PI * wf * (wf + 1.0) / width).ln();
    let beta_scale = width / (2.0 * wf * (wf + 1.0));
    let ln_sigma = sigma_sq.ln();
    let total: f64 = (w..s.len() - w)
        .map(|k| {
            let r2 = sq_dist_to_interpolant(s.row(k), s.row(k - w), s.row(k + w), frac);
            ln_alpha + ln_sigma + beta_scale * r2 / sigma_sq
        })
        .sum();
    Ok(total.abs() / (s.len() - 2 * w) as f64)
}

/// Draws one bridge path pinned at `cfg.start` and `cfg.end`.
///
/// Interior rows follow `S(t) = a + (t/T')(b - a) + sigma (W_t - (t/T') W_T')`
/// for a standard Gaussian walk `W` on `t = 0..=T'`, `T' = len - 1`. The
/// per-dimension variance at time `t` is `t (T' - t) / T' * sigma^2`.
pub fn simulate_bridge(cfg: &BridgeSimConfig) -> Result<LatentSequence> {
    cfg.validate()?;
    let dim = cfg.start.len();
    let span = cfg.len - 1;
    let mut rng = rng_from_seed(cfg.seed);

    let mut walk = vec![0.0; (span + 1) * dim];
    for t in 1..=span {
        for j in 0..dim {
            let step: f64 = StandardNormal.sample(&mut rng);
            walk[t * dim + j] = walk[(t - 1) * dim + j] + step;
        }
    }

    let sigma = cfg.sigma_sq.sqrt();
    let tail = &walk[span * dim..];
    let mut data = Vec::with_capacity(cfg.len * dim);
    data.extend_from_slice(&cfg.start);
    for t in 1..span {
        let frac = t as f64 / span as f64;
        for j in 0..dim {
            let (a, b) = (cfg.start[j], cfg.end[j]);
            data.push(a + frac * (b - a) + sigma * (walk[t * dim + j] - frac * tail[j]));
        }
    }
    data.extend_from_slice(&cfg.end);
    Sequence::from_flat(format!("sim-{:016x}", cfg.seed), dim, data)
}

/// Settings for a corpus of independently simulated bridges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSimConfig {
    pub docs: usize,
    pub len: usize,
    pub dim: usize,
    pub sigma_sq: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian the endpoints are drawn from; 0 pins
    /// every path at the origin.
    pub endpoint_scale: f64,
}

/// Simulates `cfg.docs` bridges, document `i` drawing from stream `i`.
pub fn simulate_corpus(cfg: &CorpusSimConfig) -> Result<Vec<LatentSequence>> {
    if cfg.docs == 0 {
        return Err(Error::EmptyCorpus);
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidConfig("dim must be positive".into()));
    }
    if !(cfg.endpoint_scale >= 0.0 && cfg.endpoint_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "endpoint scale must be finite and nonnegative, got {}",
            cfg.endpoint_scale
        )));
    }
    (0..cfg.docs)
        .into_par_iter()
        .map(|i| {
            let stream = derive_seed(cfg.seed, i as u64);
            let mut rng = rng_from_seed(stream);
            let mut endpoint = || -> Vec<f64> {
                (0..cfg.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * cfg.endpoint_scale
                    })
                    .collect()
            };
            let start = endpoint();
            let end = endpoint();
            let path = simulate_bridge(&BridgeSimConfig {
                start,
                end,
                len: cfg.len,
                sigma_sq: cfg.sigma_sq,
                seed: derive_seed(stream, u64::MAX),
            })?;
            Ok(path.with_doc_id(format!("sim-{i:05}")))
        })
        .collect()
}
