//! BBScore features, a small perceptron over them, pairwise discrimination
//! and source detection from diffusion-coefficient distributions.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{bbscore, bbscore_windowed};
use crate::error::{Error, Result};
use crate::metrics::{normalize_1_2, sigma_distribution, wasserstein1, DistanceMatrix};
use crate::nn::{log_sum_exp, softmax, Activation, Mlp, Sgd};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sequence::LatentSequence;

/// Window half-widths of the four local features.
pub const FEATURE_WINDOWS: [usize; 4] = [1, 2, 4, 8];
pub const FEATURE_DIM: usize = 1 + FEATURE_WINDOWS.len();

/// `[B_global, B_w1, B_w2, B_w4, B_w8]` for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub doc_id: String,
    pub values: [f64; FEATURE_DIM],
    /// `imputed[j]` is set when window `FEATURE_WINDOWS[j]` did not fit and
    /// its entry was copied from the widest window that did.
    pub imputed: [bool; FEATURE_WINDOWS.len()],
}

impl FeatureVector {
    pub fn global(&self) -> f64 {
        self.values[0]
    }

    /// Element-wise `self - other`.
    pub fn difference(&self, other: &FeatureVector) -> Vec<f64> {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Global and windowed BBScores of `s` at `sigma_sq`.
pub fn extract_features(s: &LatentSequence, sigma_sq: f64) -> Result<FeatureVector> {
    if s.len() < 3 {
        return Err(Error::SequenceTooShort {
            doc_id: s.doc_id().to_string(),
            len: s.len(),
            min: 3,
        });
    }
    let mut values = [0.0; FEATURE_DIM];
    let mut imputed = [false; FEATURE_WINDOWS.len()];
    values[0] = bbscore(s, sigma_sq)?;
    let mut widest = None;
    for (j, &w) in FEATURE_WINDOWS.iter().enumerate() {
        if s.len() > 2 * w {
            let v = bbscore_windowed(s, sigma_sq, w)?;
            values[j + 1] = v;
            widest = Some(v);
        } else {
            // w = 1 always fits once T >= 3
            values[j + 1] = widest.expect("smallest window fits");
            imputed[j] = true;
        }
    }
    Ok(FeatureVector {
        doc_id: s.doc_id().to_string(),
        values,
        imputed,
    })
}

pub fn extract_corpus_features(
    corpus: &[LatentSequence],
    sigma_sq: f64,
) -> Result<Vec<FeatureVector>> {
    corpus
        .par_iter()
        .map(|s| extract_features(s, sigma_sq))
        .collect()
}

/// Three-layer perceptron with fixed input standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp3 {
    net: Mlp,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
}

impl Mlp3 {
    pub fn from_parts(net: Mlp, input_mean: Vec<f64>, input_scale: Vec<f64>) -> Result<Self> {
        if net.layers().len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "three-layer perceptron expected, got {} layers",
                net.layers().len()
            )));
        }
        let d = net.input_dim();
        if input_mean.len() != d || input_scale.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: input_mean.len().max(input_scale.len()),
            });
        }
        if input_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("input scales must be positive".into()));
        }
        Ok(Self {
            net,
            input_mean,
            input_scale,
        })
    }

    /// Unstandardised model (zero mean, unit scale).
    pub fn plain(net: Mlp) -> Result<Self> {
        let d = net.input_dim();
        Self::from_parts(net, vec![0.0; d], vec![1.0; d])
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Class probabilities for a raw input vector.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.net.input_dim(),
                found: x.len(),
            });
        }
        Ok(softmax(&self.net.forward(&self.standardize(x))))
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        self.predict_raw(&f.values)
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_raw(x)?;
        Ok(argmax(&p))
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp3Config {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Fit per-feature mean and scale on the training inputs.
    pub standardize: bool,
}

impl Default for Mlp3Config {
    fn default() -> Self {
        Self {
            hidden: [32, 32],
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 500,
            batch_size: 32,
            seed: 0,
            activation: Activation::Relu,
            standardize: true,
        }
    }
}

/// One labelled training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Mean softmax cross-entropy of `batch` and its parameter gradient.
pub fn mlp3_loss_gradients(model: &Mlp3, batch: &[Sample]) -> Result<(f64, Mlp)> {
    if batch.is_empty() {
        return Err(Error::NoPairs);
    }
    let n = batch.len() as f64;
    let mut grads = model.net.zeros_like();
    let mut total = 0.0;
    for s in batch {
        if s.input.len() != model.net.input_dim() {
            return Err(Error::DimMismatch {
                expected: model.net.input_dim(),
                found: s.input.len(),
            });
        }
        if s.label >= model.n_classes() {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range",
                s.label
            )));
        }
        let trace = model.net.forward_trace(&model.standardize(&s.input));
        let logits = trace.output();
        total += log_sum_exp(logits) - logits[s.label];
        let mut g = softmax(logits);
        g[s.label] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
        model.net.backward(&trace, &g, &mut grads);
    }
    Ok((total / n, grads))
}

pub fn mlp3_loss(model: &Mlp3, batch: &[Sample]) -> Result<f64> {
    Ok(mlp3_loss_gradients(model, batch)?.0)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Mlp3, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoPairs);
    }
    let hits = samples
        .iter()
        .map(|s| Ok(model.classify(&s.input)? == s.label))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

fn fit_standardization(samples: &[Sample], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.input) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for s in samples {
        for ((sc, v), m) in scale.iter_mut().zip(&s.input).zip(&mean) {
            *sc += (v - m).powi(2) / n;
        }
    }
    let scale = scale
        .into_iter()
        .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

#[derive(Debug, Clone)]
pub struct Mlp3Outcome {
    pub model: Mlp3,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains a fresh perceptron on labelled rows; the class count is the
/// largest label plus one.
pub fn train_mlp3(samples: &[Sample], cfg: &Mlp3Config) -> Result<Mlp3Outcome> {
    let first = samples.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.input.len();
    let n_classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let distinct: std::collections::BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let net = Mlp::new(
        &[dim, cfg.hidden[0], cfg.hidden[1], n_classes],
        cfg.activation,
        &mut rng,
    )?;
    let (mean, scale) = if cfg.standardize {
        fit_standardization(samples, dim)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    train_mlp3_from(Mlp3::from_parts(net, mean, scale)?, samples, cfg)
}

/// Continues training `model`; the standardisation is left as is.
pub fn train_mlp3_from(
    mut model: Mlp3,
    samples: &[Sample],
    cfg: &Mlp3Config,
) -> Result<Mlp3Outcome> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grads) = mlp3_loss_gradients(&model, &batch)?;
            opt.step(&mut model.net, &grads);
            total += loss;
            batches += 1;
        }
        if !model.net.is_finite() {
            return Err(Error::Numeric(format!(
                "classifier diverged in epoch {epoch}"
            )));
        }
        loss_trace.push(total / batches as f64);
    }
    Ok(Mlp3Outcome { model, loss_trace })
}

/// How a pair of documents is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Lower global BBScore is taken as the original.
    Raw,
    /// A two-class perceptron on the feature difference decides.
    Clf,
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(PairMode::Raw),
            "clf" => Ok(PairMode::Clf),
            other => Err(Error::InvalidConfig(format!(
                "unknown pairwise mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairChoice {
    First,
    Second,
    Undecided,
}

/// Picks which of `a`, `b` is the original document.
///
/// In `Clf` mode class 1 of `model` means "the first argument is the
/// original" and the model sees `a - b`.
pub fn pairwise_discriminate(
    a: &FeatureVector,
    b: &FeatureVector,
    mode: PairMode,
    model: Option<&Mlp3>,
) -> Result<PairChoice> {
    match mode {
        PairMode::Raw => Ok(match a.global().partial_cmp(&b.global()) {
            Some(std::cmp::Ordering::Less) => PairChoice::First,
            Some(std::cmp::Ordering::Greater) => PairChoice::Second,
            _ => PairChoice::Undecided,
        }),
        PairMode::Clf => {
            let model = model.ok_or(Error::MissingModel)?;
            if model.n_classes() != 2 {
                return Err(Error::InvalidConfig(
                    "pairwise model must have two classes".into(),
                ));
            }
            let p = model.predict_raw(&a.difference(b))?;
            Ok(if p[1] > p[0] {
                PairChoice::First
            } else if p[0] > p[1] {
                PairChoice::Second
            } else {
                PairChoice::Undecided
            })
        }
    }
}

/// Labelled difference rows for `(original, altered)` pairs, each pair
/// contributing both orders.
pub fn pairwise_samples(pairs: &[(FeatureVector, FeatureVector)]) -> Vec<Sample> {
    pairs
        .iter()
        .flat_map(|(orig, alt)| {
            [
                Sample {
                    input: orig.difference(alt),
                    label: 1,
                },
                Sample {
                    input: alt.difference(orig),
                    label: 0,
                },
            ]
        })
        .collect()
}

pub fn train_pairwise(
    pairs: &[(FeatureVector, FeatureVector)],
    cfg: &Mlp3Config,
) -> Result<Mlp3Outcome> {
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let cfg = Mlp3Config {
        // the augmented rows are antisymmetric; keep them centred at zero
        standardize: false,
        ..cfg.clone()
    };
    let mut samples = pairwise_samples(pairs);
    let dim = samples[0].input.len();
    let (_, scale) = fit_standardization(&samples, dim);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let net = Mlp::new(
        &[dim, cfg.hidden[0], cfg.hidden[1], 2],
        cfg.activation,
        &mut rng,
    )?;
    let model = Mlp3::from_parts(net, vec![0.0; dim], scale)?;
    samples.shrink_to_fit();
    train_mlp3_from(model, &samples, &cfg)
}

/// Fraction of `(original, altered)` pairs where the original is picked.
/// Undecided outcomes count as failures.
pub fn pairwise_discrimination_accuracy(
    pairs: &[(FeatureVector, FeatureVector)],
    mode: PairMode,
    model: Option<&Mlp3>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let mut wins = 0usize;
    for (orig, alt) in pairs {
        if pairwise_discriminate(orig, alt, mode, model)? == PairChoice::First {
            wins += 1;
        }
    }
    Ok(wins as f64 / pairs.len() as f64)
}

/// Per-document diffusion estimates of one source's training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaProfile {
    pub label: String,
    pub values: Vec<f64>,
}

impl SigmaProfile {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(Error::DegenerateProfile(label));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Numeric(format!(
                "profile {label} has a negative or non-finite value"
            )));
        }
        Ok(Self { label, values })
    }

    /// Documents shorter than three rows carry no estimate and are dropped.
    pub fn from_corpus(label: impl Into<String>, corpus: &[LatentSequence]) -> Result<Self> {
        Self::new(label, sigma_distribution(corpus))
    }
}

/// A corpus whose source is to be identified.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCorpus {
    pub label: String,
    /// Label of the training profile it truly came from, when known.
    pub source: Option<String>,
    pub docs: Vec<LatentSequence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMode {
    /// Distance between the test corpus's estimate distribution and a profile.
    #[default]
    Corpus,
    /// Mean over test documents of the distance from each single estimate.
    Singleton,
}

impl std::str::FromStr for DetectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(DetectMode::Corpus),
            "singleton" => Ok(DetectMode::Singleton),
            other => Err(Error::InvalidConfig(format!(
                "unknown detection mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRanking {
    pub test: String,
    /// Sources from nearest to farthest.
    pub ranked: Vec<String>,
    pub true_source: Option<String>,
    /// One-based rank of the true source.
    pub true_rank: Option<usize>,
    pub within_top_k: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mode: DetectMode,
    pub top_k: usize,
    /// Rows are training sources, columns test corpora.
    pub distances: DistanceMatrix,
    /// `distances` with every column rescaled onto `[1, 2]`.
    pub normalized: DistanceMatrix,
    pub rankings: Vec<SourceRanking>,
}

/// Matches each test corpus to the training sources by Wasserstein-1
/// distance between diffusion-estimate distributions.
pub fn llm_detect(
    profiles: &[SigmaProfile],
    tests: &[TestCorpus],
    top_k: usize,
    mode: DetectMode,
) -> Result<DetectionReport> {
    if profiles.len() < 2 {
        return Err(Error::InvalidConfig(
            "source detection needs at least two training profiles".into(),
        ));
    }
    if tests.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let test_values: Vec<Vec<f64>> = tests
        .iter()
        .map(|t| {
            let v = sigma_distribution(&t.docs);
            if v.is_empty() {
                Err(Error::DegenerateProfile(t.label.clone()))
            } else {
                Ok(v)
            }
        })
        .collect::<Result<_>>()?;

    // columns[test][source]
    let columns: Vec<Vec<f64>> = test_values
        .par_iter()
        .map(|values| {
            profiles
                .iter()
                .map(|p| match mode {
                    DetectMode::Corpus => wasserstein1(values, &p.values),
                    DetectMode::Singleton => {
                        let total = values
                            .iter()
                            .map(|v| wasserstein1(std::slice::from_ref(v), &p.values))
                            .sum::<Result<f64>>()?;
                        Ok(total / values.len() as f64)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let normalized_columns: Vec<Vec<f64>> = columns.iter().map(|c| normalize_1_2(c)).collect();

    let sources: Vec<String> = profiles.iter().map(|p| p.label.clone()).collect();
    let test_labels: Vec<String> = tests.iter().map(|t| t.label.clone()).collect();
    let transpose = |cols: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..profiles.len())
            .map(|s| cols.iter().map(|c| c[s]).collect())
            .collect()
    };

    let rankings = tests
        .iter()
        .zip(&columns)
        .map(|(t, col)| {
            let mut order: Vec<usize> = (0..profiles.len()).collect();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let ranked: Vec<String> = order.iter().map(|&i| sources[i].clone()).collect();
            let true_rank = t
                .source
                .as_ref()
                .and_then(|s| ranked.iter().position(|r| r == s))
                .map(|p| p + 1);
            SourceRanking {
                test: t.label.clone(),
                ranked,
                true_source: t.source.clone(),
                true_rank,
                within_top_k: t
                    .source
                    .as_ref()
                    .map(|_| true_rank.is_some_and(|r| r <= top_k)),
            }
        })
        .collect();

    Ok(DetectionReport {
        mode,
        top_k,
        distances: DistanceMatrix {
            rows: sources.clone(),
            columns: test_labels.clone(),
            values: transpose(&columns),
        },
        normalized: DistanceMatrix {
            rows: sources,
            columns: test_labels,
            values: transpose(&normalized_columns),
        },
        rankings,
    })
}
