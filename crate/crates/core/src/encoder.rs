//! Bridge encoder: an MLP head over frozen language-model hidden states,
//! trained so that sentence triplets drawn from one document look like
//! samples from a Brownian bridge in latent space.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, softmax, Activation, Mlp, Sgd, Trace};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::sequence::{common_dim, HiddenStateSequence, LatentSequence, Sequence};

pub const DEFAULT_HIDDEN_DIM: usize = 128;
pub const DEFAULT_OUTPUT_DIM: usize = 8;

/// Two-layer MLP mapping `d`-dimensional hidden states to latents.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    net: Mlp,
}

impl MlpEncoder {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(&[input_dim, hidden_dim, output_dim], activation, rng)?,
        })
    }

    pub fn from_network(net: Mlp) -> Result<Self> {
        if net.layers().len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "encoder needs exactly two layers, got {}",
                net.layers().len()
            )));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.net.layers()[0].out_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn activation(&self) -> Activation {
        self.net.activation()
    }

    /// Row-wise encoding; row order is preserved.
    pub fn encode(&self, h: &HiddenStateSequence) -> Result<LatentSequence> {
        if h.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: h.dim(),
            });
        }
        let data: Vec<f64> = h.rows().flat_map(|r| self.net.forward(r)).collect();
        Sequence::from_flat(h.doc_id(), self.output_dim(), data)
    }

    pub fn encode_corpus(&self, corpus: &[HiddenStateSequence]) -> Result<Vec<LatentSequence>> {
        use rayon::prelude::*;
        corpus.par_iter().map(|h| self.encode(h)).collect()
    }
}

/// Three sentences `i1 < i2 < i3` of one document and their hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    /// Index of the source document within its corpus.
    pub doc: usize,
    pub indices: [usize; 3],
    pub states: [Vec<f64>; 3],
}

impl Triplet {
    pub fn new(doc: usize, indices: [usize; 3], states: [Vec<f64>; 3]) -> Result<Self> {
        let [a, b, c] = indices;
        if !(a < b && b < c) {
            return Err(Error::InvalidTriplet(a, b, c));
        }
        let d = states[0].len();
        if states.iter().any(|s| s.len() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                found: states.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
            });
        }
        Ok(Self {
            doc,
            indices,
            states,
        })
    }

    /// Takes rows `indices` (zero-based) from `seq`.
    pub fn from_sequence(
        doc: usize,
        seq: &HiddenStateSequence,
        indices: [usize; 3],
    ) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= seq.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                lo: 0,
                hi: seq.len().saturating_sub(1),
            });
        }
        let states = indices.map(|i| seq.row(i).to_vec());
        Self::new(doc, indices, states)
    }

    /// Interpolation weight of the far endpoint, `(i2 - i1) / (i3 - i1)`.
    pub fn delta(&self) -> f64 {
        let [a, b, c] = self.indices;
        (b - a) as f64 / (c - a) as f64
    }

    /// Bridge variance at the midpoint, `(i2 - i1)(i3 - i2) / (i3 - i1)`.
    pub fn variance(&self) -> f64 {
        let [a, b, c] = self.indices;
        ((b - a) * (c - b)) as f64 / (c - a) as f64
    }
}

/// Which batch midpoints compete with an anchor's own midpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negatives {
    /// Every midpoint in the batch, the anchor's own included.
    #[default]
    InBatch,
    /// The anchor's own midpoint plus midpoints from other documents.
    CrossDocOnly,
}

impl std::str::FromStr for Negatives {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_batch" => Ok(Negatives::InBatch),
            "cross_doc_only" => Ok(Negatives::CrossDocOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown negatives mode {other:?}"
            ))),
        }
    }
}

fn bridge_logit(mid: &[f64], start: &[f64], end: &[f64], delta: f64, variance: f64) -> f64 {
    let r2: f64 = mid
        .iter()
        .zip(start.iter().zip(end))
        .map(|(&m, (&a, &b))| {
            let d = m - (1.0 - delta) * a - delta * b;
            d * d
        })
        .sum();
    -r2 / (2.0 * variance)
}

/// Bridge log-density of the triplet's latent midpoint, up to constants.
/// Always nonpositive.
pub fn bridge_distance(t: &Triplet, enc: &MlpEncoder) -> Result<f64> {
    let z = encode_states(t, enc)?;
    Ok(bridge_logit(&z[1], &z[0], &z[2], t.delta(), t.variance()))
}

fn encode_states(t: &Triplet, enc: &MlpEncoder) -> Result<[Vec<f64>; 3]> {
    if t.states[0].len() != enc.input_dim() {
        return Err(Error::DimMismatch {
            expected: enc.input_dim(),
            found: t.states[0].len(),
        });
    }
    Ok([0, 1, 2].map(|j| enc.net.forward(&t.states[j])))
}

fn candidates(batch: &[Triplet], anchor: usize, negatives: Negatives) -> Vec<usize> {
    match negatives {
        Negatives::InBatch => (0..batch.len()).collect(),
        Negatives::CrossDocOnly => (0..batch.len())
            .filter(|&b| b == anchor || batch[b].doc != batch[anchor].doc)
            .collect(),
    }
}

struct EncodedBatch {
    traces: Vec<[Trace; 3]>,
}

impl EncodedBatch {
    fn latent(&self, t: usize, j: usize) -> &[f64] {
        self.traces[t][j].output()
    }
}

fn encode_batch(batch: &[Triplet], enc: &MlpEncoder) -> Result<EncodedBatch> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty triplet batch".into()));
    }
    let d = enc.input_dim();
    if let Some(t) = batch.iter().find(|t| t.states[0].len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            found: t.states[0].len(),
        });
    }
    let traces = batch
        .iter()
        .map(|t| [0, 1, 2].map(|j| enc.net.forward_trace(&t.states[j])))
        .collect();
    Ok(EncodedBatch { traces })
}

fn anchor_logits(batch: &[Triplet], enc: &EncodedBatch, a: usize, cands: &[usize]) -> Vec<f64> {
    let t = &batch[a];
    cands
        .iter()
        .map(|&b| {
            bridge_logit(
                enc.latent(b, 1),
                enc.latent(a, 0),
                enc.latent(a, 2),
                t.delta(),
                t.variance(),
            )
        })
        .collect()
}

/// InfoNCE-style contrastive loss averaged over the anchors of a batch.
///
/// For each anchor the candidate midpoints are scored with the anchor's own
/// endpoints and time indices; the loss is the negative log-softmax of the
/// anchor's own midpoint.
pub fn contrastive_loss(batch: &[Triplet], enc: &MlpEncoder, negatives: Negatives) -> Result<f64> {
    let encoded = encode_batch(batch, enc)?;
    let total: f64 = (0..batch.len())
        .map(|a| {
            let cands = candidates(batch, a, negatives);
            let logits = anchor_logits(batch, &encoded, a, &cands);
            let own = cands
                .iter()
                .position(|&b| b == a)
                .expect("anchor is its own candidate");
            log_sum_exp(&logits) - logits[own]
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient with respect to every encoder parameter.
pub fn loss_gradients(
    batch: &[Triplet],
    enc: &MlpEncoder,
    negatives: Negatives,
) -> Result<(f64, Mlp)> {
    let encoded = encode_batch(batch, enc)?;
    let out_dim = enc.output_dim();
    let n = batch.len() as f64;
    // gradients with respect to the latent of every (triplet, slot)
    let mut latent_grads =
        vec![[vec![0.0; out_dim], vec![0.0; out_dim], vec![0.0; out_dim]]; batch.len()];
    let mut total = 0.0;

    for a in 0..batch.len() {
        let t = &batch[a];
        let (delta, variance) = (t.delta(), t.variance());
        let cands = candidates(batch, a, negatives);
        let logits = anchor_logits(batch, &encoded, a, &cands);
        let own = cands
            .iter()
            .position(|&b| b == a)
            .expect("anchor is its own candidate");
        total += log_sum_exp(&logits) - logits[own];

        let probs = softmax(&logits);
        let (start, end) = (encoded.latent(a, 0), encoded.latent(a, 2));
        let mut grad_interp = vec![0.0; out_dim];
        for (c, &b) in cands.iter().enumerate() {
            // dL/dlogit, scaled by the batch mean
            let weight = (probs[c] - if b == a { 1.0 } else { 0.0 }) / n;
            if weight == 0.0 {
                continue;
            }
            let mid = encoded.latent(b, 1);
            for j in 0..out_dim {
                let r = mid[j] - (1.0 - delta) * start[j] - delta * end[j];
                let g = weight * r / variance;
                latent_grads[b][1][j] -= g;
                grad_interp[j] += g;
            }
        }
        for j in 0..out_dim {
            latent_grads[a][0][j] += (1.0 - delta) * grad_interp[j];
            latent_grads[a][2][j] += delta * grad_interp[j];
        }
    }

    let mut grads = enc.net.zeros_like();
    for (traces, g) in encoded.traces.iter().zip(&latent_grads) {
        for slot in 0..3 {
            enc.net.backward(&traces[slot], &g[slot], &mut grads);
        }
    }
    Ok((total / n, grads))
}

/// Draws `count` triplets with strictly increasing row indices, uniformly
/// over all `C(T, 3)` index combinations.
pub fn sample_triplets(
    doc: &HiddenStateSequence,
    doc_index: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Triplet>> {
    if doc.len() < 3 {
        return Err(Error::SequenceTooShort {
            doc_id: doc.doc_id().to_string(),
            len: doc.len(),
            min: 3,
        });
    }
    (0..count)
        .map(|_| {
            let mut picked = index::sample(rng, doc.len(), 3).into_vec();
            picked.sort_unstable();
            Triplet::from_sequence(doc_index, doc, [picked[0], picked[1], picked[2]])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub negatives: Negatives,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            output_dim: DEFAULT_OUTPUT_DIM,
            activation: Activation::Relu,
            negatives: Negatives::InBatch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: MlpEncoder,
    /// Mean batch loss of each epoch, measured before that batch's update.
    pub loss_trace: Vec<f64>,
}

/// Trains a freshly initialised encoder.
pub fn train_encoder(corpus: &[HiddenStateSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = common_dim(corpus)?;
    let mut init_rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let encoder = MlpEncoder::new(
        dim,
        cfg.hidden_dim,
        cfg.output_dim,
        cfg.activation,
        &mut init_rng,
    )?;
    train_encoder_from(encoder, corpus, cfg)
}

/// Continues training `encoder` on `corpus`.
///
/// Each epoch samples `ceil(T / 3)` triplets from every document with at
/// least three sentences, shuffles them and walks them in batches.
pub fn train_encoder_from(
    mut encoder: MlpEncoder,
    corpus: &[HiddenStateSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = common_dim(corpus)?;
    if dim != encoder.input_dim() {
        return Err(Error::DimMismatch {
            expected: encoder.input_dim(),
            found: dim,
        });
    }
    let usable: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus[i].len() >= 3)
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidConfig(
            "every document is too short to sample triplets".into(),
        ));
    }
    if usable.len() < corpus.len() {
        log::warn!(
            "skipping {} documents shorter than three sentences",
            corpus.len() - usable.len()
        );
    }

    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 1 + epoch as u64));
        let mut triplets = Vec::new();
        for &i in &usable {
            let count = corpus[i].len().div_ceil(3);
            triplets.extend(sample_triplets(&corpus[i], i, count, &mut rng)?);
        }
        triplets.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in triplets.chunks(cfg.batch_size) {
            let (loss, grads) = loss_gradients(batch, &encoder, cfg.negatives)?;
            opt.step(&mut encoder.net, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        if !encoder.net.is_finite() {
            return Err(Error::Numeric(format!(
                "encoder parameters diverged in epoch {epoch}"
            )));
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(TrainOutcome {
        encoder,
        loss_trace,
    })
}
