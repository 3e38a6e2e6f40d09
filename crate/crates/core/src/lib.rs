//! Brownian-bridge coherence scoring of latent document trajectories.
//!
//! Documents are sequences of latent states. A Brownian bridge pinned at a
//! document's first and last state gives a reference for how the interior
//! should wander; the BBScore measures how far a document departs from it.

pub mod bridge;
pub mod classifier;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sequence;
pub mod storage;

pub use bridge::{
    bbscore, bbscore_windowed, estimate_sigma_sq_corpus, estimate_sigma_sq_doc, log_likelihood,
    simulate_bridge, simulate_corpus, BridgeSimConfig, CorpusSimConfig, DiffusionEstimate,
    SIGMA_FLOOR,
};
pub use encoder::{contrastive_loss, train_encoder, MlpEncoder, Negatives, TrainConfig, Triplet};
pub use error::{Error, ErrorClass, Result};
pub use harness::{make_shuffle_dataset, shuffle, Permutation, ShuffleDataset, ShuffleKind};
pub use sequence::{HiddenStateSequence, LatentSequence, Sequence};
