//! Latent anchor-word plans for story generation: a shared-backbone prior
//! and decoder, amortized posteriors over anchor words, three-stage ELBO
//! training, nucleus sampling, and evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod tape;
pub mod training;

pub use checkpoint::{Checkpoint, RunManifest};
pub use config::RunConfig;
pub use corpus::{Special, StopwordSet, Story, TokenizedStory, Vocabulary};
pub use error::{Error, Result};
pub use inference::{InferenceConfig, InferenceNet, PosteriorMode, SentencePosterior};
pub use model::{AnchorEntry, DecoderMode, Generator, ModelConfig, PlanSample};
pub use training::{TrainMode, TrainingConfig};
