//! Self-supervised structure learning for brain connectivity networks.
//!
//! The pipeline ingests per-subject multivariate time series, learns a
//! functional (symmetric prior) and an effective (directed prior) graph per
//! subject with a multi-head weighted-cosine learner fused with fixed
//! statistical priors, refines graph and node representations jointly over
//! unrolled rounds through a multi-state graph encoder, pretrains with a
//! cross-view contrastive objective, and fine-tunes only the encoder plus a
//! small head for classification.
//!
//! Modules follow the pipeline: [`signals`] (data model and synthetic
//! generator), [`priors`] (Pearson and transfer entropy), [`learner`],
//! [`encoder`], [`losses`], [`model`] (the composed forward/backward),
//! [`optim`] (Adam, training loops, gradient checks), [`eval`] (metrics and
//! cross-validation), [`checkpoint`] (persistence).

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod learner;
pub mod losses;
pub mod model;
pub mod optim;
pub mod priors;
pub mod signals;

pub use config::TrainConfig;
pub use error::{Error, Result};
