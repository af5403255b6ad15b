//! Desk-scale meta-learning with auxiliary-data regularization.
//!
//! The crate trains a small two-head classifier (a shared feed-forward
//! base with parallel target and source heads) three ways — plain
//! fine-tuning, joint training with an auxiliary-task regularizer, and
//! a regularized meta objective whose gradient differentiates through
//! one inner adaptation step — and scores auxiliary samples by their
//! normalized target-head response to select a task-relevant subset.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32`/`f64`);
//! `f64` is the default type parameter everywhere and the precision all
//! shipped tolerances assume.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metatrain;
pub mod model;
pub mod scalar;
pub mod selection;

pub use autodiff::{grad, hvp, value, value_and_grad, HvpBackend, Layout, ParamVector, Tensor};
pub use data::{Batch, Dataset, SyntheticTask, TaskSpec};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ResultTable};
pub use metatrain::{Method, TrainConfig, TrainReport};
pub use model::{ModelConfig, TwoHeadParams};
pub use scalar::Scalar;
pub use selection::{ScoredSample, SelectionConfig};
