//! Membership-inference evaluation of small classifiers trained with SGD, SAM, DP-SGD and
//! DP-SAM.
//!
//! The crate trains dense networks ([`nn`]) with the four optimizers in [`optim`], tracks
//! their Rényi-DP cost ([`privacy`]), attacks every per-epoch checkpoint with threshold and
//! shadow-model attacks ([`attacks`]), and summarises repeated runs into privacy/utility
//! frontiers and outlier reports ([`eval`]). [`data`] provides synthetic mixtures, CIFAR and
//! CSV loaders, and the stratified four-way split; [`cli`] is the command-line front end.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod privacy;
pub mod rng;

pub use attacks::{AttackEvaluation, AttackKind, ShadowAttackModel, ThresholdMode, ThresholdModel};
pub use data::{FourWaySplit, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{EpochRecord, ExperimentSpec, FrontierPoint, OutlierReport, RunResult};
pub use nn::{Dataset, Gradient, MlpModel, Sample};
pub use optim::{Checkpoint, LrSchedule, Optimizer, TrainConfig};
pub use privacy::{AccountantConfig, PrivacyParams};
pub use rng::Rng;
