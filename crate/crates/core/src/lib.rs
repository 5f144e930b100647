//! brainlens decomposes per-region neural response matrices into component
//! patterns, retrieves each pattern's top-activating stimuli, generates and
//! scores natural-language hypotheses about what each pattern represents, and
//! reports interpretability metrics.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`domain`] / [`matrix`] / [`stats`]: data model, ROI partitioning and
//!   bit-exact persistence for every matrix artifact.
//! - [`decomp`]: the five decomposition families (voxel basis, PCA, NMF,
//!   ICA, sparse autoencoder) and coefficient projection.
//! - [`retrieve`]: top-activating stimulus retrieval and embedding-based
//!   consistency triage.
//! - [`annotate`] / [`explain`]: caption/hypothesis/label/embedding clients
//!   (oracle or HTTP) and the hypothesis dictionary.
//! - [`label`]: shortlist-then-verify binary stimulus x hypothesis labeling.
//! - [`score`]: alignment scoring, pattern/hypothesis search, dedup and the
//!   two interpretability metrics under the ranking/evaluation split.
//! - [`synth`]: a fully-known synthetic world used as ground truth.
//! - [`pipeline`] / [`report`]: manifest-driven stage orchestration.

pub mod decomp;
pub mod domain;
pub mod error;
pub mod matrix;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Schema version stamped into every persisted artifact.
pub const SCHEMA_VERSION: u32 = 1;
