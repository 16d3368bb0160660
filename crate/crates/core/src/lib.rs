//! Pair-of-pairs quasi-experimental design for a continuous exposure.
//!
//! The crate implements a two-stage optimal matching pipeline:
//!
//! 1. [`match_bipartite`] pairs early-epoch survey clusters with late-epoch
//!    clusters by geographic proximity (rank-based Mahalanobis distance with a
//!    soft caliper), so that each pair mimics one location observed twice.
//! 2. [`match_nonbipartite`] pairs those pairs with each other on their
//!    covariate trajectories while forcing a difference in exposure change,
//!    producing quadruples with a bigger- and a smaller-exposure-change member.
//!
//! Missing individual outcomes are multiply imputed with a Bayesian linear
//! regression ([`impute`]), the fixed-effects difference-in-differences working
//! model is fit on every completed dataset and pooled with Rubin's rule
//! ([`analyze`]), and [`sensitivity`] reports robustness values for an omitted
//! confounder. [`ingest`] holds the data model, CSV readers and a synthetic
//! generator with known ground truth; [`pipeline`] wires the stages together.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod distances;
pub mod error;
pub mod geo;
pub mod impute;
pub mod ingest;
pub mod match_bipartite;
pub mod match_nonbipartite;
pub mod pipeline;
pub mod rng;
pub mod sensitivity;
pub mod stats;

pub use error::{Error, Result};
pub use ingest::{ClusterRecord, Covariate, Epoch, IndividualRecord, COVARIATES, N_COVARIATES};
pub use match_bipartite::ClusterPair;
pub use match_nonbipartite::QuadMatch;
pub use analyze::{PooledEstimate, RegressionFit};
