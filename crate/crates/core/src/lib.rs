//! Personalized preference learning by clustering workers.
//!
//! The crate learns Bradley–Terry reward models from pairwise preferences,
//! embeds annotators ("workers") through a shared bilinear backbone, groups
//! them by alternating per-cluster fits with likelihood-argmax reassignment,
//! extracts KL-regularized policies per cluster, and compares clustered
//! against pooled reward models by win-rate. A simulator with known latent
//! worker groups provides ground truth for all of it.

pub mod btl;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
mod par;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
