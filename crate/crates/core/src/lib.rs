//! Active data-sharing.
//!
//! Pool-based active learning over monitoring data pooled from several machines, where only
//! some machines follow the target distribution. Each cycle scores the unlabeled pool twice:
//! a contrastively trained similarity model estimates how close a sample is to the target
//! machines, and the current anomaly classifier's predictive entropy estimates how
//! informative it is. The binarized similarity acts as a filter on the entropy, and the
//! top of the product is sent to the oracle.

pub mod acquisition;
pub mod audit;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod uncertainty;
pub mod wta;

pub use error::{Error, Result};
