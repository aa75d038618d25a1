//! Deterministic simulator for split federated learning.
//!
//! Models are plain MLPs ([`nn`]) that can be cut into client and server
//! parts ([`split`]). Training data is partitioned across clients
//! ([`data`]), clients are ordered per round ([`scheduling`]), and the round
//! engines in [`protocols`] train under SFL, SFL with per-group heads
//! ([`hydra`]), SplitFedV1/V3, SplitNN and multi-head FL. [`metrics`] turns
//! per-round accuracies into forgetting metrics; [`oracle`] holds the
//! brute-force reference implementations used to check all of the above.

pub mod data;
pub mod error;
pub mod hydra;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod protocols;
pub mod scheduling;
pub mod split;

pub use error::{Error, Result};
