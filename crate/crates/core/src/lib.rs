//! Unsupervised domain adaptation for gaze regression.
//!
//! The library represents each unlabeled target prediction as a sum-to-one
//! combination of neighboring source gaze labels, transfers those weights
//! into embedding space to form hypothesis embeddings, and minimizes the
//! embedding-prediction-consistency loss jointly with the supervised gaze
//! loss. A synthetic multi-subject domain simulator stands in for real image
//! datasets so the per-subject bias phenomenon and its removal stay
//! reproducible on a desk machine.

pub mod checkpoint;
pub mod config;
pub mod epc;
pub mod error;
pub mod evaluation;
pub mod gaze;
pub mod llr;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
