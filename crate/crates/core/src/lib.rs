//! Momentum contrastive distillation for paired image-text encoders, with a
//! synthetic scene corpus, training loop and evaluation suite.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod plot;
pub mod rng;
pub mod schedules;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
