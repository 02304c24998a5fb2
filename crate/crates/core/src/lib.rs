//! Antimicrobial-resistance prediction from ordered SNP token sequences.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod gbt;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
