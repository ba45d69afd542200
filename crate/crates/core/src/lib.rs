//! Joint time-frequency scattering features, metric learning and
//! timbre-similarity retrieval.

pub mod audio;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod features;
pub mod filterbank;
pub mod format;
pub mod metric;
pub mod mfcc;
pub mod perceptual;
pub mod pipeline;
pub mod retrieval;
pub mod scalogram;
pub mod scattering;
pub mod synth;

pub use error::{Error, Result};
