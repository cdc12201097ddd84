//! File formats, synthetic data and the command-line tool around
//! [`hydraprompt_core`].

pub mod error;
pub mod ppm;
pub mod preprocess;
pub mod synth;
pub mod dataset;
pub mod checkpoint;
pub mod report;
pub mod cli;

pub use error::{Error, Result};
