//! Coarse-to-fine human motion prediction.
//!
//! A graph-convolutional predictor maps DCT coefficients of a padded motion
//! history to a coarse prediction of the whole sequence; cascaded refinement
//! stages correct it from the fusion of history and coarse prediction. During
//! training, a conditional generator/discriminator pair learns the coarse
//! errors of one subject and injects generated errors into the refinement
//! input for the other subjects.

pub mod ablation;
pub mod adversarial;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dct;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod motion;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod refine;
pub mod training;

pub use error::{Error, ParseError, Result};
