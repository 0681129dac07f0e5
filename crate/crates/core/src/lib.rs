//! Frequency-refined augmentation for contrastive learning on time series.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: half-spectrum DFT, its inverse and adjoint, and the
//!   identities (Parseval, conjugate symmetry, basis orthogonality) used as
//!   correctness oracles;
//! * [`frera`]: the learned view generator driven by an importance vector;
//! * [`nn`]: FCN encoder, MLP projector, SGD and Adam;
//! * [`objective`]: InfoNCE, the L1 mask regularizer and their sum;
//! * [`pipeline`]: datasets, sampling, joint pretraining, linear evaluation
//!   and checkpoints;
//! * [`analysis`]: mutual-information estimators, synthetic data with known
//!   label-carrying frequency bins, and predefined baseline augmentations;
//! * [`properties`]: executable property suite behind `frera properties`.

pub mod analysis;
pub mod error;
pub mod frera;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod properties;
pub mod spectral;

pub use error::{Error, Result};
