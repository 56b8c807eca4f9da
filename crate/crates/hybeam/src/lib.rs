//! Minimum symbol-error-rate design of hybrid analog-digital transceivers
//! for multi-user massive MIMO.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: clustered and Gaussian channel generation, CSI errors,
//!   binary channel datasets.
//! - [`transceiver`]: system configuration, constellations, the hybrid
//!   beamformer state, the signal chain and detection.
//! - [`mser`]: the tail integral, kernel and exact output densities, per
//!   stream SER terms and the batch loss.
//! - [`gd`]: closed-form Wirtinger gradients and the alternating
//!   gradient-descent design.
//! - [`unfold`]: the deep-unfolding network with its hand-written reverse
//!   pass and SGD training.
//! - [`eval`]: Monte-Carlo SER, analytical SER, finite-difference checks and
//!   experiment runners.

mod chain;
pub mod channel;
pub mod error;
pub mod eval;
pub mod gd;
pub mod mser;
pub mod seed;
pub mod transceiver;
pub mod unfold;

pub use error::{Error, Result};

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense real matrix, used for phase parameters.
pub type RMat = DMatrix<f64>;
/// Complex scalar.
pub type C64 = Complex64;
