//! Fourier phase retrieval toolkit.
//!
//! Reconstructs a real, non-negative, support-constrained image from noisy
//! oversampled Fourier magnitudes. The crate provides the classical
//! projection solvers (ER, HIO and an accelerated ER), a multi-restart
//! initialization, an image-to-image refinement loop driven by a small
//! timestep-conditioned denoiser, ensemble aggregation, isotonic uncertainty
//! calibration and image-quality metrics.
//!
//! The crate performs no file IO; formats and the command-line pipeline live
//! in the companion `phaseret` crate.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod denoiser;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod initialization;
pub mod metrics;
pub mod projections;
pub mod refinement;
pub mod rng;
pub mod solvers;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use fourier::{forward, measure, pseudoinverse, residual, snr_db, ComplexSpectrum, SnrMode};
pub use grid::{mean_image, ImageGrid, MagnitudeMeasurements, NoiseModel, Support};
