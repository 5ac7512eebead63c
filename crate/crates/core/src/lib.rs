//! Simulation and reconstruction toolkit for subsampled Fourier ptychography.
//!
//! The pipeline has three parts:
//!
//! * **Forward model** ([`field`], [`measurement`]): a ground-truth image is
//!   Fourier-transformed, bandpass-filtered by an array of circular pupil
//!   masks (one per camera), transformed back, reduced to its magnitude,
//!   randomly subsampled, and perturbed with Gaussian noise.
//! * **Solvers** ([`recon_classic`], [`recon_gen`]): classical alternating
//!   projections (error reduction), a DCT-sparsity variant, an untrained
//!   convolutional-decoder prior fit by gradient descent ([`decoder`]), and
//!   latent optimization through an invertible normalizing flow ([`flow`]).
//!   The gradient-based solvers run on the reverse-mode engine in
//!   [`autodiff`].
//! * **Evaluation** ([`metrics`]): PSNR and SSIM against the ground truth.
//!
//! All randomized operations are pure functions of their inputs and an
//! explicit seed; repeated runs are bit-identical.

pub mod autodiff;
pub mod dct;
pub mod decoder;
pub mod error;
pub mod field;
pub mod flow;
pub mod kv;
pub mod measurement;
pub mod metrics;
pub mod recon_classic;
pub mod recon_gen;
pub mod rng;
pub mod synth;
pub mod threads;

pub use error::{Error, Result};
pub use field::{
    CameraArray, ComplexField, NoiseSpec, PupilMask, RealImage, SubsampleMask,
};
pub use measurement::MeasurementSet;
pub use metrics::MetricReport;
pub use recon_gen::{GenReconConfig, MethodSpec, ReconResult};
