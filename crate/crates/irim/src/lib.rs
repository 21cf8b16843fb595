//! Undersampled MRI reconstruction with an invertible recurrent inference
//! machine.
//!
//! The library is organized around five layers:
//!
//! * [`mri`] — measurement physics: centered orthonormal 2-D Fourier
//!   transforms, column sampling masks, the stacked coil operator and its
//!   adjoint, the data-consistency gradient, and center crop/pad.
//! * [`nn`] — dense-tensor primitives with hand-written forward and backward
//!   passes (2-D convolution, ReLU, space/depth reshuffles) plus the named
//!   parameter store and its checkpoint format.
//! * [`model`] — the invertible machine itself: state initialization,
//!   additive-coupling update steps conditioned on the data-consistency
//!   gradient, exact step inversion, and the non-invertible output head.
//! * [`backprop`] — the reverse-mode engines. The reversible engine
//!   reconstructs each step's input by inverting the step, so its activation
//!   memory is constant in the number of steps; a stored-activation oracle
//!   and a finite-difference checker back it up.
//! * [`train`] — SSIM loss and gradient, NMSE/PSNR evaluators, Adam with a
//!   step-decay schedule, the training loop, and dataset evaluation.
//!
//! [`phantom`] supplies synthetic data: seeded ellipse phantoms, smooth coil
//! sensitivities, noisy k-space simulation, and the on-disk dataset format.

pub mod backprop;
pub mod error;
pub mod model;
pub mod mri;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
