//! Decoder-independent performance bounds for lensless imaging encoders.
//!
//! The forward model is a dense full-convolution system matrix `H`; under
//! Gaussian or Poisson detection noise the Fisher information about the
//! object intensities has a closed form, and the diagonal of its inverse
//! bounds the variance of any unbiased reconstruction. Monte Carlo and
//! reference estimators are included to check those closed forms.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod fisher;
pub mod imaging;
pub mod noise;
pub mod objects;
pub mod psf;
pub mod rng;

pub use error::{Error, Result};
pub use fisher::{
    crb_from_fisher, crb_summary, CrbMap, CrbSummary, EpsilonMode, FisherMatrix, Provenance,
};
pub use imaging::{devectorize, vectorize, ImageGrid, Shape, SystemMatrix, VectorizedObject};
pub use noise::{Measurement, NoiseModel};
pub use objects::{generate_object, sparsity, ObjectKind, ObjectSpec};
pub use psf::{generate_psf, multiplexing_index, PsfKind, PsfSpec};
