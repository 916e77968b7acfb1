//! Truncated path signatures as a differentiable, composable layer.
//!
//! * [`tensor`]: the truncated tensor algebra the signature lives in.
//! * [`signature`]: Chen-fold signatures, streaming updates, time augmentation.
//! * [`autodiff`]: reverse-mode gradients of the signature and inversion.
//! * [`streamnet`]: stream-preserving maps, lifts and deep signature models.
//! * [`kernel`]: normalized signature kernel, MMD and its permutation test.
//! * [`synth`]: seeded Brownian / OU / fractional Brownian paths, pen strokes,
//!   and the rescaled-range Hurst estimator.
//! * [`experiments`]: the inversion, Hurst-regression and generative runs.

pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod signature;
pub mod stream;
pub mod streamnet;
pub mod synth;
pub mod tensor;

pub use autodiff::{
    increment_rmse, invert_signature, inversion_loss, signature_vjp, InversionConfig,
    InversionResult, SigGradient,
};
pub use error::{Result, SigError};
pub use signature::{signature, time_augment, update_signature};
pub use stream::{Stream, StreamBatch};
pub use tensor::{sig_dim, TruncatedTensor};

/// Crate version recorded in experiment reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
