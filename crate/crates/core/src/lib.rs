//! Ensemble trajectory prediction.
//!
//! Base learners are convolutional-social-pooling encoder/decoder networks trained
//! on bootstrap resamples of a trajectory dataset. Their maneuver predictions are
//! combined by plurality voting and their per-step bivariate Gaussian parameters by
//! simple averaging.
//!
//! Module map:
//! - [`tensor`], [`autodiff`], [`nn`], [`optim`]: the numeric core.
//! - [`data`]: ingestion, maneuver labels, social-grid samples, splits and bootstrap sets.
//! - [`model`]: the base learner and its weight container.
//! - [`training`]: loss and Adam training of single learners and fleets.
//! - [`ensemble`]: voting, averaging and numbered ensemble learners.
//! - [`evaluation`]: RMSE/NLL over horizons, fleet variance, latency benchmarks.
//! - [`synth`]: synthetic highway scenarios with known maneuvers.

// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod ensemble;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod training;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use tensor::{Tensor, TensorError};

/// Derives an independent seed for `stream` from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}
