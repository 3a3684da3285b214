//! Gradient-based optimizers and a benchmark harness for least-squares
//! regression.
//!
//! The crate is layered bottom-up:
//!
//! * [`numerics`]: dense vectors/matrices, Cholesky solve, pinned PRNG;
//! * [`dataset`]: synthetic data generation and train/validation split;
//! * [`model`]: linear model, MSE/MAE losses, gradient check, closed form;
//! * [`optimizers`]: SGD, Momentum, NAG, Adagrad, RMSProp, Adadelta, Adam;
//! * [`trainer`]: batch sampling and the epoch loop;
//! * [`bench`]: the experiment grid, CSV output, charts and the CLI.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dataset;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optimizers;
pub mod trainer;

pub use error::{Error, Result};
