//! FixMatch and KD-FixMatch semi-supervised training on small feedforward
//! classifiers, with the dataset tooling and experiment harness behind the
//! `kdfm` binary.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the double-precision types the trainer uses by default.

pub mod augment;
pub mod cluster;
pub mod ema;
pub mod error;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod ssl;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = matrix::Matrix<f64>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type ParamVector64 = nn::ParamVector<f64>;
pub type ParamVector32 = nn::ParamVector<f32>;
pub type AdamState64 = optim::AdamState<f64>;
pub type EmaState64 = ema::EmaState<f64>;
pub type TrustedSet64 = cluster::TrustedSet<f64>;
pub type TrainState64 = ssl::TrainState<f64>;
pub type Dataset64 = harness::Dataset<f64>;
pub type Dataset32 = harness::Dataset<f32>;
