//! Quantile-function emulation of stochastic simulators and quantile
//! optimization by expected improvement (QFEI).
//!
//! The numerical core is generic over the floating-point type through
//! [`Scalar`]; the aliases at the crate root fix it to `f64` (or `f32`).

pub mod basis;
pub mod emulator;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod nnls;
pub mod qfei;
pub mod quantile;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type QuantileFunction = quantile::DiscretizedQuantileFunction<f64>;
pub type Grid = quantile::ProbabilityGrid<f64>;
pub type Basis = basis::QuantileBasis<f64>;
pub type Gp = gp::GaussianProcessModel<f64>;
pub type Emulator = emulator::QuantileEmulator<f64>;
pub type State = qfei::QfeiState<f64>;
pub type Report = qfei::QfeiReport<f64>;

pub type QuantileFunctionF32 = quantile::DiscretizedQuantileFunction<f32>;
pub type GridF32 = quantile::ProbabilityGrid<f32>;
pub type BasisF32 = basis::QuantileBasis<f32>;
pub type GpF32 = gp::GaussianProcessModel<f32>;
pub type EmulatorF32 = emulator::QuantileEmulator<f32>;
