//! Shrinkage estimation of a location vector under elliptically contoured errors.
//!
//! Sufficient statistics, Baranchik-type estimators, Monte Carlo risk, condition
//! checks for shrinkage functions and the Jeffreys-prior posterior of the mean.

pub mod conditions;
pub mod elliptical;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod posterior;
pub mod risk;
pub mod rng;
pub mod spd;
pub mod stats;

pub use error::{Error, Result};
pub use estimators::{EstimatorSpec, ShrinkageFunction};
pub use elliptical::MixingMeasure;
pub use spd::SpdMatrix;
pub use stats::{sufficient_stats, Dataset, SufficientStats};
