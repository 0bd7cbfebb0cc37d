//! Sparse point prompting, shallow mask aggregation and decoupled mask
//! injection for open-vocabulary segmentation, with a synthetic harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for the common double-precision case.

// index loops mirror the tensor formulas
#![allow(clippy::needless_range_loop)]

pub mod dmi;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod mask;
pub mod rng;
pub mod scalar;
pub mod smagg;
pub mod tspp;

pub use error::{Error, Result};
pub use mask::{BinaryMask, LabelMap, MaskSet};
pub use scalar::Scalar;

pub type DistanceField64 = geometry::DistanceField<f64>;
pub type DistanceField32 = geometry::DistanceField<f32>;
pub type ProbabilityGrid64 = tspp::ProbabilityGrid<f64>;
pub type ProbabilityGrid32 = tspp::ProbabilityGrid<f32>;
pub type CostMap64 = tspp::CostMap<f64>;
pub type CostMap32 = tspp::CostMap<f32>;
pub type TsppHeadParams64 = tspp::TsppHeadParams<f64>;
pub type FeatureMap64 = dmi::FeatureMap<f64>;
pub type FeatureMap32 = dmi::FeatureMap<f32>;
pub type MaskEmbeddings64 = dmi::MaskEmbeddings<f64>;
pub type HighFreqParams64 = dmi::HighFreqParams<f64>;
pub type MatchMatrix64 = smagg::MatchMatrix<f64>;
pub type AggregationResult64 = smagg::AggregationResult<f64>;
