//! Weakly supervised fish detection in underwater video frames.
//!
//! Clip-level fish/empty labels become frame datasets, frames are enhanced
//! and preprocessed, a small CNN with one of three heads is trained with a
//! plateau/restart schedule (optionally on data enlarged with external
//! domains), and the trained model scores frames, emits localization heatmaps
//! and triages empty clips.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod loader;
pub mod localizer;
pub mod metrics;
pub mod model;
pub mod multidomain;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Plane32 = imaging::Plane<f32>;
pub type Plane64 = imaging::Plane<f64>;
pub type HeatMap32 = model::HeatMap<f32>;
pub type HeatMap64 = model::HeatMap<f64>;
