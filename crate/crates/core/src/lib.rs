//! Unified LoS/NLoS localization: simulation, model-based estimation,
//! set-based dissimilarities, optimal transport and channel charting.

pub mod error;
pub mod chansim;
pub mod chart;
pub mod estimation;
pub mod evalsuite;
pub mod ot;
pub mod pipeline;
pub mod scene;
pub mod setmetrics;

pub use error::{Error, Result};
