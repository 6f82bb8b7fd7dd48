//! Multi-view SVBRDF recovery: per-view material estimation from photographs
//! of a known mesh, edge-aware smoothing and median merging into a texture atlas.

pub mod atlas;
pub mod bilateral;
pub mod error;
pub mod loss;
pub mod estimate;
pub mod math;
pub mod pipeline;
pub mod scene;
pub mod shading;
pub mod stats;
pub mod synthetic;
pub mod visibility;

pub use error::{Error, Result};
