//! Monocular center-point detection with whole-scene depth, 2.5D point
//! tracking and bird's-eye-view trajectory export.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Concrete
//! aliases for the common instantiations live at the bottom of this file.
//!
//! Pipeline stages:
//!
//! 1. [`geometry`] – calibration parsing, LiDAR projection, sparse depth maps, lifting.
//! 2. [`dataset`] – KITTI-tracking layout indexing, frame pairs, augmentation.
//! 3. [`codec`] – heatmap/offset/displacement targets and peak decoding.
//! 4. [`net`] – toy encoder-decoder with detection and depth heads, Adam training.
//! 5. [`losses`] – focal, displacement and depth losses with analytic gradients.
//! 6. [`tracker`] – greedy displacement-compensated association in 2.5D.
//! 7. [`metrics`] – CLEAR-MOT and depth error/accuracy statistics.
//! 8. [`bev`] – world-frame trajectories and CSV/GeoJSON export.

pub mod bev;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use grid::Grid;
pub use scalar::Scalar;

pub type CameraCalibration = geometry::CameraCalibration<f64>;
pub type SparseDepthMap = geometry::SparseDepthMap<f64>;
pub type Frame = dataset::Frame<f64>;
pub type TargetMaps = codec::TargetMaps<f64>;
pub type Detection = codec::Detection<f64>;
pub type Track = tracker::Track<f64>;
pub type Tracker = tracker::Tracker<f64>;
pub type DepthReport = metrics::DepthReport<f64>;
pub type BevTrajectory = bev::BevTrajectory<f64>;

pub type ToyNetF32 = net::ToyNet<f32>;
pub type ToyNetF64 = net::ToyNet<f64>;
pub type NetworkOutputsF32 = net::NetworkOutputs<f32>;
pub type NetworkOutputsF64 = net::NetworkOutputs<f64>;
