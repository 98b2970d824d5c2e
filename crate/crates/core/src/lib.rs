//! Semantic volumetric mapping from posed RGB-D frames.
//!
//! The crate turns per-frame camera poses, depth maps and semantic label
//! images into a sparse 3D semantic voxel map, and evaluates estimated
//! trajectories against references. The pieces compose as a pipeline:
//!
//! * [`geometry`]: pinhole camera model, SE(3) poses and batched
//!   back-projection of depth maps into world-frame points.
//! * [`cloud`]: labeled point clouds: one frame plus a pose becomes a
//!   world-frame cloud with remapped class labels.
//! * [`bki`]: the semantic map itself: per-voxel Dirichlet concentrations
//!   updated by kernel-weighted point evidence.
//! * [`metrics`]: trajectory evaluation (ATE, RPE, KITTI-style drift).
//! * [`io`]: dataset ingestion and map/cloud export formats.

pub mod bki;
pub mod cloud;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;

pub use bki::{KernelFilter, UpdateStats, VoxelCoord, VoxelGrid, VoxelQueryResult};
pub use cloud::{FrameBundle, LabelRemap, SemanticPointCloud};
pub use geometry::{BackprojectOptions, CameraConvention, CameraIntrinsics, PoseSE3};
pub use grid::{ColorMap, DepthMap, Grid2, LabelMap};
pub use metrics::{MetricsReport, Trajectory};
