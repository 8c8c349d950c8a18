//! Target-based LiDAR–camera calibration.
//!
//! The crate estimates the vertices of planar polygonal targets from sparse
//! LiDAR returns by fitting a reference target volume with an L1-style cost,
//! and uses those vertices together with image corners to recover the
//! LiDAR→camera extrinsic. Around that core it provides:
//!
//! - [`geom`]: SO(3)/SE(3)/Sim(3)/SE(2) algebra and planar projective maps.
//! - [`targets`]: reference polygons, edge lines and region-of-interest tests.
//! - [`simlidar`]: a spinning-LiDAR simulator used as ground truth.
//! - [`vertexfit`]: target-volume (GL1) and point-to-line template fitting.
//! - [`baseline`]: the SVD + RANSAC edge-line baseline (RN).
//! - [`camera`]: pinhole projection and vertex/corner ordering.
//! - [`extrinsic`]: PnP and IoU extrinsic estimation plus polygon clipping.
//! - [`shapeopt`]: edge-point sensitivity scoring and target shape design.
//! - [`intrinsic`]: per-ring Sim(3), BL1 and BL2 intrinsic LiDAR models.
//! - [`harness`]: metrics, scene files and the round-robin study.

pub mod baseline;
pub mod camera;
pub mod error;
pub mod extrinsic;
pub mod geom;
pub mod harness;
pub mod intrinsic;
pub mod optim;
pub mod seed;
pub mod shapeopt;
pub mod simlidar;
pub mod targets;
pub mod vertexfit;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
