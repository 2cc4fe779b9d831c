//! Polygonal staircase mapping and footstep planning for humanoid stair
//! climbing, plus a deterministic synthetic-world harness to exercise the
//! whole perceive-estimate-plan-execute loop on a desk.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geometry`]: frames, rigid transforms, rotation log/exp, depth images
//!   and pixel backprojection.
//! - [`depth`]: depth frame to world-frame polygonal plane segments
//!   (diffusion, normals, contour-bounded regions, RANSAC planes).
//! - [`estimator`]: contact-aided Kalman filtering of the base state and
//!   complementary fusion of kinematic odometry with a LiDAR-inertial pose
//!   stream.
//! - [`foothold`]: polygon map to dense grid cells to safe foothold
//!   candidates (rasterization, range/height filtering, layered erosion).
//! - [`planner`]: foothold candidates to timed, collision-checked footstep
//!   trajectories with sinusoidal swing profiles.
//! - [`sim`]: staircase renderer, noise models, scenario loop and metrics.

pub mod depth;
pub mod estimator;
pub mod foothold;
pub mod geometry;
pub mod planner;
pub mod poly2d;
pub mod sim;

pub use depth::{extract_polygon_map, PipelineConfig, PolygonSegment};
pub use estimator::{fuse_pose, lio_to_base, FusionParams, OdomSample, OdomSource};
pub use foothold::{FootState, FootholdCandidate, FootholdParams, GridCloud};
pub use planner::{plan_steps, FootstepPlan, GaitMode, GaitParams};
pub use sim::{run_scenario, RunReport, ScenarioConfig, StaircaseScene};
pub use geometry::{
    backproject, CameraIntrinsics, DepthImage, Frame, GeometryError, PointCloud, Pose, Rotation,
};
