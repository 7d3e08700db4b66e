//! Landmark-based 2D/3D registration for fluoroscopy.
//!
//! Recovers a 6-DoF C-arm pose from 3D anatomical landmarks and their 2D
//! detections, and ships the machinery around it: soft-argmax decoding of
//! landmark heatmaps, seeded synthetic cases, RMSE evaluation and a
//! command-line front end.
//!
//! ```
//! use fluororeg::geometry::{CameraIntrinsics, Pose};
//! use fluororeg::registration::{estimate_pose, OptimizerConfig, RegistrationProblem, Bounds};
//! use fluororeg::synthesis::{default_projector, pelvis_fixture};
//!
//! let intr = CameraIntrinsics::default();
//! let landmarks = pelvis_fixture();
//! let truth = Pose::from_degrees([2.0, -1.0, 3.0], [4.0, -2.0, 5.0]);
//! let observed = default_projector().project(&truth, &landmarks).unwrap();
//! let prob = RegistrationProblem::new(landmarks, observed, intr, Bounds::default())
//!     .unwrap()
//!     .with_projector(default_projector())
//!     .unwrap();
//! let fit = estimate_pose(&prob, &OptimizerConfig::converge(), &Pose::identity()).unwrap();
//! assert!((fit.final_loss / prob.len() as f64).sqrt() < 0.5);
//! ```

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod io;
pub mod registration;
pub mod synthesis;

pub use error::{Error, Result};
