//! Retargeting of human hand keypoint trajectories onto a robot hand, followed
//! by hand–object contact extraction and per-finger grasp refinement.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`hand_model`]: kinematic chain loading, forward kinematics, keypoints and
//!   surface samples.
//! - [`geometry`]: triangle meshes, nearest-point and signed-distance queries.
//! - [`retarget`]: per-frame global search with temporal regularisation.
//! - [`contact`]: dual-threshold contact detection and temporal imputation.
//! - [`refine`]: sequential per-finger energy minimisation.
//! - [`metrics`]: trajectory quality scores.
//! - [`pipeline`]: configuration, stage orchestration and run manifests.
//!
//! [`io`] holds the line-delimited record formats shared by the stages and
//! [`synth`] generates the bundled synthetic fixtures.

pub mod contact;
pub mod error;
pub mod geometry;
pub mod hand_model;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod retarget;
pub mod synth;

pub use error::{Error, Result};
