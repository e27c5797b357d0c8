//! Worst-case fault certification for point-to-plane ICP localization.
//!
//! Given a map with normals and a pose, the crate simulates a lidar scan,
//! linearizes point-to-plane ICP around the true pose and computes, in closed
//! form, the largest pose error that bounded inlier-evading corruption of
//! whole azimuth sectors can cause. From that it derives the probability of a
//! hazardous estimate and the resilience score: the largest share of sectors
//! that can be corrupted before a per-component safety certificate fails.
//!
//! A reference iterative ICP ([`icp`]) checks the closed form against real
//! registration of the synthesized worst-case scans ([`validate`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cloud;
pub mod error;
pub mod fault;
pub mod geometry;
pub mod icp;
pub mod index;
pub mod linsys;
pub mod report;
pub mod resilience;
pub mod validate;

pub use error::{Error, Result};
