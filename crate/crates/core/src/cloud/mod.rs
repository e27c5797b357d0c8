//! Pointclouds, file I/O, normal estimation, synthetic scenes and scan simulation.

mod io;
mod normals;
mod scene;
mod sim;

pub(crate) use io::save_cloud_with_comments;
pub use io::{load_cloud, read_cloud, save_cloud, write_cloud, CloudFormat, LoadWarning};
pub use normals::estimate_normals;
pub use scene::{make_scene, SceneKind, SceneParams};
pub use sim::{simulate_scan, ScanParams};

use nalgebra::Vector3;

use crate::geometry::Pose;

/// 3D points with optional per-point unit normals.
///
/// A normal slot holding `None` marks a point whose normal could not be
/// estimated; such points never produce point-to-plane rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Option<Vector3<f64>>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, normals: None }
    }

    /// Cloud with every normal valid. Normals are normalized on the way in.
    pub fn with_normals(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Self {
        assert_eq!(points.len(), normals.len(), "points/normals length mismatch");
        let normals = normals
            .into_iter()
            .map(|n| {
                let norm = n.norm();
                (norm > 0.0 && norm.is_finite()).then(|| n / norm)
            })
            .collect();
        Self {
            points,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Valid unit normal of point `i`, if any.
    pub fn normal(&self, i: usize) -> Option<&Vector3<f64>> {
        self.normals.as_ref().and_then(|n| n[i].as_ref())
    }

    pub fn valid_normal_count(&self) -> usize {
        self.normals
            .as_ref()
            .map_or(0, |n| n.iter().filter(|v| v.is_some()).count())
    }

    /// Points and normals mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| n.map(|n| pose.rotation * n)).collect()),
        }
    }
}

/// A simulated lidar scan with ground-truth data association.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    /// Points in the sensor frame.
    pub cloud: PointCloud,
    /// Map index associated with each scan point.
    pub assoc: Vec<usize>,
    pub noise_sigma: f64,
    /// Ground-truth sensor pose the scan was taken from.
    pub pose: Pose,
    /// Set when fewer in-range map points existed than were requested.
    pub truncated: bool,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}
