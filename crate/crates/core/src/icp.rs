//! Reference iterative point-to-plane ICP with a hard trimming filter.
//!
//! Each iteration re-associates every scan point, drops pairs whose
//! point-to-plane residual exceeds `d`, solves the linearized system for a
//! right-multiplied pose increment and applies it through the exact SO(3)
//! exponential.

use nalgebra::{Vector3, Vector6};

use crate::cloud::PointCloud;
use crate::geometry::{Pose, State6};
use crate::index::SpatialIndex;
use crate::linsys::{checked_normal_matrix, point_to_plane_row, DEFAULT_CONDITION_CAP};

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    /// Trim distance on the point-to-plane residual (meters).
    pub d: f64,
    pub max_iters: usize,
    /// Convergence threshold on the norm of the pose increment.
    pub tol: f64,
    pub initial: Pose,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            d: 0.30,
            max_iters: 50,
            tol: 1e-6,
            initial: Pose::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub iterations: usize,
    /// Inliers used in the last solved iteration.
    pub inliers: usize,
    pub converged: bool,
    /// Trimmed cost `Σ min(r², d²)` at the start of each iteration.
    pub costs: Vec<f64>,
    pub failure: Option<String>,
}

/// ICP with exact nearest-neighbour association, recomputed every iteration.
pub fn icp(scan: &PointCloud, map: &PointCloud, index: &SpatialIndex, config: &IcpConfig) -> IcpResult {
    run(scan, map, config, |_, q| index.nearest(q).map(|n| n.index))
}

/// ICP with a fixed, externally supplied association (`assoc[i]` is the map
/// index of scan point `i`).
pub fn icp_with_association(scan: &PointCloud, map: &PointCloud, assoc: &[usize], config: &IcpConfig) -> IcpResult {
    assert_eq!(scan.len(), assoc.len(), "one association per scan point");
    run(scan, map, config, |i, _| Some(assoc[i]))
}

fn run<F>(scan: &PointCloud, map: &PointCloud, config: &IcpConfig, associate: F) -> IcpResult
where
    F: Fn(usize, &Vector3<f64>) -> Option<usize>,
{
    let mut pose = config.initial;
    let mut costs = Vec::new();
    let mut inliers = 0;
    let fail = |pose: Pose, iterations: usize, inliers: usize, costs: Vec<f64>, why: String| IcpResult {
        pose,
        iterations,
        inliers,
        converged: false,
        costs,
        failure: Some(why),
    };
    if scan.is_empty() || !map.has_normals() {
        return fail(pose, 0, 0, costs, "empty scan or map without normals".into());
    }

    for iter in 1..=config.max_iters.max(1) {
        let rt = pose.rotation.transpose();
        let mut rows: Vec<Vector6<f64>> = Vec::with_capacity(scan.len());
        let mut rhs = Vector6::zeros();
        let mut cost = 0.0;
        for (i, p) in scan.points.iter().enumerate() {
            let p_map = pose.transform_point(p);
            let Some(j) = associate(i, &p_map) else { continue };
            let Some(n) = map.normal(j) else { continue };
            let n_s = rt * n;
            let q_s = rt * (map.points[j] - pose.translation);
            let (row, y) = point_to_plane_row(p, &q_s, &n_s);
            if y.abs() <= config.d {
                rhs += row * y;
                cost += y * y;
                rows.push(row);
            } else {
                cost += config.d * config.d;
            }
        }
        costs.push(cost);
        inliers = rows.len();
        let normal = match checked_normal_matrix(rows.into_iter(), DEFAULT_CONDITION_CAP) {
            Ok((n, _)) => n,
            Err(e) => return fail(pose, iter, inliers, costs, e.to_string()),
        };
        let Some(chol) = normal.cholesky() else {
            return fail(pose, iter, inliers, costs, "normal matrix not positive definite".into());
        };
        let delta: State6 = chol.solve(&rhs);
        pose = pose.retract(&delta);
        if delta.norm() < config.tol {
            return IcpResult {
                pose,
                iterations: iter,
                inliers,
                converged: true,
                costs,
                failure: None,
            };
        }
    }
    IcpResult {
        pose,
        iterations: config.max_iters.max(1),
        inliers,
        converged: false,
        costs,
        failure: Some("iteration cap reached".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{make_scene, simulate_scan, ScanParams, SceneKind, SceneParams};

    fn room() -> PointCloud {
        make_scene(SceneKind::Room, &SceneParams::default_for(SceneKind::Room)).unwrap()
    }

    #[test]
    fn aligned_noiseless_scan_is_a_fixed_point() {
        let map = room();
        let truth = Pose::from_xyz_ypr(0.5, -0.3, 1.5, 0.2, 0.0, 0.0);
        let scan = simulate_scan(
            &map,
            &truth,
            &ScanParams {
                sigma: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let index = SpatialIndex::build(&map.points);
        let res = icp(
            &scan.cloud,
            &map,
            &index,
            &IcpConfig {
                initial: truth,
                ..Default::default()
            },
        );
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.pose.error_from(&truth).amax() < 1e-8);
    }

    #[test]
    fn recovers_known_offset() {
        let map = room();
        let truth = Pose::from_xyz_ypr(0.1, 0.05, 1.5, 0.0, 0.0, 0.0);
        let scan = simulate_scan(
            &map,
            &truth,
            &ScanParams {
                sigma: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let index = SpatialIndex::build(&map.points);
        let res = icp(
            &scan.cloud,
            &map,
            &index,
            &IcpConfig {
                initial: Pose::from_translation(Vector3::new(0.0, 0.0, 1.5)),
                ..Default::default()
            },
        );
        assert!(res.converged, "{res:?}");
        assert!((res.pose.translation - truth.translation).amax() < 1e-6);
        assert!(res.inliers <= scan.len());
    }

    #[test]
    fn corridor_fails_to_converge() {
        let map = make_scene(SceneKind::Corridor, &SceneParams::default_for(SceneKind::Corridor)).unwrap();
        let truth = Pose::from_xyz_ypr(0.0, 0.0, 1.5, 0.0, 0.0, 0.0);
        let scan = simulate_scan(&map, &truth, &ScanParams::default()).unwrap();
        let index = SpatialIndex::build(&map.points);
        let res = icp(
            &scan.cloud,
            &map,
            &index,
            &IcpConfig {
                initial: truth,
                ..Default::default()
            },
        );
        assert!(!res.converged);
        assert!(res.failure.unwrap().contains("degenerate"));
    }

    #[test]
    fn too_few_inliers_fails() {
        let map = room();
        let scan = PointCloud::new(map.points[..4].to_vec());
        let index = SpatialIndex::build(&map.points);
        let res = icp(&scan, &map, &index, &IcpConfig::default());
        assert!(!res.converged);
    }
}
