use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::index::SpatialIndex;

/// Relative size of the middle covariance eigenvalue below which a
/// neighbourhood is treated as collinear (rank < 2).
const RANK_TOL: f64 = 1e-10;

/// Estimates a unit normal for every point from its `k` nearest neighbours.
///
/// The normal is the eigenvector of the smallest eigenvalue of the
/// neighbourhood covariance. It is oriented toward `viewpoint` when given,
/// otherwise toward +z, falling back to +x and then +y for horizontal normals.
/// Points whose neighbourhood covariance has rank < 2 get an invalid normal.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: Option<Vector3<f64>>) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("k must be >= 3, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least k + 1 = {} points, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(&cloud.points);
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            // The point itself plus its k neighbours.
            let hood = index.k_nearest(p, k + 1);
            let n = hood.len() as f64;
            let mean = hood
                .iter()
                .fold(Vector3::zeros(), |acc, nb| acc + index.point(nb.index))
                / n;
            let cov = hood.iter().fold(Matrix3::zeros(), |acc, nb| {
                let d = index.point(nb.index) - mean;
                acc + d * d.transpose()
            }) / n;
            plane_normal(&cov).map(|normal| orient(normal, p, viewpoint))
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
    })
}

fn plane_normal(cov: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if !(largest > 0.0) || middle <= RANK_TOL * largest {
        return None;
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    let norm = n.norm();
    (norm > 0.0).then(|| n / norm)
}

fn orient(n: Vector3<f64>, point: &Vector3<f64>, viewpoint: Option<Vector3<f64>>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    let flip = match viewpoint {
        Some(v) => n.dot(&(v - point)) < 0.0,
        None => {
            if n.z.abs() > EPS {
                n.z < 0.0
            } else if n.x.abs() > EPS {
                n.x < 0.0
            } else {
                n.y < 0.0
            }
        }
    };
    if flip {
        -n
    } else {
        n
    }
}
