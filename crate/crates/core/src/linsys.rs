//! Linearized point-to-plane measurement system and its least-squares estimator.
//!
//! Each valid scan point `p` (sensor frame) associated with map point `q` and
//! map normal `n` contributes one scalar row. Map quantities are first brought
//! into the sensor frame of the nominal pose (`n_s = Rᵀn`, `q_s = Rᵀ(q − t)`):
//!
//! ```text
//! A_i = [ n_sᵀ , (p × n_s)ᵀ ]      y_i = n_sᵀ (q_s − p)
//! ```
//!
//! so the state is a right-perturbation `[δt; δφ]` of the nominal pose.
//! `(p × n)ᵀ` is the `−nᵀ p^∧` block of the usual point-to-plane Jacobian.

use nalgebra::{DMatrix, DVector, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::cloud::{PointCloud, Scan};
use crate::error::{Error, Result};
use crate::geometry::{Pose, State6};

/// Default cap on the normal-matrix condition number.
pub const DEFAULT_CONDITION_CAP: f64 = 1e10;

/// Stacked point-to-plane rows with binary trimming weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// N×6 design matrix.
    pub a: DMatrix<f64>,
    /// Point-to-plane residuals at the nominal pose (meters).
    pub y: DVector<f64>,
    /// Trimming weights; `false` rows are excluded from the estimate.
    pub alpha: Vec<bool>,
    /// Per-row measurement noise std (meters).
    pub sigma: f64,
    /// Scan point index of each row.
    pub row_origin: Vec<usize>,
    /// Sensor-frame map normal of each row.
    pub normals: Vec<Vector3<f64>>,
    /// Scan points skipped because their map normal is invalid.
    pub dropped: Vec<usize>,
}

/// One point-to-plane row `(A_i, y_i)` for sensor-frame quantities.
pub(crate) fn point_to_plane_row(p: &Vector3<f64>, q_s: &Vector3<f64>, n_s: &Vector3<f64>) -> (Vector6<f64>, f64) {
    let m = p.cross(n_s);
    (Vector6::new(n_s.x, n_s.y, n_s.z, m.x, m.y, m.z), n_s.dot(&(q_s - p)))
}

/// Builds the system for `scan` against `map`, linearized at the scan's
/// ground-truth pose with the scan's own data association.
pub fn build_system(scan: &Scan, map: &PointCloud) -> Result<LinearSystem> {
    build_system_at(&scan.cloud.points, &scan.assoc, map, &scan.pose, scan.noise_sigma)
}

/// Builds the system for arbitrary sensor-frame points, association and
/// nominal pose.
pub fn build_system_at(
    points: &[Vector3<f64>],
    assoc: &[usize],
    map: &PointCloud,
    pose: &Pose,
    sigma: f64,
) -> Result<LinearSystem> {
    if points.len() != assoc.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            actual: assoc.len(),
        });
    }
    let rt = pose.rotation.transpose();
    let mut rows: Vec<Vector6<f64>> = Vec::with_capacity(points.len());
    let mut y = Vec::with_capacity(points.len());
    let mut row_origin = Vec::with_capacity(points.len());
    let mut normals = Vec::with_capacity(points.len());
    let mut dropped = Vec::new();
    for (i, (p, &j)) in points.iter().zip(assoc).enumerate() {
        if j >= map.len() {
            return Err(Error::InvalidParameter(format!(
                "association {j} of scan point {i} is outside the map ({} points)",
                map.len()
            )));
        }
        let Some(n) = map.normal(j) else {
            dropped.push(i);
            continue;
        };
        let n_s = rt * n;
        let q_s = pose.inverse_transform_point(&map.points[j]);
        let (row, yi) = point_to_plane_row(p, &q_s, &n_s);
        if !(row.iter().all(|v| v.is_finite()) && yi.is_finite()) {
            dropped.push(i);
            continue;
        }
        rows.push(row);
        y.push(yi);
        row_origin.push(i);
        normals.push(n_s);
    }
    if rows.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let n = rows.len();
    let a = DMatrix::from_fn(n, 6, |r, c| rows[r][c]);
    Ok(LinearSystem {
        a,
        y: DVector::from_vec(y),
        alpha: vec![true; n],
        sigma,
        row_origin,
        normals,
        dropped,
    })
}

impl LinearSystem {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> Vector6<f64> {
        Vector6::from_iterator(self.a.row(i).iter().copied())
    }

    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.alpha[i]).collect()
    }

    /// `y − A x0`.
    pub fn residuals(&self, x0: &State6) -> DVector<f64> {
        &self.y - &self.a * x0
    }

    /// Hard trimming: row `i` stays active iff `|y_i − A_i x0| ≤ d`.
    pub fn trimmed_weights(&self, x0: &State6, d: f64) -> Result<LinearSystem> {
        if !(d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "trim distance must be positive, got {d}"
            )));
        }
        let r = self.residuals(x0);
        let alpha: Vec<bool> = r.iter().map(|v| v.abs() <= d).collect();
        if !alpha.iter().any(|&a| a) {
            return Err(Error::NoInliers { d });
        }
        Ok(LinearSystem { alpha, ..self.clone() })
    }

    /// Copy with only the rows in `keep`, in that order.
    pub fn select_rows(&self, keep: &[usize]) -> LinearSystem {
        LinearSystem {
            a: self.a.select_rows(keep),
            y: DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.y[i])),
            alpha: keep.iter().map(|&i| self.alpha[i]).collect(),
            sigma: self.sigma,
            row_origin: keep.iter().map(|&i| self.row_origin[i]).collect(),
            normals: keep.iter().map(|&i| self.normals[i]).collect(),
            dropped: self.dropped.clone(),
        }
    }
}

/// The least-squares estimator `H = (AᵀA)⁻¹Aᵀ` over active rows.
///
/// With a uniform noise covariance `σ²I` the weighting cancels, so `H` does
/// not depend on `σ`. Columns of trimmed rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMatrix {
    /// 6×N.
    pub h: DMatrix<f64>,
    pub active_rows: Vec<usize>,
    pub active: Vec<bool>,
    /// Condition number of the active normal matrix.
    pub condition: f64,
}

impl EstimatorMatrix {
    pub fn n_rows(&self) -> usize {
        self.h.ncols()
    }

    /// Row `g_jᵀH` as a plain vector.
    pub fn component_row(&self, j: usize) -> Vec<f64> {
        self.h.row(j).iter().copied().collect()
    }
}

/// Normal matrix and its conditioning, shared with the reference ICP.
pub(crate) fn checked_normal_matrix(rows: impl Iterator<Item = Vector6<f64>>, cap: f64) -> Result<(Matrix6<f64>, f64)> {
    let mut n = Matrix6::zeros();
    let mut count = 0usize;
    for r in rows {
        n += r * r.transpose();
        count += 1;
    }
    if count < 6 {
        return Err(Error::TooFewRows { active: count });
    }
    let eig = SymmetricEigen::new(n);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= cap) {
        return Err(Error::DegenerateGeometry { condition });
    }
    Ok((n, condition))
}

pub fn estimator(system: &LinearSystem) -> Result<EstimatorMatrix> {
    estimator_with_cap(system, DEFAULT_CONDITION_CAP)
}

/// Builds `H`, failing with [`Error::DegenerateGeometry`] when the active
/// normal matrix is rank deficient or its condition number exceeds `cap`.
pub fn estimator_with_cap(system: &LinearSystem, cap: f64) -> Result<EstimatorMatrix> {
    let active_rows = system.active_rows();
    let (normal, condition) = checked_normal_matrix(active_rows.iter().map(|&i| system.row(i)), cap)?;
    let chol = normal.cholesky().ok_or(Error::DegenerateGeometry { condition })?;
    let mut h = DMatrix::zeros(6, system.len());
    for &i in &active_rows {
        let col = chol.solve(&system.row(i));
        h.set_column(i, &col);
    }
    Ok(EstimatorMatrix {
        h,
        active: system.alpha.clone(),
        active_rows,
        condition,
    })
}

/// `x̂ = H y`.
pub fn solve(system: &LinearSystem, estimator: &EstimatorMatrix) -> State6 {
    let x = &estimator.h * &system.y;
    State6::from_iterator(x.iter().copied())
}
