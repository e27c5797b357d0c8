//! Worst-case inlier-evading faults on a linear least-squares estimate.
//!
//! A fault vector `f` is added to the masked rows of the measurement. To slip
//! past a trimming filter of radius `d`, each faulted row must keep its total
//! deviation in the box `|w_i + f_i| ≤ d`. For a pose component `j` with
//! estimator row `h = g_jᵀH`, the largest reachable error is
//!
//! ```text
//! e_j = v + s·μ,   v = Σ_{i∉mask} h_i w_i,   μ = d·Σ_{i∈mask} |h_i|,   s = sign(v)
//! ```
//!
//! Note that `μ` is the *sum* of absolute coefficients over the mask (the dual
//! norm of the box), not their maximum.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};
use statrs::function::erf::erfc;

use crate::cloud::{PointCloud, Scan};
use crate::error::{Error, Result};
use crate::linsys::{EstimatorMatrix, LinearSystem};

/// One coordinate of the 6-DoF state `[t_x, t_y, t_z, φ_x, φ_y, φ_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::X,
        Component::Y,
        Component::Z,
        Component::Roll,
        Component::Pitch,
        Component::Yaw,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(j: usize) -> Option<Self> {
        Self::ALL.get(j).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::X => "x",
            Component::Y => "y",
            Component::Z => "z",
            Component::Roll => "roll",
            Component::Pitch => "pitch",
            Component::Yaw => "yaw",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "tx" => Ok(Component::X),
            "y" | "ty" => Ok(Component::Y),
            "z" | "tz" => Ok(Component::Z),
            "roll" => Ok(Component::Roll),
            "pitch" => Ok(Component::Pitch),
            "yaw" | "theta" => Ok(Component::Yaw),
            other => Err(Error::InvalidParameter(format!("unknown pose component '{other}'"))),
        }
    }
}

/// Sorted, unique set of faulted rows; every row is active in the estimator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultMask {
    rows: Vec<usize>,
}

impl FaultMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(rows: impl IntoIterator<Item = usize>, estimator: &EstimatorMatrix) -> Result<Self> {
        let mut rows: Vec<usize> = rows.into_iter().collect();
        rows.sort_unstable();
        rows.dedup();
        if let Some(&bad) = rows.iter().find(|&&r| r >= estimator.n_rows() || !estimator.active[r]) {
            return Err(Error::InvalidMask { row: bad });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.rows.binary_search(&row).is_ok()
    }

    /// Per-row membership flags over `n` rows.
    fn flags(&self, n: usize) -> Vec<bool> {
        let mut f = vec![false; n];
        for &r in &self.rows {
            f[r] = true;
        }
        f
    }
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `μ = d·Σ_{i∈mask} |(g_jᵀH)_i|`.
pub fn worst_bias(estimator: &EstimatorMatrix, component: Component, mask: &FaultMask, d: f64) -> f64 {
    let h = estimator.h.row(component.index());
    d * mask.rows().iter().map(|&i| h[i].abs()).sum::<f64>()
}

/// Noise-only part `v = g_jᵀH Q̄ w`.
fn unfaulted_error(estimator: &EstimatorMatrix, component: Component, mask: &FaultMask, w: &[f64]) -> f64 {
    let h = estimator.h.row(component.index());
    let faulted = mask.flags(h.len());
    h.iter()
        .zip(w)
        .zip(&faulted)
        .filter(|(_, &f)| !f)
        .map(|((hi, wi), _)| hi * wi)
        .sum()
}

/// Largest-magnitude error on `component` reachable by inlier-evading faults
/// on `mask`, for the noise realization `w` (one entry per system row).
/// Signed: `v + sign(v)·μ`, with `sign(0) = +1`.
pub fn worst_error(
    estimator: &EstimatorMatrix,
    component: Component,
    mask: &FaultMask,
    d: f64,
    w: &[f64],
) -> Result<f64> {
    check_noise_len(estimator, w)?;
    let v = unfaulted_error(estimator, component, mask, w);
    Ok(v + sign(v) * worst_bias(estimator, component, mask, d))
}

fn check_noise_len(estimator: &EstimatorMatrix, w: &[f64]) -> Result<()> {
    if w.len() != estimator.n_rows() {
        return Err(Error::LengthMismatch {
            expected: estimator.n_rows(),
            actual: w.len(),
        });
    }
    Ok(())
}

/// The fault vector attaining [`worst_error`]:
/// `f = s·d·sign(g_jᵀHQ)ᵀ − Qᵀw`, one entry per masked row in mask order.
/// Each faulted row ends exactly on the trimming boundary, `|w_i + f_i| = d`.
pub fn worst_fault_vector(
    estimator: &EstimatorMatrix,
    component: Component,
    mask: &FaultMask,
    d: f64,
    w: &[f64],
) -> Result<DVector<f64>> {
    check_noise_len(estimator, w)?;
    let h = estimator.h.row(component.index());
    let s = sign(unfaulted_error(estimator, component, mask, w));
    Ok(DVector::from_iterator(
        mask.len(),
        mask.rows().iter().map(|&i| s * d * sign(h[i]) - w[i]),
    ))
}

/// Full 6-DoF estimate error `H(w + Qf)` under the linear model.
pub fn linear_error(
    estimator: &EstimatorMatrix,
    mask: &FaultMask,
    w: &[f64],
    f: &DVector<f64>,
) -> Result<crate::geometry::State6> {
    check_noise_len(estimator, w)?;
    if f.len() != mask.len() {
        return Err(Error::LengthMismatch {
            expected: mask.len(),
            actual: f.len(),
        });
    }
    let mut total = DVector::from_column_slice(w);
    for (&row, fi) in mask.rows().iter().zip(f.iter()) {
        total[row] += fi;
    }
    let e = &estimator.h * total;
    Ok(crate::geometry::State6::from_iterator(e.iter().copied()))
}

/// Gaussian model of the worst error on one component: `|e| = |v| + μ` with
/// `v ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardParams {
    pub mu: f64,
    pub sigma: f64,
    pub component: Component,
    pub mask: FaultMask,
    pub d: f64,
}

/// `μ` and `σ² = σ_w²·Σ_{i∉mask} (g_jᵀH)_i²` for noise std `noise_sigma`.
pub fn hazard_params(
    estimator: &EstimatorMatrix,
    component: Component,
    mask: &FaultMask,
    d: f64,
    noise_sigma: f64,
) -> HazardParams {
    let h = estimator.h.row(component.index());
    let faulted = mask.flags(h.len());
    let sumsq: f64 = h.iter().zip(&faulted).filter(|(_, &f)| !f).map(|(v, _)| v * v).sum();
    HazardParams {
        mu: worst_bias(estimator, component, mask, d),
        sigma: noise_sigma * sumsq.sqrt(),
        component,
        mask: mask.clone(),
        d,
    }
}

/// `P(|e| > r) = min{2(1 − Φ((r − μ)/σ)), 1}`.
///
/// With `σ = 0` this is a step: hazardous (1) when `μ ≥ r`, else 0.
pub fn hazard_probability_raw(mu: f64, sigma: f64, r: f64) -> f64 {
    if sigma <= 0.0 {
        return if mu >= r { 1.0 } else { 0.0 };
    }
    // 2(1 − Φ(z)) = erfc(z/√2), accurate far into the tail.
    let z = (r - mu) / sigma;
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn hazard_probability(params: &HazardParams, r: f64) -> f64 {
    hazard_probability_raw(params.mu, params.sigma, r)
}

/// Applies point-domain faults: `p'_k = p_k + f_k n_k` on the scan points of
/// the masked rows, with `n_k` the row's sensor-frame map normal.
///
/// Rebuilding the system from the result shifts each faulted `y_k` by exactly
/// `−f_k`; the rotational cross term vanishes because `n × n = 0`. In this
/// convention `w` and `f` are displacements of the measured point along the
/// normal, so the residual of a faulted row is `−(w_k + f_k)`.
pub fn perturb_cloud(
    scan: &Scan,
    map: &PointCloud,
    system: &LinearSystem,
    mask: &FaultMask,
    f: &DVector<f64>,
) -> Result<PointCloud> {
    if f.len() != mask.len() {
        return Err(Error::LengthMismatch {
            expected: mask.len(),
            actual: f.len(),
        });
    }
    let mut out = scan.cloud.clone();
    for (&row, &fk) in mask.rows().iter().zip(f.iter()) {
        if row >= system.len() {
            return Err(Error::InvalidMask { row });
        }
        let k = system.row_origin[row];
        let j = scan.assoc[k];
        let n = map
            .normal(j)
            .ok_or_else(|| Error::InvalidParameter(format!("map point {j} has no valid normal")))?;
        let n_s: Vector3<f64> = scan.pose.rotation.transpose() * n;
        out.points[k] += n_s * fk;
    }
    Ok(out)
}

/// Relative shrink applied to the fault box when synthesizing point clouds,
/// so that rounding in the rebuilt residual cannot push a faulted row past
/// the trimming boundary.
pub const INLIER_MARGIN: f64 = 1e-9;

/// A synthesized worst-case corruption of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseAttack {
    /// Closed-form worst error on the component, signed.
    pub error: f64,
    /// Fault per masked row, in mask order.
    pub f: DVector<f64>,
    pub cloud: PointCloud,
}

/// Computes the worst error for the realized noise of `system` and the
/// corrupted cloud that attains it. The faults are built on a box shrunk by
/// [`INLIER_MARGIN`] so every faulted row survives trimming at `d`.
pub fn synthesize_attack(
    scan: &Scan,
    map: &PointCloud,
    system: &LinearSystem,
    estimator: &EstimatorMatrix,
    component: Component,
    mask: &FaultMask,
    d: f64,
) -> Result<WorstCaseAttack> {
    let w = realized_noise(system);
    let error = worst_error(estimator, component, mask, d, &w)?;
    let f = worst_fault_vector(estimator, component, mask, d * (1.0 - INLIER_MARGIN), &w)?;
    let cloud = perturb_cloud(scan, map, system, mask, &f)?;
    Ok(WorstCaseAttack { error, f, cloud })
}

/// Realized point-displacement noise of each row, `w_i = −y_i` at the
/// ground-truth pose.
pub fn realized_noise(system: &LinearSystem) -> Vec<f64> {
    system.y.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::linsys::{build_system_at, estimator};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_estimator(n: usize, seed: u64) -> EstimatorMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
        let sys = LinearSystem {
            a,
            y: DVector::zeros(n),
            alpha: vec![true; n],
            sigma: 0.1,
            row_origin: (0..n).collect(),
            normals: vec![Vector3::x(); n],
            dropped: vec![],
        };
        estimator(&sys).unwrap()
    }

    #[test]
    fn empty_mask_has_zero_bias() {
        let est = random_estimator(20, 1);
        assert_eq!(worst_bias(&est, Component::X, &FaultMask::empty(), 0.3), 0.0);
        let w = vec![0.0; 20];
        assert_eq!(
            worst_error(&est, Component::X, &FaultMask::empty(), 0.3, &w).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_row_bias() {
        let mut est = random_estimator(10, 2);
        est.h[(1, 4)] = 0.05;
        let mask = FaultMask::new([4], &est).unwrap();
        assert!((worst_bias(&est, Component::Y, &mask, 0.3) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_gives_plus_mu() {
        let est = random_estimator(30, 3);
        let mask = FaultMask::new([1, 5, 9, 22], &est).unwrap();
        let w = vec![0.0; 30];
        let mu = worst_bias(&est, Component::Yaw, &mask, 0.3);
        assert_eq!(worst_error(&est, Component::Yaw, &mask, 0.3, &w).unwrap(), mu);
        let f = worst_fault_vector(&est, Component::Yaw, &mask, 0.3, &w).unwrap();
        assert!(f.iter().all(|v| v.abs() == 0.3));
    }

    #[test]
    fn zero_coefficient_row_contributes_nothing() {
        let mut est = random_estimator(12, 4);
        est.h[(0, 3)] = 0.0;
        let mask = FaultMask::new([3], &est).unwrap();
        let w: Vec<f64> = (0..12).map(|i| 0.01 * i as f64).collect();
        let f = worst_fault_vector(&est, Component::X, &mask, 0.3, &w).unwrap();
        let s = sign(unfaulted_error(&est, Component::X, &mask, &w));
        assert_eq!(f[0], s * 0.3 - w[3]);
        let e = linear_error(&est, &mask, &w, &f).unwrap();
        let e0 = linear_error(&est, &FaultMask::empty(), &w, &DVector::zeros(0)).unwrap();
        assert!((e[0] - e0[0]).abs() < 1e-15);
    }

    #[test]
    fn mask_rejects_inactive_and_out_of_range_rows() {
        let mut est = random_estimator(10, 5);
        assert!(matches!(
            FaultMask::new([10], &est),
            Err(Error::InvalidMask { row: 10 })
        ));
        est.active[2] = false;
        assert!(matches!(FaultMask::new([2], &est), Err(Error::InvalidMask { row: 2 })));
        assert_eq!(FaultMask::new([3, 1, 3], &est).unwrap().rows(), &[1, 3]);
    }

    #[test]
    fn noise_length_is_checked() {
        let est = random_estimator(10, 6);
        assert!(worst_error(&est, Component::X, &FaultMask::empty(), 0.3, &[0.0; 9]).is_err());
    }

    #[test]
    fn hazard_probability_edge_values() {
        assert!(hazard_probability_raw(0.0, 0.01, 0.2) < 1e-15);
        assert_eq!(hazard_probability_raw(0.2, 0.05, 0.2), 1.0);
        assert_eq!(hazard_probability_raw(0.5, 0.05, 0.2), 1.0);
        assert_eq!(hazard_probability_raw(0.2, 0.0, 0.2), 1.0);
        assert_eq!(hazard_probability_raw(0.19, 0.0, 0.2), 0.0);
        assert_eq!(hazard_probability_raw(0.0, 0.0, 0.2), 0.0);
        assert_eq!(hazard_probability_raw(0.1, 0.1, f64::INFINITY), 0.0);
    }

    #[test]
    fn perturbation_moves_along_normal() {
        let map = PointCloud::with_normals(
            vec![Vector3::new(0.0, 2.0, 0.0), Vector3::new(3.0, 0.0, 0.0)],
            vec![Vector3::y(), Vector3::x()],
        );
        let scan = Scan {
            cloud: PointCloud::new(map.points.clone()),
            assoc: vec![0, 1],
            noise_sigma: 0.0,
            pose: Pose::identity(),
            truncated: false,
        };
        let sys = build_system_at(&scan.cloud.points, &scan.assoc, &map, &scan.pose, 0.0).unwrap();
        let mask = FaultMask { rows: vec![0] };
        let out = perturb_cloud(&scan, &map, &sys, &mask, &DVector::from_vec(vec![0.3])).unwrap();
        assert_eq!(out.points[0], Vector3::new(0.0, 2.3, 0.0));
        assert_eq!(out.points[1], scan.cloud.points[1]);
        let same = perturb_cloud(&scan, &map, &sys, &mask, &DVector::from_vec(vec![0.0])).unwrap();
        assert_eq!(same, scan.cloud);
        assert!(perturb_cloud(&scan, &map, &sys, &mask, &DVector::zeros(2)).is_err());
    }
}
