//! Compares the closed-form worst error against a real iterative ICP run on
//! the synthesized worst-case corrupted scan.

use rayon::prelude::*;

use crate::cloud::{PointCloud, ScanParams};
use crate::error::{Error, Result};
use crate::fault::{synthesize_attack, Component, FaultMask};
use crate::icp::{icp, icp_with_association, IcpConfig};
use crate::index::SpatialIndex;
use crate::resilience::{
    partition, pose_seed, pose_system, worst_sector_set, HazardObjective, SearchMode, SectorStats, TrajectoryPose,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Association {
    /// Exact nearest neighbour, recomputed each iteration.
    #[default]
    NearestNeighbor,
    /// The simulator's ground-truth association.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    /// Trials cycle through these poses.
    pub poses: Vec<TrajectoryPose>,
    pub d_values: Vec<f64>,
    /// Share of sectors corrupted, in `[0, 1)`.
    pub corrupted_fraction: f64,
    pub n_trials: usize,
    pub seed: u64,
    /// `seed` is ignored; scans are seeded per trial.
    pub scan: ScanParams,
    pub n_sectors: usize,
    pub components: Vec<Component>,
    pub max_iters: usize,
    pub tol: f64,
    pub association: Association,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            poses: Vec::new(),
            d_values: vec![0.30],
            corrupted_fraction: 0.25,
            n_trials: 250,
            seed: 0,
            scan: ScanParams::default(),
            n_sectors: 30,
            components: vec![Component::X, Component::Y],
            max_iters: 50,
            tol: 1e-6,
            association: Association::NearestNeighbor,
        }
    }
}

/// One (trial, component, d) comparison. Errors are magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub trial: usize,
    pub component: Component,
    pub d: f64,
    pub theory_error: f64,
    pub icp_error: f64,
    /// `theory_error − icp_error`; negative values are false negatives.
    pub signed_diff: f64,
    pub icp_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTable {
    pub rows: Vec<ValidationRow>,
    /// (trial, d, reason) for trials where the closed form itself could not
    /// be evaluated, e.g. degenerate geometry.
    pub skipped: Vec<(usize, f64, String)>,
}

/// Distribution summary of converged signed differences for one (component, d).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub component: Component,
    pub d: f64,
    pub count: usize,
    pub icp_failures: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub false_negative_ratio: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ValidationTable {
    pub fn summaries(&self) -> Vec<ValidationSummary> {
        let mut keys: Vec<(Component, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(c, d)| *c == r.component && *d == r.d) {
                keys.push((r.component, r.d));
            }
        }
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keys.into_iter()
            .map(|(component, d)| {
                let group: Vec<&ValidationRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.component == component && r.d == d)
                    .collect();
                let mut diffs: Vec<f64> = group
                    .iter()
                    .filter(|r| r.icp_converged)
                    .map(|r| r.signed_diff)
                    .collect();
                diffs.sort_by(f64::total_cmp);
                let negatives = diffs.iter().filter(|v| **v < 0.0).count();
                ValidationSummary {
                    component,
                    d,
                    count: diffs.len(),
                    icp_failures: group.len() - diffs.len(),
                    min: diffs.first().copied().unwrap_or(f64::NAN),
                    q25: quantile(&diffs, 0.25),
                    median: quantile(&diffs, 0.5),
                    q75: quantile(&diffs, 0.75),
                    max: diffs.last().copied().unwrap_or(f64::NAN),
                    false_negative_ratio: if diffs.is_empty() {
                        f64::NAN
                    } else {
                        negatives as f64 / diffs.len() as f64
                    },
                }
            })
            .collect()
    }
}

/// Number of sectors corrupted for a fraction of `n_sectors`.
pub fn corrupted_sector_count(fraction: f64, n_sectors: usize) -> usize {
    ((fraction * n_sectors as f64).round() as usize).min(n_sectors)
}

/// Runs every (trial, d, component) comparison. Each trial simulates one scan
/// per d value with a seed derived from the run seed and the trial number,
/// corrupts the worst top-k sectors for the component, and runs ICP from the
/// ground-truth pose with the same trim distance.
pub fn validate_bound(map: &PointCloud, config: &ValidationConfig) -> Result<ValidationTable> {
    if config.poses.is_empty() {
        return Err(Error::InvalidParameter("validation needs at least one pose".into()));
    }
    if !(0.0..1.0).contains(&config.corrupted_fraction) {
        return Err(Error::InvalidParameter(format!(
            "corrupted fraction must be in [0, 1), got {}",
            config.corrupted_fraction
        )));
    }
    if config.d_values.is_empty() || config.d_values.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter("d values must be positive".into()));
    }
    if config.n_sectors == 0 || config.components.is_empty() {
        return Err(Error::InvalidParameter("need >= 1 sector and >= 1 component".into()));
    }
    if !map.has_normals() {
        return Err(Error::InvalidParameter("map has no normals".into()));
    }
    let index = SpatialIndex::build(&map.points);
    let k = corrupted_sector_count(config.corrupted_fraction, config.n_sectors);

    let jobs: Vec<(usize, f64)> = (0..config.n_trials)
        .flat_map(|t| config.d_values.iter().map(move |&d| (t, d)))
        .collect();
    let results: Vec<std::result::Result<Vec<ValidationRow>, (usize, f64, String)>> = jobs
        .par_iter()
        .map(|&(trial, d)| run_trial(map, &index, config, trial, d, k).map_err(|e| (trial, d, e.to_string())))
        .collect();

    let mut table = ValidationTable {
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(rows) => table.rows.extend(rows),
            Err(skip) => table.skipped.push(skip),
        }
    }
    Ok(table)
}

fn run_trial(
    map: &PointCloud,
    index: &SpatialIndex,
    config: &ValidationConfig,
    trial: usize,
    d: f64,
    k: usize,
) -> Result<Vec<ValidationRow>> {
    let pose = &config.poses[trial % config.poses.len()];
    let scan_params = ScanParams {
        seed: pose_seed(config.seed, &format!("trial-{trial}")),
        ..config.scan
    };
    let ps = pose_system(map, &pose.pose, &scan_params, d)?;
    let est = ps.estimator?;
    let part = partition(&ps.system, &ps.scan, config.n_sectors)?;

    config
        .components
        .iter()
        .map(|&component| {
            let mask = if k == 0 {
                FaultMask::empty()
            } else {
                let stats = SectorStats::new(&est, component, &part);
                let objective = HazardObjective {
                    d,
                    noise_sigma: ps.system.sigma,
                    radius: f64::INFINITY,
                };
                let sectors = worst_sector_set(&stats, k, SearchMode::TopK, &objective)?;
                part.mask(&sectors, &est)?
            };
            let attack = synthesize_attack(&ps.scan, map, &ps.system, &est, component, &mask, d)?;
            let icp_config = IcpConfig {
                d,
                max_iters: config.max_iters,
                tol: config.tol,
                initial: ps.scan.pose,
            };
            let result = match config.association {
                Association::NearestNeighbor => icp(&attack.cloud, map, index, &icp_config),
                Association::GroundTruth => icp_with_association(&attack.cloud, map, &ps.scan.assoc, &icp_config),
            };
            let icp_error = result.pose.error_from(&ps.scan.pose)[component.index()].abs();
            let theory_error = attack.error.abs();
            Ok(ValidationRow {
                trial,
                component,
                d,
                theory_error,
                icp_error,
                signed_diff: theory_error - icp_error,
                icp_converged: result.converged,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn sector_count_rounding() {
        assert_eq!(corrupted_sector_count(0.25, 30), 8);
        assert_eq!(corrupted_sector_count(0.0, 30), 0);
        assert_eq!(corrupted_sector_count(0.99, 30), 30);
    }

    #[test]
    fn rejects_bad_fraction() {
        let config = ValidationConfig {
            poses: vec![TrajectoryPose {
                id: "0".into(),
                pose: crate::geometry::Pose::identity(),
            }],
            corrupted_fraction: 1.5,
            ..Default::default()
        };
        let map = PointCloud::with_normals(vec![nalgebra::Vector3::zeros()], vec![nalgebra::Vector3::z()]);
        assert!(validate_bound(&map, &config).is_err());
    }
}
