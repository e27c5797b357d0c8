//! Sector-level fault search, safety certificates and the resilience score.
//!
//! The scan azimuth is split into equal sectors; a fault event corrupts whole
//! sectors. Because the worst bias is additive over rows, each sector has a
//! score `Σ|g_jᵀH|` over its rows and the bias of a sector set is `d` times
//! the sum of its scores.

use std::f64::consts::PI;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cloud::{simulate_scan, PointCloud, Scan, ScanParams};
use crate::error::{Error, Result};
use crate::fault::{hazard_probability_raw, Component, FaultMask};
use crate::geometry::{Pose, State6};
use crate::linsys::{build_system, estimator, EstimatorMatrix, LinearSystem};

/// Above this many candidate subsets the exhaustive search refuses to run.
pub const EXHAUSTIVE_LIMIT: u64 = 2_000_000;

/// Assignment of every system row to an azimuth sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorPartition {
    pub n_sectors: usize,
    pub sector_of_row: Vec<usize>,
}

/// `floor((azimuth + π) / (2π / n))`, clamped to `n − 1`.
pub fn sector_index(azimuth: f64, n_sectors: usize) -> usize {
    let s = ((azimuth + PI) / (2.0 * PI) * n_sectors as f64).floor();
    (s.max(0.0) as usize).min(n_sectors - 1)
}

/// Bins each row by the azimuth `atan2(p_y, p_x)` of its sensor-frame point.
pub fn partition(system: &LinearSystem, scan: &Scan, n_sectors: usize) -> Result<SectorPartition> {
    if n_sectors == 0 {
        return Err(Error::InvalidParameter("n_sectors must be >= 1".into()));
    }
    let sector_of_row = system
        .row_origin
        .iter()
        .map(|&k| {
            let p = &scan.cloud.points[k];
            sector_index(p.y.atan2(p.x), n_sectors)
        })
        .collect();
    Ok(SectorPartition {
        n_sectors,
        sector_of_row,
    })
}

impl SectorPartition {
    /// Active rows falling in any of `sectors`, as a fault mask.
    pub fn mask(&self, sectors: &[usize], estimator: &EstimatorMatrix) -> Result<FaultMask> {
        let mut selected = vec![false; self.n_sectors];
        for &s in sectors {
            if s >= self.n_sectors {
                return Err(Error::InvalidParameter(format!("sector {s} out of range")));
            }
            selected[s] = true;
        }
        FaultMask::new(
            self.sector_of_row
                .iter()
                .enumerate()
                .filter(|(i, s)| selected[**s] && estimator.active[*i])
                .map(|(i, _)| i),
            estimator,
        )
    }

    /// Number of active rows per sector.
    pub fn counts(&self, estimator: &EstimatorMatrix) -> Vec<usize> {
        let mut c = vec![0; self.n_sectors];
        for (i, &s) in self.sector_of_row.iter().enumerate() {
            if estimator.active[i] {
                c[s] += 1;
            }
        }
        c
    }
}

/// Per-sector `Σ|(g_jᵀH)_i|` for one component.
pub fn sector_scores(estimator: &EstimatorMatrix, component: Component, partition: &SectorPartition) -> Vec<f64> {
    SectorStats::new(estimator, component, partition).scores
}

/// Sector aggregates of one estimator row: absolute sums (bias) and squared
/// sums (noise variance).
#[derive(Debug, Clone, PartialEq)]
pub struct SectorStats {
    pub scores: Vec<f64>,
    pub sumsq: Vec<f64>,
    pub total_sumsq: f64,
}

/// What the exhaustive search maximizes: the hazard probability at `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardObjective {
    pub d: f64,
    pub noise_sigma: f64,
    pub radius: f64,
}

/// `(μ, σ, P(|e| > r))` of a sector set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorHazard {
    pub mu: f64,
    pub sigma: f64,
    pub probability: f64,
}

impl SectorStats {
    pub fn new(estimator: &EstimatorMatrix, component: Component, partition: &SectorPartition) -> Self {
        let h = estimator.h.row(component.index());
        let mut scores = vec![0.0; partition.n_sectors];
        let mut sumsq = vec![0.0; partition.n_sectors];
        let mut total_sumsq = 0.0;
        for (i, &s) in partition.sector_of_row.iter().enumerate() {
            if estimator.active[i] {
                scores[s] += h[i].abs();
                sumsq[s] += h[i] * h[i];
                total_sumsq += h[i] * h[i];
            }
        }
        Self {
            scores,
            sumsq,
            total_sumsq,
        }
    }

    /// Stats from bare scores with no noise contribution (σ = 0).
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let n = scores.len();
        Self {
            scores,
            sumsq: vec![0.0; n],
            total_sumsq: 0.0,
        }
    }

    pub fn n_sectors(&self) -> usize {
        self.scores.len()
    }

    /// `sectors` must be sorted ascending for bitwise-reproducible sums.
    pub fn hazard(&self, sectors: &[usize], objective: &HazardObjective) -> SectorHazard {
        let (mu, sigma) = self.mu_sigma(sectors, objective);
        SectorHazard {
            mu,
            sigma,
            probability: hazard_probability_raw(mu, sigma, objective.radius),
        }
    }

    fn mu_sigma(&self, sectors: &[usize], objective: &HazardObjective) -> (f64, f64) {
        let score: f64 = sectors.iter().map(|&s| self.scores[s]).sum();
        let removed: f64 = sectors.iter().map(|&s| self.sumsq[s]).sum();
        let var = (self.total_sumsq - removed).max(0.0);
        (objective.d * score, objective.noise_sigma * var.sqrt())
    }

    /// Standardized margin `(r − μ)/σ`; smaller is more hazardous.
    fn margin(&self, sectors: &[usize], objective: &HazardObjective) -> f64 {
        let (mu, sigma) = self.mu_sigma(sectors, objective);
        if sigma > 0.0 {
            (objective.radius - mu) / sigma
        } else if mu >= objective.radius {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// The `k` highest-scoring sectors.
    #[default]
    TopK,
    /// The `k`-subset with the largest hazard probability, by enumeration.
    Exhaustive,
    /// The best cyclic run of `k` adjacent sectors.
    Contiguous,
}

impl SearchMode {
    pub fn name(self) -> &'static str {
        match self {
            SearchMode::TopK => "topk",
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Contiguous => "contiguous",
        }
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(SearchMode::TopK),
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "contiguous" => Ok(SearchMode::Contiguous),
            other => Err(Error::InvalidParameter(format!("unknown search mode '{other}'"))),
        }
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Chooses the `k` sectors to corrupt. Returns sector indices sorted ascending.
pub fn worst_sector_set(
    stats: &SectorStats,
    k: usize,
    mode: SearchMode,
    objective: &HazardObjective,
) -> Result<Vec<usize>> {
    let n = stats.n_sectors();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={n}")));
    }
    let mut chosen = match mode {
        SearchMode::TopK => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| stats.scores[b].total_cmp(&stats.scores[a]).then(a.cmp(&b)));
            order.truncate(k);
            order
        }
        SearchMode::Contiguous => {
            let run = |start: usize| (0..k).map(|o| stats.scores[(start + o) % n]).sum::<f64>();
            let mut best = 0;
            let mut best_sum = run(0);
            for start in 1..n {
                let s = run(start);
                if s > best_sum {
                    best = start;
                    best_sum = s;
                }
            }
            (0..k).map(|o| (best + o) % n).collect()
        }
        SearchMode::Exhaustive => {
            let count = binomial(n as u64, k as u64);
            if count > EXHAUSTIVE_LIMIT {
                return Err(Error::InvalidParameter(format!(
                    "exhaustive search over C({n},{k}) = {count} subsets exceeds the limit of {EXHAUSTIVE_LIMIT}"
                )));
            }
            let mut combo: Vec<usize> = (0..k).collect();
            let mut best = combo.clone();
            let mut best_margin = stats.margin(&combo, objective);
            while next_combination(&mut combo, n) {
                let m = stats.margin(&combo, objective);
                if m < best_margin {
                    best_margin = m;
                    best.clone_from(&combo);
                }
            }
            best
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Advances to the next k-combination of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Per-component safety radii plus the certificate probability and the trim
/// distance the faults must evade.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub components: Vec<(Component, f64)>,
    pub p_safe: f64,
    pub d: f64,
}

impl Default for SafetySpec {
    /// d = 0.30 m, 1 % hazard threshold, 0.20 m on x and y.
    fn default() -> Self {
        Self {
            components: vec![(Component::X, 0.20), (Component::Y, 0.20)],
            p_safe: 0.99,
            d: 0.30,
        }
    }
}

impl SafetySpec {
    pub fn hazard_threshold(&self) -> f64 {
        1.0 - self.p_safe
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("safety spec has no components".into()));
        }
        if let Some((c, r)) = self.components.iter().find(|(_, r)| !(*r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "radius for {c} must be positive, got {r}"
            )));
        }
        if !(self.p_safe > 0.0 && self.p_safe < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_safe must be in (0,1), got {}",
                self.p_safe
            )));
        }
        if !(self.d > 0.0) {
            return Err(Error::InvalidParameter(format!("d must be positive, got {}", self.d)));
        }
        Ok(())
    }
}

/// Worst sector set and hazard for one component at one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStep {
    pub component: Component,
    pub k: usize,
    pub worst_sectors: Vec<usize>,
    pub mu: f64,
    pub sigma: f64,
    /// Reported probability; under top-k search this is the running maximum over k.
    pub p_hazard: f64,
}

/// Outcome of the k = 1, 2, … sweep for one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub resilience: f64,
    pub breaking_k: Option<usize>,
    pub steps: Vec<ComponentStep>,
    /// Fraction of active rows inside the largest tolerated worst set.
    pub point_fraction: f64,
    /// Set when the top-k hazard decreased with k and was replaced by the running maximum.
    pub monotonicity_violation: bool,
}

/// Sweeps `k` until any component's hazard exceeds `1 − p_safe`.
/// `R = (k_fail − 1) / n_sectors`, or 1 if no `k` fails.
pub fn certify(
    system: &LinearSystem,
    estimator: &EstimatorMatrix,
    partition: &SectorPartition,
    spec: &SafetySpec,
    mode: SearchMode,
) -> Result<Certification> {
    spec.validate()?;
    let n = partition.n_sectors;
    let threshold = spec.hazard_threshold();
    let stats: Vec<SectorStats> = spec
        .components
        .iter()
        .map(|(c, _)| SectorStats::new(estimator, *c, partition))
        .collect();
    let counts = partition.counts(estimator);
    let n_active = estimator.active_rows.len().max(1);

    let mut running = vec![0.0f64; spec.components.len()];
    let mut steps = Vec::new();
    let mut breaking_k = None;
    let mut violation = false;
    let mut last_safe_fraction = 0.0;
    for k in 1..=n {
        let mut failed = false;
        let mut fraction_k = 0.0f64;
        for (ci, (component, radius)) in spec.components.iter().enumerate() {
            let objective = HazardObjective {
                d: spec.d,
                noise_sigma: system.sigma,
                radius: *radius,
            };
            let sectors = worst_sector_set(&stats[ci], k, mode, &objective)?;
            let hz = stats[ci].hazard(&sectors, &objective);
            let mut p = hz.probability;
            if mode == SearchMode::TopK {
                if p < running[ci] {
                    violation = true;
                    log::debug!("hazard for {component} decreased at k = {k}; using running maximum");
                }
                p = p.max(running[ci]);
                running[ci] = p;
            }
            failed |= p > threshold;
            let rows: usize = sectors.iter().map(|&s| counts[s]).sum();
            fraction_k = fraction_k.max(rows as f64 / n_active as f64);
            steps.push(ComponentStep {
                component: *component,
                k,
                worst_sectors: sectors,
                mu: hz.mu,
                sigma: hz.sigma,
                p_hazard: p,
            });
        }
        if failed {
            breaking_k = Some(k);
            break;
        }
        last_safe_fraction = fraction_k;
    }
    let resilience = match breaking_k {
        Some(k) => (k - 1) as f64 / n as f64,
        None => 1.0,
    };
    Ok(Certification {
        resilience,
        breaking_k,
        steps,
        point_fraction: last_safe_fraction,
        monotonicity_violation: violation,
    })
}

/// Everything needed to certify poses against one map.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyConfig {
    pub scan: ScanParams,
    pub n_sectors: usize,
    pub mode: SearchMode,
    pub spec: SafetySpec,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            scan: ScanParams::default(),
            n_sectors: 30,
            mode: SearchMode::TopK,
            spec: SafetySpec::default(),
        }
    }
}

/// A named pose of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPose {
    pub id: String,
    pub pose: Pose,
}

/// Per-pose certification record.
#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceReport {
    pub pose_id: String,
    pub pose: Pose,
    pub resilience: f64,
    pub breaking_k: Option<usize>,
    pub degenerate: bool,
    /// Normal-matrix condition number, when it could be computed.
    pub condition: Option<f64>,
    pub point_fraction: f64,
    pub steps: Vec<ComponentStep>,
    pub monotonicity_violation: bool,
    /// Failure other than degenerate geometry, e.g. no correspondences.
    pub error: Option<String>,
}

impl ResilienceReport {
    fn failed(pose: &TrajectoryPose, degenerate: bool, condition: Option<f64>, error: Option<String>) -> Self {
        Self {
            pose_id: pose.id.clone(),
            pose: pose.pose,
            resilience: 0.0,
            breaking_k: None,
            degenerate,
            condition,
            point_fraction: 0.0,
            steps: Vec::new(),
            monotonicity_violation: false,
            error,
        }
    }
}

/// Seed for one pose, derived from the run seed and the pose id so that a
/// pose's report does not depend on its position in the batch.
pub fn pose_seed(seed: u64, pose_id: &str) -> u64 {
    // FNV-1a over the id, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in pose_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulated scan, its point-to-plane system trimmed at the ground truth, and
/// the estimator (or the reason none exists) for one pose.
pub struct PoseSystem {
    pub scan: Scan,
    pub system: LinearSystem,
    pub estimator: Result<EstimatorMatrix>,
}

pub fn pose_system(map: &PointCloud, pose: &Pose, scan_params: &ScanParams, d: f64) -> Result<PoseSystem> {
    let scan = simulate_scan(map, pose, scan_params)?;
    let system = build_system(&scan, map)?.trimmed_weights(&State6::zeros(), d)?;
    let estimator = estimator(&system);
    Ok(PoseSystem {
        scan,
        system,
        estimator,
    })
}

/// Simulates a scan at the pose and certifies it. Degenerate geometry yields
/// `R = 0` with the degenerate flag; other failures are recorded in `error`.
pub fn certify_pose(map: &PointCloud, pose: &TrajectoryPose, config: &CertifyConfig) -> ResilienceReport {
    let scan_params = ScanParams {
        seed: pose_seed(config.scan.seed, &pose.id),
        ..config.scan
    };
    let ps = match pose_system(map, &pose.pose, &scan_params, config.spec.d) {
        Ok(ps) => ps,
        Err(e) => return ResilienceReport::failed(pose, false, None, Some(e.to_string())),
    };
    let est = match ps.estimator {
        Ok(est) => est,
        Err(Error::DegenerateGeometry { condition }) => {
            return ResilienceReport::failed(pose, true, Some(condition), None)
        }
        Err(Error::TooFewRows { .. }) => return ResilienceReport::failed(pose, true, Some(f64::INFINITY), None),
        Err(e) => return ResilienceReport::failed(pose, false, None, Some(e.to_string())),
    };
    let result = partition(&ps.system, &ps.scan, config.n_sectors)
        .and_then(|part| certify(&ps.system, &est, &part, &config.spec, config.mode));
    match result {
        Ok(cert) => ResilienceReport {
            pose_id: pose.id.clone(),
            pose: pose.pose,
            resilience: cert.resilience,
            breaking_k: cert.breaking_k,
            degenerate: false,
            condition: Some(est.condition),
            point_fraction: cert.point_fraction,
            steps: cert.steps,
            monotonicity_violation: cert.monotonicity_violation,
            error: None,
        },
        Err(e) => ResilienceReport::failed(pose, false, Some(est.condition), Some(e.to_string())),
    }
}

/// Certifies every pose independently; output order follows the input.
pub fn certify_trajectory(
    map: &PointCloud,
    poses: &[TrajectoryPose],
    config: &CertifyConfig,
) -> Result<Vec<ResilienceReport>> {
    if !map.has_normals() {
        return Err(Error::InvalidParameter("map has no normals".into()));
    }
    if poses.is_empty() {
        return Err(Error::InvalidParameter("trajectory has no poses".into()));
    }
    config.spec.validate()?;
    if config.n_sectors == 0 {
        return Err(Error::InvalidParameter("n_sectors must be >= 1".into()));
    }
    Ok(poses.par_iter().map(|p| certify_pose(map, p, config)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective() -> HazardObjective {
        HazardObjective {
            d: 0.3,
            noise_sigma: 0.0,
            radius: 0.2,
        }
    }

    #[test]
    fn sector_binning_rule() {
        assert_eq!(sector_index(0.0, 30), 15);
        assert_eq!(sector_index(-PI, 30), 0);
        assert_eq!(sector_index(PI, 30), 29);
        assert_eq!(sector_index(1.0, 1), 0);
    }

    #[test]
    fn topk_and_contiguous_examples() {
        let stats = SectorStats::from_scores(vec![3.0, 1.0, 2.0]);
        assert_eq!(
            worst_sector_set(&stats, 1, SearchMode::TopK, &objective()).unwrap(),
            vec![0]
        );
        assert_eq!(
            worst_sector_set(&stats, 2, SearchMode::Contiguous, &objective()).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            worst_sector_set(&stats, 2, SearchMode::TopK, &objective()).unwrap(),
            vec![0, 2]
        );
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        let stats = SectorStats::from_scores(vec![1.0, 2.0, 2.0, 2.0]);
        assert_eq!(
            worst_sector_set(&stats, 2, SearchMode::TopK, &objective()).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn k_out_of_range() {
        let stats = SectorStats::from_scores(vec![1.0, 2.0]);
        assert!(worst_sector_set(&stats, 0, SearchMode::TopK, &objective()).is_err());
        assert!(worst_sector_set(&stats, 3, SearchMode::TopK, &objective()).is_err());
    }

    #[test]
    fn exhaustive_limit() {
        let stats = SectorStats::from_scores(vec![1.0; 30]);
        assert!(worst_sector_set(&stats, 4, SearchMode::Exhaustive, &objective()).is_ok());
        assert!(worst_sector_set(&stats, 12, SearchMode::Exhaustive, &objective()).is_err());
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut c, 7) {
            count += 1;
        }
        assert_eq!(count, 35);
        assert_eq!(binomial(30, 4), 27_405);
    }

    #[test]
    fn pose_seed_depends_on_id_and_seed() {
        assert_eq!(pose_seed(1, "a"), pose_seed(1, "a"));
        assert_ne!(pose_seed(1, "a"), pose_seed(1, "b"));
        assert_ne!(pose_seed(1, "a"), pose_seed(2, "a"));
    }

    #[test]
    fn spec_validation() {
        let mut spec = SafetySpec::default();
        assert!(spec.validate().is_ok());
        assert!((spec.hazard_threshold() - 0.01).abs() < 1e-15);
        spec.p_safe = 1.0;
        assert!(spec.validate().is_err());
        spec = SafetySpec::default();
        spec.components.push((Component::Yaw, 0.0));
        assert!(spec.validate().is_err());
    }
}
