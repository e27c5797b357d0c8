use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{PointCloud, Scan};
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Parameters of the range-limited subsampling scan model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanParams {
    /// Meters from the sensor origin.
    pub max_range: f64,
    pub n_points: usize,
    /// Isotropic per-axis noise std in meters.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            max_range: 30.0,
            n_points: 1000,
            sigma: 0.10,
            seed: 0,
        }
    }
}

/// Simulates a scan at `pose` by uniformly subsampling map points within
/// `max_range`, expressing them in the sensor frame and adding Gaussian noise.
///
/// If fewer than `n_points` map points are in range, all of them are used and
/// `Scan::truncated` is set.
pub fn simulate_scan(map: &PointCloud, pose: &Pose, params: &ScanParams) -> Result<Scan> {
    if !map.has_normals() {
        return Err(Error::InvalidParameter("map has no normals".into()));
    }
    if !pose.is_valid(1e-9) {
        return Err(Error::InvalidParameter("pose rotation is not orthonormal".into()));
    }
    if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {}",
            params.sigma
        )));
    }
    if !(params.max_range > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "max_range must be positive, got {}",
            params.max_range
        )));
    }
    let range_sq = params.max_range * params.max_range;
    let in_range: Vec<usize> = map
        .points
        .iter()
        .enumerate()
        .filter(|(_, q)| (*q - pose.translation).norm_squared() <= range_sq)
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let truncated = in_range.len() < params.n_points;
    let assoc: Vec<usize> = if truncated {
        log::warn!(
            "only {} map points within {} m, requested {}",
            in_range.len(),
            params.max_range,
            params.n_points
        );
        in_range
    } else {
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, in_range.len(), params.n_points)
            .into_iter()
            .map(|k| in_range[k])
            .collect();
        picked.sort_unstable();
        picked
    };

    let noise = Normal::new(0.0, params.sigma).expect("sigma validated");
    let points = assoc
        .iter()
        .map(|&i| {
            let p = pose.inverse_transform_point(&map.points[i]);
            if params.sigma > 0.0 {
                p + nalgebra::Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();

    Ok(Scan {
        cloud: PointCloud::new(points),
        assoc,
        noise_sigma: params.sigma,
        pose: *pose,
        truncated,
    })
}
