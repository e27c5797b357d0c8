mod common;

use icp_resilience::cloud::{read_cloud, write_cloud, CloudFormat, PointCloud, SceneKind};
use icp_resilience::fault::{
    hazard_params, hazard_probability, hazard_probability_raw, linear_error, worst_bias, worst_error,
    worst_fault_vector, Component, FaultMask,
};
use icp_resilience::geometry::{exp_so3, log_so3, Pose, State6};
use icp_resilience::index::SpatialIndex;
use icp_resilience::linsys::{estimator, LinearSystem};
use icp_resilience::resilience::{
    certify_trajectory, partition, pose_system, sector_index, CertifyConfig, ResilienceReport,
};
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn system_from(a: DMatrix<f64>) -> LinearSystem {
    let n = a.nrows();
    LinearSystem {
        a,
        y: DVector::zeros(n),
        alpha: vec![true; n],
        sigma: 0.1,
        row_origin: (0..n).collect(),
        normals: vec![Vector3::z(); n],
        dropped: Vec::new(),
    }
}

fn random_full_rank(seed: u64, n: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
        let sv = a.clone().svd(false, false).singular_values;
        if sv.min() > 1e-2 * sv.max() {
            return a;
        }
    }
}

fn mask_from_bits(bits: &[bool], est: &icp_resilience::linsys::EstimatorMatrix) -> FaultMask {
    FaultMask::new(bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i), est).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimator_is_a_left_inverse(seed in any::<u64>(), n in 6usize..120) {
        let a = random_full_rank(seed, n);
        let est = estimator(&system_from(a.clone())).unwrap();
        let eye = &est.h * &a;
        let err = (eye - DMatrix::<f64>::identity(6, 6)).abs().max();
        prop_assert!(err <= 1e-8, "max |HA - I| = {err}");
    }

    #[test]
    fn worst_fault_attains_worst_error_and_evades_trimming(
        seed in any::<u64>(),
        n in 8usize..60,
        d in 0.01f64..1.0,
        j in 0usize..6,
        bits in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let est = estimator(&system_from(random_full_rank(seed, n))).unwrap();
        let mask = mask_from_bits(&bits[..n], &est);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let c = Component::from_index(j).unwrap();
        let e = worst_error(&est, c, &mask, d, &w).unwrap();
        let f = worst_fault_vector(&est, c, &mask, d, &w).unwrap();
        let realized = linear_error(&est, &mask, &w, &f).unwrap()[j];
        prop_assert!((realized - e).abs() <= 1e-12 * (1.0 + e.abs()));
        for (k, &row) in mask.rows().iter().enumerate() {
            prop_assert!((w[row] + f[k]).abs() <= d * (1.0 + 1e-15));
        }
    }

    #[test]
    fn bias_is_linear_in_d_and_monotone_in_mask(
        seed in any::<u64>(),
        d in 0.01f64..1.0,
        scale in 0.1f64..10.0,
        j in 0usize..6,
        bits in proptest::collection::vec(any::<bool>(), 40),
        extra in 0usize..40,
    ) {
        let est = estimator(&system_from(random_full_rank(seed, 40))).unwrap();
        let c = Component::from_index(j).unwrap();
        let mask = mask_from_bits(&bits, &est);
        let mu = worst_bias(&est, c, &mask, d);
        prop_assert!((worst_bias(&est, c, &mask, d * scale) - scale * mu).abs() <= 1e-12 * (1.0 + scale * mu));
        let mut bigger = bits.clone();
        bigger[extra] = true;
        prop_assert!(worst_bias(&est, c, &mask_from_bits(&bigger, &est), d) >= mu);
    }

    #[test]
    fn hazard_probability_is_bounded_and_monotone(
        mu in 0.0f64..1.0,
        sigma in 0.0f64..0.5,
        r in 1e-3f64..1.0,
        dmu in 0.0f64..0.2,
        dr in 0.0f64..0.2,
    ) {
        let p = hazard_probability_raw(mu, sigma, r);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(hazard_probability_raw(mu + dmu, sigma, r) >= p);
        prop_assert!(hazard_probability_raw(mu, sigma, r + dr) <= p);
        if mu >= r {
            prop_assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn sector_index_is_in_range(azimuth in -10.0f64..10.0, n in 1usize..100) {
        prop_assert!(sector_index(azimuth, n) < n);
    }

    #[test]
    fn so3_exp_log_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let phi = Vector3::new(x, y, z);
        prop_assume!(phi.norm() < 3.0);
        prop_assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-10);
    }

    #[test]
    fn retract_and_error_are_inverse(
        v in proptest::array::uniform6(-0.5f64..0.5),
        base in proptest::array::uniform6(-3.0f64..3.0),
    ) {
        let delta = State6::from_row_slice(&v);
        let pose = Pose::from_xyz_ypr(base[0], base[1], base[2], base[3], 0.3 * base[4], 0.3 * base[5]);
        let moved = pose.retract(&delta);
        prop_assert!(moved.is_valid(1e-12));
        prop_assert!((moved.error_from(&pose) - delta).norm() < 1e-10);
    }

    #[test]
    fn nearest_neighbor_matches_linear_scan(seed in any::<u64>(), n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect();
        let index = SpatialIndex::build(&pts);
        for _ in 0..50 {
            let q = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0));
            let best = (0..n)
                .min_by(|&a, &b| (pts[a] - q).norm_squared().total_cmp(&(pts[b] - q).norm_squared()).then(a.cmp(&b)))
                .unwrap();
            prop_assert_eq!(index.nearest(&q).unwrap().index, best);
        }
    }

    #[test]
    fn cloud_text_formats_round_trip_bit_exact(seed in any::<u64>(), n in 1usize..50, ply in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1e3..1e3), rng.random(), rng.random_range(-1e-3..1e-3)))
            .collect();
        let nrm: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0))
            .collect();
        let cloud = PointCloud::with_normals(pts, nrm);
        let format = if ply { CloudFormat::PlyAscii } else { CloudFormat::XyzCsv };
        let mut buf = Vec::new();
        write_cloud(&cloud, &mut buf, format, &["c".to_string()]).unwrap();
        let (back, warnings) = read_cloud(buf.as_slice(), format).unwrap();
        prop_assert_eq!(&back.points, &cloud.points);
        for i in 0..n {
            let (a, b) = (back.normal(i).unwrap(), cloud.normal(i).unwrap());
            prop_assert!((a - b).norm() < 1e-15);
        }
        prop_assert!(warnings.len() <= n);
    }
}

/// Empirical P(|e| > r) over sampled noise against the closed form, on a
/// real room fixture.
#[test]
fn noise_marginalization_matches_hazard_probability() {
    let map = common::scene(SceneKind::Room);
    let pose = &common::fixture_poses()[3];
    let ps = pose_system(&map, &pose.pose, &common::scan_params(11), 0.3).unwrap();
    let est = ps.estimator.unwrap();
    let part = partition(&ps.system, &ps.scan, 30).unwrap();
    let mask = part.mask(&[0, 1, 2, 3, 4], &est).unwrap();
    let c = Component::X;
    let sigma_w = 0.10;
    let params = hazard_params(&est, c, &mask, 0.3, sigma_w);
    // A radius slightly above mu keeps the probability away from 0 and 1.
    let r = params.mu + 0.5 * params.sigma;
    let p = hazard_probability(&params, r);

    let trials = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = Normal::new(0.0, sigma_w).unwrap();
    let n = est.n_rows();
    let mut w = vec![0.0; n];
    let mut hits = 0;
    for _ in 0..trials {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if est.active[i] { normal.sample(&mut rng) } else { 0.0 };
        }
        if worst_error(&est, c, &mask, 0.3, &w).unwrap().abs() > r {
            hits += 1;
        }
    }
    let p_mc = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((p_mc - p).abs() < 4.0 * se, "closed form {p}, empirical {p_mc}");
}

#[test]
fn pose_reports_do_not_depend_on_batch_order() {
    let map = common::scene(SceneKind::Intersection);
    let poses = common::fixture_poses();
    let mut reversed = poses.clone();
    reversed.reverse();
    let config = CertifyConfig::default();
    let a = certify_trajectory(&map, &poses, &config).unwrap();
    let mut b: Vec<ResilienceReport> = certify_trajectory(&map, &reversed, &config).unwrap();
    b.reverse();
    assert_eq!(a, b);
}
