mod common;

use icp_resilience::cloud::{ScanParams, SceneKind};
use icp_resilience::fault::Component;
use icp_resilience::validate::{validate_bound, Association, ValidationConfig};

fn config(fraction: f64, trials: usize) -> ValidationConfig {
    ValidationConfig {
        poses: common::fixture_poses(),
        corrupted_fraction: fraction,
        n_trials: trials,
        seed: 7,
        scan: ScanParams {
            sigma: 0.0,
            ..ScanParams::default()
        },
        ..ValidationConfig::default()
    }
}

#[test]
fn no_corruption_and_no_noise_gives_zero_error() {
    let map = common::scene(SceneKind::Room);
    let mut c = config(0.0, 10);
    c.association = Association::GroundTruth;
    let table = validate_bound(&map, &c).unwrap();
    assert!(!table.rows.is_empty());
    for row in &table.rows {
        assert!(row.theory_error.abs() < 1e-8, "{row:?}");
        assert!(row.signed_diff.abs() < 1e-8, "{row:?}");
    }
}

#[test]
fn one_ground_truth_iteration_reproduces_the_closed_form() {
    let map = common::scene(SceneKind::Intersection);
    let mut c = config(0.25, 20);
    c.association = Association::GroundTruth;
    c.max_iters = 1;
    let table = validate_bound(&map, &c).unwrap();
    assert!(!table.rows.is_empty());
    for row in &table.rows {
        assert!(row.signed_diff.abs() < 1e-8, "{row:?}");
    }
}

#[test]
fn theory_median_grows_with_trim_distance() {
    let map = common::scene(SceneKind::Room);
    let mut c = config(0.25, 40);
    c.d_values = vec![0.1, 0.2, 0.3, 0.4];
    c.components = vec![Component::X];
    let table = validate_bound(&map, &c).unwrap();
    let mut medians: Vec<(f64, f64)> = c
        .d_values
        .iter()
        .map(|&d| {
            let mut v: Vec<f64> = table.rows.iter().filter(|r| r.d == d).map(|r| r.theory_error).collect();
            v.sort_by(f64::total_cmp);
            (d, v[v.len() / 2])
        })
        .collect();
    medians.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in medians.windows(2) {
        assert!(w[1].1 >= w[0].1, "{medians:?}");
    }
}

#[test]
fn summaries_cover_every_cell() {
    let map = common::scene(SceneKind::Room);
    let mut c = config(0.25, 8);
    c.d_values = vec![0.2, 0.3];
    let table = validate_bound(&map, &c).unwrap();
    let s = table.summaries();
    assert_eq!(s.len(), 4);
    for cell in &s {
        assert!(cell.min <= cell.q25 && cell.q25 <= cell.median && cell.median <= cell.q75 && cell.q75 <= cell.max);
        assert!((0.0..=1.0).contains(&cell.false_negative_ratio));
    }
}
