mod common;

use std::path::Path;
use std::process::Command;

use icp_resilience::cloud::{load_cloud, CloudFormat};

fn cli(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_icp-resilience"))
        .args(args)
        .current_dir(dir)
        .env_remove("ICP_RESILIENCE_SEED")
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn setup(dir: &Path) {
    assert_eq!(cli(&["make-scene", "--kind", "room", "--out", "room.ply"], dir).0, 0);
    std::fs::write(dir.join("traj.csv"), common::trajectory_csv(&common::fixture_poses())).unwrap();
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

fn shifts(dir: &Path) -> Vec<f64> {
    let a = load_cloud(dir.join("original.ply"), CloudFormat::PlyAscii).unwrap();
    let b = load_cloud(dir.join("corrupted.ply"), CloudFormat::PlyAscii).unwrap();
    assert_eq!(a.len(), b.len());
    a.points.iter().zip(&b.points).map(|(p, q)| (p - q).norm()).collect()
}

#[test]
fn certify_room_reports_every_pose_as_resilient() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let (code, _) = cli(
        &["certify", "--map", "room.ply", "--trajectory", "traj.csv", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(tmp.path().join("o/certify.csv")).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), 10);
    for row in rows {
        let r: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!(r > 0.0, "{row}");
    }
}

#[test]
fn attack_without_faults_leaves_the_scan_alone() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let args = [
        "attack",
        "--map",
        "room.ply",
        "--trajectory",
        "traj.csv",
        "--pose-id",
        "p4",
        "--k",
        "0",
        "--out",
        "o",
    ];
    assert_eq!(cli(&args, tmp.path()).0, 0);
    assert!(shifts(&tmp.path().join("o")).iter().all(|&s| s == 0.0));
}

#[test]
fn attack_shifts_stay_within_twice_the_trim_distance() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let args = [
        "attack",
        "--map",
        "room.ply",
        "--trajectory",
        "traj.csv",
        "--pose-id",
        "p4",
        "--k",
        "4",
        "--d",
        "0.25",
        "--out",
        "o",
    ];
    assert_eq!(cli(&args, tmp.path()).0, 0);
    let s = shifts(&tmp.path().join("o"));
    assert!(s.iter().any(|&v| v > 0.0));
    assert!(s.iter().all(|&v| v <= 0.5 + 1e-9));
    let faults = std::fs::read_to_string(tmp.path().join("o/faults.csv")).unwrap();
    assert_eq!(data_lines(&faults).len(), s.iter().filter(|&&v| v > 0.0).count());
}

#[test]
fn malformed_trajectory_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    std::fs::write(
        tmp.path().join("bad.csv"),
        "pose_id,x,y,z,yaw,pitch,roll\np0,1,2,oops,0,0,0\n",
    )
    .unwrap();
    let (code, _) = cli(
        &["certify", "--map", "room.ply", "--trajectory", "bad.csv", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(code, 3);
}

#[test]
fn validate_without_corruption_matches_icp() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let args = [
        "validate",
        "--map",
        "room.ply",
        "--trajectory",
        "traj.csv",
        "--trials",
        "1",
        "--fraction",
        "0",
        "--d-values",
        "0.3",
        "--association",
        "gt",
        "--out",
        "o",
    ];
    assert_eq!(cli(&args, tmp.path()).0, 0);
    let csv = std::fs::read_to_string(tmp.path().join("o/validation.csv")).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), 2);
    for row in rows {
        let diff: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
        assert!(diff.abs() < 1e-8, "{row}");
    }
}
