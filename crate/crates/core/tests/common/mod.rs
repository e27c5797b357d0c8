#![allow(dead_code)]

use icp_resilience::cloud::{make_scene, PointCloud, ScanParams, SceneKind, SceneParams};
use icp_resilience::geometry::Pose;
use icp_resilience::resilience::TrajectoryPose;

pub fn scene(kind: SceneKind) -> PointCloud {
    make_scene(kind, &SceneParams::default_for(kind)).unwrap()
}

/// Ten poses near the middle of every fixture, sensor 1.5 m above the floor,
/// with yaw sweeping 0..1.8 rad.
pub fn fixture_poses() -> Vec<TrajectoryPose> {
    (0..10)
        .map(|i| {
            let f = i as f64;
            TrajectoryPose {
                id: format!("p{i}"),
                pose: Pose::from_xyz_ypr(-1.5 + 0.3 * f, -0.5 + 0.1 * f, 1.5, 0.2 * f, 0.0, 0.0),
            }
        })
        .collect()
}

pub fn trajectory_csv(poses: &[TrajectoryPose]) -> String {
    let mut s = String::from("pose_id,x,y,z,yaw,pitch,roll\n");
    for p in poses {
        let (yaw, pitch, roll) = p.pose.ypr();
        let t = p.pose.translation;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.id, t.x, t.y, t.z, yaw, pitch, roll
        ));
    }
    s
}

pub fn scan_params(seed: u64) -> ScanParams {
    ScanParams {
        seed,
        ..ScanParams::default()
    }
}
