use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::error::{Error, Result};

/// Synthetic map layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Two parallel walls along x with floor and ceiling. Translation along x
    /// is unobservable.
    Corridor,
    /// Closed box: four walls with inward normals, floor and ceiling.
    Room,
    /// Open ground plane with four short building corners far from the
    /// center; most of the azimuth sees no vertical structure.
    Intersection,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(Self::Corridor),
            "room" => Ok(Self::Room),
            "intersection" => Ok(Self::Intersection),
            other => Err(Error::InvalidParameter(format!("unknown scene kind '{other}'"))),
        }
    }
}

/// Scene dimensions in meters and sampling density in points per m².
///
/// For the intersection, `width` is the road width, `length` the extent of
/// the ground plane and `height` the building height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub density: f64,
    pub seed: u64,
}

impl SceneParams {
    pub fn default_for(kind: SceneKind) -> Self {
        let (length, width, height, density) = match kind {
            SceneKind::Corridor => (20.0, 4.0, 3.0, 50.0),
            SceneKind::Room => (10.0, 8.0, 3.0, 20.0),
            SceneKind::Intersection => (60.0, 20.0, 6.0, 20.0),
        };
        Self {
            length,
            width,
            height,
            density,
            seed: 0,
        }
    }
}

/// The intersection ground is sampled this much sparser than the walls.
const GROUND_DENSITY_FACTOR: f64 = 0.1;
/// Length of each intersection wall segment relative to half the road width.
const CORNER_SEGMENT_RATIO: f64 = 0.3;

/// Axis-aligned rectangle `origin + a*u + b*v`, `a, b ∈ [0, 1)`.
struct Patch {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
    density: f64,
}

impl Patch {
    fn sample(&self, rng: &mut ChaCha8Rng, points: &mut Vec<Vector3<f64>>, normals: &mut Vec<Vector3<f64>>) {
        let area = self.u.norm() * self.v.norm();
        let count = (area * self.density).round() as usize;
        for _ in 0..count {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            points.push(self.origin + self.u * a + self.v * b);
            normals.push(self.normal);
        }
    }
}

fn rect(origin: [f64; 3], u: [f64; 3], v: [f64; 3], normal: [f64; 3], density: f64) -> Patch {
    Patch {
        origin: Vector3::from(origin),
        u: Vector3::from(u),
        v: Vector3::from(v),
        normal: Vector3::from(normal),
        density,
    }
}

/// Builds a synthetic map with analytic unit normals. Deterministic in `params.seed`.
pub fn make_scene(kind: SceneKind, params: &SceneParams) -> Result<PointCloud> {
    let SceneParams {
        length: l,
        width: w,
        height: h,
        density,
        seed,
    } = *params;
    for (name, v) in [("length", l), ("width", w), ("height", h), ("density", density)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let (hl, hw) = (l / 2.0, w / 2.0);
    let patches = match kind {
        SceneKind::Corridor => vec![
            rect([-hl, -hw, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h], [0.0, 1.0, 0.0], density),
            rect([-hl, hw, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h], [0.0, -1.0, 0.0], density),
            rect([-hl, -hw, 0.0], [l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, 1.0], density),
            rect([-hl, -hw, h], [l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, -1.0], density),
        ],
        SceneKind::Room => vec![
            rect([-hl, -hw, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h], [0.0, 1.0, 0.0], density),
            rect([-hl, hw, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h], [0.0, -1.0, 0.0], density),
            rect([-hl, -hw, 0.0], [0.0, w, 0.0], [0.0, 0.0, h], [1.0, 0.0, 0.0], density),
            rect([hl, -hw, 0.0], [0.0, w, 0.0], [0.0, 0.0, h], [-1.0, 0.0, 0.0], density),
            rect([-hl, -hw, 0.0], [l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, 1.0], density),
            rect([-hl, -hw, h], [l, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, -1.0], density),
        ],
        SceneKind::Intersection => {
            let c = CORNER_SEGMENT_RATIO * hw;
            let mut patches = vec![rect(
                [-hl, -hl, 0.0],
                [l, 0.0, 0.0],
                [0.0, l, 0.0],
                [0.0, 0.0, 1.0],
                density * GROUND_DENSITY_FACTOR,
            )];
            // Building occupying the quadrant (sx * x > hw, sy * y > hw).
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                // Wall facing the road running along y (normal -sx x).
                patches.push(rect(
                    [sx * hw, sy * hw, 0.0],
                    [0.0, sy * c, 0.0],
                    [0.0, 0.0, h],
                    [-sx, 0.0, 0.0],
                    density,
                ));
                // Wall facing the road running along x (normal -sy y).
                patches.push(rect(
                    [sx * hw, sy * hw, 0.0],
                    [sx * c, 0.0, 0.0],
                    [0.0, 0.0, h],
                    [0.0, -sy, 0.0],
                    density,
                ));
            }
            patches
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for patch in &patches {
        patch.sample(&mut rng, &mut points, &mut normals);
    }
    Ok(PointCloud {
        points,
        normals: Some(normals.into_iter().map(Some).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corridor_walls_have_plus_minus_y_normals() {
        let cloud = make_scene(SceneKind::Corridor, &SceneParams::default_for(SceneKind::Corridor)).unwrap();
        let mut walls = 0;
        for (i, p) in cloud.points.iter().enumerate() {
            let n = cloud.normal(i).unwrap();
            if n.z == 0.0 {
                walls += 1;
                assert_eq!(n.x, 0.0);
                assert_eq!(n.y.abs(), 1.0);
                assert_eq!(p.y, -2.0 * n.y);
            }
        }
        // 2 walls of 20 m x 3 m at 50 pts/m².
        assert_eq!(walls, 2 * 3000);
    }

    #[test]
    fn room_walls_point_inward() {
        let params = SceneParams::default_for(SceneKind::Room);
        let cloud = make_scene(SceneKind::Room, &params).unwrap();
        let mut wall_normals = std::collections::BTreeSet::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let n = cloud.normal(i).unwrap();
            let center = Vector3::new(0.0, 0.0, params.height / 2.0);
            assert!(n.dot(&(center - p)) > 0.0);
            if n.z == 0.0 {
                wall_normals.insert(((n.x as i32), (n.y as i32)));
            }
        }
        assert_eq!(wall_normals.len(), 4);
    }

    #[test]
    fn points_lie_exactly_on_surfaces() {
        let params = SceneParams::default_for(SceneKind::Room);
        let cloud = make_scene(SceneKind::Room, &params).unwrap();
        for (i, p) in cloud.points.iter().enumerate() {
            let n = cloud.normal(i).unwrap();
            let on_surface = (n.x != 0.0 && p.x.abs() == params.length / 2.0)
                || (n.y != 0.0 && p.y.abs() == params.width / 2.0)
                || (n.z == 1.0 && p.z == 0.0)
                || (n.z == -1.0 && p.z == params.height);
            assert!(on_surface, "{p:?} {n:?}");
        }
    }

    #[test]
    fn intersection_leaves_most_azimuth_uncovered() {
        let cloud = make_scene(
            SceneKind::Intersection,
            &SceneParams::default_for(SceneKind::Intersection),
        )
        .unwrap();
        let mut covered = [false; 360];
        for (i, p) in cloud.points.iter().enumerate() {
            if cloud.normal(i).unwrap().z.abs() < 0.5 {
                let az = p.y.atan2(p.x).to_degrees() + 180.0;
                covered[(az as usize).min(359)] = true;
            }
        }
        let uncovered = covered.iter().filter(|c| !**c).count() as f64 / 360.0;
        assert!(uncovered >= 0.8, "uncovered fraction {uncovered}");
    }

    #[test]
    fn deterministic_per_seed() {
        let mut params = SceneParams::default_for(SceneKind::Room);
        let a = make_scene(SceneKind::Room, &params).unwrap();
        let b = make_scene(SceneKind::Room, &params).unwrap();
        assert_eq!(a, b);
        params.seed = 1;
        assert_ne!(a, make_scene(SceneKind::Room, &params).unwrap());
    }

    #[test]
    fn rejects_nonpositive_dimensions() {
        let mut params = SceneParams::default_for(SceneKind::Room);
        params.width = 0.0;
        assert!(make_scene(SceneKind::Room, &params).is_err());
    }
}
