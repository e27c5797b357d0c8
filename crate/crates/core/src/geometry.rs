//! Rigid poses and SO(3) helpers.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};

/// Small-angle state `[t_x, t_y, t_z, phi_x, phi_y, phi_z]`.
pub type State6 = Vector6<f64>;

/// Skew-symmetric cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exact exponential map of a rotation vector.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*phi).into_inner()
}

/// Rotation vector of a rotation matrix.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Closest rotation matrix (polar decomposition).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * v_t;
    }
    q
}

/// Rigid transform taking sensor-frame points into the map frame:
/// `q = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Pose from position and Z-Y-X Euler angles (radians).
    pub fn from_xyz_ypr(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        Self::new(r, Vector3::new(x, y, z))
    }

    /// Pose built from a small-angle state, with the rotation part mapped
    /// through the exact exponential.
    pub fn from_state(x: &State6) -> Self {
        let t = Vector3::new(x[0], x[1], x[2]);
        let phi = Vector3::new(x[3], x[4], x[5]);
        Self::new(exp_so3(&phi), t)
    }

    /// `(yaw, pitch, roll)` of the rotation.
    pub fn ypr(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        (yaw, pitch, roll)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Map-frame point into the sensor frame.
    pub fn inverse_transform_point(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (q - self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Right-multiplies by the increment `exp(delta)`: the translation part
    /// of `delta` is expressed in this pose's sensor frame.
    pub fn retract(&self, delta: &State6) -> Pose {
        let dt = Vector3::new(delta[0], delta[1], delta[2]);
        let dphi = Vector3::new(delta[3], delta[4], delta[5]);
        Pose::new(
            orthonormalize(&(self.rotation * exp_so3(&dphi))),
            self.translation + self.rotation * dt,
        )
    }

    /// Sensor-frame error of `self` relative to `reference`, in the same
    /// parametrization as the linearized system: `[R_refᵀ(t − t_ref); log(R_refᵀR)]`.
    pub fn error_from(&self, reference: &Pose) -> State6 {
        let rt = reference.rotation.transpose();
        let dt = rt * (self.translation - reference.translation);
        let dphi = log_so3(&(rt * self.rotation));
        State6::new(dt.x, dt.y, dt.z, dphi.x, dphi.y, dphi.z)
    }

    /// `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }
}
