//! C ABI over `icp_resilience`.
//!
//! Maps are opaque `IcrMap` handles owned by the caller and released with
//! `icr_map_free`. Every fallible call returns an `IcrStatus`; on failure
//! `icr_last_error` returns a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use icp_resilience::cloud::{
    estimate_normals, load_cloud, make_scene, CloudFormat, PointCloud, ScanParams, SceneKind, SceneParams,
};
use icp_resilience::fault::{hazard_probability_raw, Component};
use icp_resilience::geometry::Pose;
use icp_resilience::resilience::{certify_pose, CertifyConfig, SafetySpec, SearchMode, TrajectoryPose};
use icp_resilience::Error;
use nalgebra::Vector3;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// The scan does not constrain every pose component.
    Degenerate = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcrScene {
    Corridor = 0,
    Room = 1,
    Intersection = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcrSearchMode {
    Topk = 0,
    Exhaustive = 1,
    Contiguous = 2,
}

/// Opaque map handle.
pub struct IcrMap {
    cloud: PointCloud,
}

/// Certification parameters. Fill with `icr_certify_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IcrCertifyOptions {
    pub d: f64,
    pub sigma: f64,
    pub n_sectors: u32,
    pub scan_points: u32,
    pub max_range: f64,
    pub p_safe: f64,
    /// Safety radius per component (x, y, z, roll, pitch, yaw); values <= 0
    /// leave the component unconstrained.
    pub radius: [f64; 6],
    /// An `IcrSearchMode` value.
    pub mode: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcrPoseResult {
    /// Degree of resilience in [0, 1].
    pub resilience: f64,
    /// First hazardous sector count, or -1 when no count was hazardous.
    pub breaking_k: i32,
    pub degenerate: bool,
    pub point_fraction: f64,
    /// Normal-matrix condition number; NaN when unavailable.
    pub condition: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> IcrStatus {
    match e {
        Error::NotFound { .. } | Error::Io { .. } => IcrStatus::Io,
        Error::Parse { .. } => IcrStatus::Parse,
        Error::DegenerateGeometry { .. } | Error::TooFewRows { .. } => IcrStatus::Degenerate,
        _ => IcrStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> IcrStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

/// Runs `f`, converting panics into `Internal`.
fn guarded(f: impl FnOnce() -> IcrStatus) -> IcrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            IcrStatus::Internal
        }
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn icr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icr_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

fn boxed_map(cloud: PointCloud, out: *mut *mut IcrMap) -> IcrStatus {
    // SAFETY: callers checked `out` for NULL.
    unsafe { *out = Box::into_raw(Box::new(IcrMap { cloud })) };
    IcrStatus::Ok
}

/// Loads a map from a `.csv` or `.ply` file. Normals are estimated from 10
/// neighbours when the file has none.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_map_load(path: *const c_char, out: *mut *mut IcrMap) -> IcrStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument");
            return IcrStatus::NullPointer;
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_error("path is not valid UTF-8");
            return IcrStatus::InvalidArgument;
        };
        let path = Path::new(path);
        let Some(format) = CloudFormat::from_path(path) else {
            set_error(format!("cannot infer cloud format of {}", path.display()));
            return IcrStatus::InvalidArgument;
        };
        let cloud = match load_cloud(path, format) {
            Ok(c) if c.has_normals() => c,
            Ok(c) => match estimate_normals(&c, 10, None) {
                Ok(c) => c,
                Err(e) => return fail(e),
            },
            Err(e) => return fail(e),
        };
        boxed_map(cloud, out)
    })
}

/// Builds a map from `n` points (`xyz`, 3n doubles) and unit normals
/// (`normals`, 3n doubles).
///
/// # Safety
/// `xyz` and `normals` must point to `3 * n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn icr_map_from_points(
    xyz: *const f64,
    normals: *const f64,
    n: usize,
    out: *mut *mut IcrMap,
) -> IcrStatus {
    guarded(|| {
        if xyz.is_null() || normals.is_null() || out.is_null() {
            set_error("null argument");
            return IcrStatus::NullPointer;
        }
        if n == 0 {
            return fail(Error::EmptyCloud);
        }
        let p = std::slice::from_raw_parts(xyz, 3 * n);
        let q = std::slice::from_raw_parts(normals, 3 * n);
        if p.iter().chain(q).any(|v| !v.is_finite()) {
            set_error("non-finite coordinate");
            return IcrStatus::InvalidArgument;
        }
        let points = p.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let nrm = q.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        boxed_map(PointCloud::with_normals(points, nrm), out)
    })
}

/// Generates a built-in synthetic scene (an `IcrScene` value) with its
/// default dimensions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_map_make_scene(kind: u32, seed: u64, out: *mut *mut IcrMap) -> IcrStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null argument");
            return IcrStatus::NullPointer;
        }
        let kind = match kind {
            k if k == IcrScene::Corridor as u32 => SceneKind::Corridor,
            k if k == IcrScene::Room as u32 => SceneKind::Room,
            k if k == IcrScene::Intersection as u32 => SceneKind::Intersection,
            k => {
                set_error(format!("unknown scene {k}"));
                return IcrStatus::InvalidArgument;
            }
        };
        let mut params = SceneParams::default_for(kind);
        params.seed = seed;
        match make_scene(kind, &params) {
            Ok(cloud) => boxed_map(cloud, out),
            Err(e) => fail(e),
        }
    })
}

/// Number of points in the map; 0 for NULL.
///
/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icr_map_len(map: *const IcrMap) -> usize {
    map.as_ref().map_or(0, |m| m.cloud.len())
}

/// Releases a map. NULL is ignored.
///
/// # Safety
/// `map` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icr_map_free(map: *mut IcrMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// d = 0.30 m, sigma = 0.10 m, 30 sectors, 1000 scan points, 30 m range,
/// p_safe = 0.99, r_x = r_y = 0.20 m, top-k search, seed 0.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_certify_options_default(out: *mut IcrCertifyOptions) -> IcrStatus {
    guarded(|| {
        let Some(out) = out.as_mut() else {
            set_error("null argument");
            return IcrStatus::NullPointer;
        };
        let c = CertifyConfig::default();
        let mut radius = [0.0; 6];
        for (comp, r) in &c.spec.components {
            radius[comp.index()] = *r;
        }
        *out = IcrCertifyOptions {
            d: c.spec.d,
            sigma: c.scan.sigma,
            n_sectors: c.n_sectors as u32,
            scan_points: c.scan.n_points as u32,
            max_range: c.scan.max_range,
            p_safe: c.spec.p_safe,
            radius,
            mode: IcrSearchMode::Topk as u32,
            seed: c.scan.seed,
        };
        IcrStatus::Ok
    })
}

fn config_from(opts: &IcrCertifyOptions) -> Result<CertifyConfig, String> {
    let components = opts
        .radius
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .filter_map(|(j, r)| Component::from_index(j).map(|c| (c, *r)))
        .collect();
    let mode = match opts.mode {
        m if m == IcrSearchMode::Topk as u32 => SearchMode::TopK,
        m if m == IcrSearchMode::Exhaustive as u32 => SearchMode::Exhaustive,
        m if m == IcrSearchMode::Contiguous as u32 => SearchMode::Contiguous,
        m => return Err(format!("unknown search mode {m}")),
    };
    Ok(CertifyConfig {
        scan: ScanParams {
            max_range: opts.max_range,
            n_points: opts.scan_points as usize,
            sigma: opts.sigma,
            seed: opts.seed,
        },
        n_sectors: opts.n_sectors as usize,
        mode,
        spec: SafetySpec {
            components,
            p_safe: opts.p_safe,
            d: opts.d,
        },
    })
}

/// Certifies one pose given as (x, y, z, yaw, pitch, roll). `pose_id` seeds
/// the simulated scan together with `options->seed`, exactly as the CLI does.
/// Degenerate geometry is not an error: it returns `Ok` with `degenerate` set
/// and zero resilience.
///
/// # Safety
/// `map` must be a live handle, `pose` must point to 6 doubles, `pose_id` must
/// be a NUL-terminated string, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn icr_certify_pose(
    map: *const IcrMap,
    pose: *const f64,
    pose_id: *const c_char,
    options: *const IcrCertifyOptions,
    out: *mut IcrPoseResult,
) -> IcrStatus {
    guarded(|| {
        let (Some(map), Some(options), Some(out)) = (map.as_ref(), options.as_ref(), out.as_mut()) else {
            set_error("null argument");
            return IcrStatus::NullPointer;
        };
        if pose.is_null() || pose_id.is_null() {
            set_error("null argument");
            return IcrStatus::NullPointer;
        }
        let v = std::slice::from_raw_parts(pose, 6);
        if v.iter().any(|x| !x.is_finite()) {
            set_error("non-finite pose");
            return IcrStatus::InvalidArgument;
        }
        let Ok(id) = CStr::from_ptr(pose_id).to_str() else {
            set_error("pose id is not valid UTF-8");
            return IcrStatus::InvalidArgument;
        };
        let config = match config_from(options) {
            Ok(c) => c,
            Err(msg) => {
                set_error(msg);
                return IcrStatus::InvalidArgument;
            }
        };
        if let Err(e) = config.spec.validate() {
            return fail(e);
        }
        if config.n_sectors == 0 || !map.cloud.has_normals() {
            set_error("n_sectors must be >= 1 and the map must carry normals");
            return IcrStatus::InvalidArgument;
        }
        let tp = TrajectoryPose {
            id: id.to_string(),
            pose: Pose::from_xyz_ypr(v[0], v[1], v[2], v[3], v[4], v[5]),
        };
        let report = certify_pose(&map.cloud, &tp, &config);
        if let Some(e) = report.error {
            set_error(e);
            return IcrStatus::InvalidArgument;
        }
        *out = IcrPoseResult {
            resilience: report.resilience,
            breaking_k: report.breaking_k.map_or(-1, |k| k as i32),
            degenerate: report.degenerate,
            point_fraction: report.point_fraction,
            condition: report.condition.unwrap_or(f64::NAN),
        };
        IcrStatus::Ok
    })
}

/// Probability that |e| exceeds `r` when e ~ N(±mu, sigma²). NaN on invalid input.
#[no_mangle]
pub extern "C" fn icr_hazard_probability(mu: f64, sigma: f64, r: f64) -> f64 {
    if !(mu >= 0.0 && sigma >= 0.0 && r > 0.0) {
        return f64::NAN;
    }
    hazard_probability_raw(mu, sigma, r)
}
