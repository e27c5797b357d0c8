//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (degenerate poses only produce warnings) |
//! | 2 | invalid configuration or arguments |
//! | 3 | unreadable or malformed input, or unwritable output |
//! | 4 | no pose could be analysed at all |
//!
//! Inputs are loaded and validated before anything is written, so codes 2
//! and 3 never leave partial outputs behind.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cloud::{
    estimate_normals, load_cloud, make_scene, save_cloud, save_cloud_with_comments, CloudFormat, PointCloud,
    ScanParams, SceneKind, SceneParams,
};
use crate::error::{Error, Result};
use crate::fault::{synthesize_attack, Component, FaultMask};
use crate::geometry::Pose;
use crate::report::{self, Provenance};
use crate::resilience::{
    certify_trajectory, partition, pose_seed, pose_system, worst_sector_set, CertifyConfig, HazardObjective,
    SafetySpec, SearchMode, SectorStats, TrajectoryPose,
};
use crate::validate::{validate_bound, Association, ValidationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "icp-resilience",
    version,
    about = "Certify point-to-plane ICP against worst-case sector corruption"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the degree of resilience R for every pose of a trajectory.
    Certify(CertifyArgs),
    /// Synthesize the worst-case corrupted scan for one pose.
    Attack(AttackArgs),
    /// Compare the closed-form worst error with an iterative ICP run.
    Validate(ValidateArgs),
    /// Write one of the built-in synthetic scenes.
    MakeScene(MakeSceneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// r_x = r_y = 0.20 m
    Xy,
    /// r_x = 0.50 m, r_y = 0.20 m
    X50,
    /// r_x = r_y = 0.20 m, r_yaw = 0.05 rad
    XyYaw,
}

impl Preset {
    pub fn radii(self) -> Vec<(Component, f64)> {
        match self {
            Preset::Xy => vec![(Component::X, 0.20), (Component::Y, 0.20)],
            Preset::X50 => vec![(Component::X, 0.50), (Component::Y, 0.20)],
            Preset::XyYaw => vec![(Component::X, 0.20), (Component::Y, 0.20), (Component::Yaw, 0.05)],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Preset::Xy => "xy",
            Preset::X50 => "x50",
            Preset::XyYaw => "xy-yaw",
        }
    }
}

/// Options shared by every analysis subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Map pointcloud (.csv or .ply). Normals are estimated when absent.
    #[arg(long)]
    pub map: PathBuf,
    /// Map format; inferred from the extension by default.
    #[arg(long, value_parser = parse_format)]
    pub map_format: Option<CloudFormat>,
    /// Neighbours used when the map has no normals.
    #[arg(long, default_value_t = 10)]
    pub normals_k: usize,
    /// Trim distance in meters.
    #[arg(long, default_value_t = 0.30)]
    pub d: f64,
    /// Lidar noise standard deviation in meters.
    #[arg(long, default_value_t = 0.10)]
    pub sigma: f64,
    #[arg(long, default_value_t = 30)]
    pub sectors: usize,
    #[arg(long, default_value_t = 1000)]
    pub scan_points: usize,
    #[arg(long, default_value_t = 30.0)]
    pub max_range: f64,
    /// Required probability of a safe estimate; the hazard threshold is 1 - p_safe.
    #[arg(long, default_value_t = 0.99)]
    pub p_safe: f64,
    /// Safety radius as component=value. Repeatable; replaces the preset.
    #[arg(long, value_parser = parse_radius)]
    pub radius: Vec<(Component, f64)>,
    #[arg(long, value_enum, default_value_t = Preset::Xy)]
    pub preset: Preset,
    #[arg(long, value_parser = parse_mode, default_value = "topk")]
    pub mode: SearchMode,
    #[arg(long, env = "ICP_RESILIENCE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trajectory CSV: pose_id,x,y,z,yaw,pitch,roll.
    #[arg(long)]
    pub trajectory: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub pose_id: String,
    #[arg(long, value_parser = parse_component, default_value = "x")]
    pub component: Component,
    /// Number of sectors to corrupt.
    #[arg(long)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssociationArg {
    /// Nearest neighbour, recomputed each iteration.
    Nn,
    /// Simulator ground truth.
    Gt,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Poses the trials cycle through.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Share of sectors corrupted, in [0, 1).
    #[arg(long, default_value_t = 0.25)]
    pub fraction: f64,
    #[arg(long, default_value_t = 250)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
    pub d_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_component, default_value = "x,y")]
    pub components: Vec<Component>,
    /// Noise added to the simulated scans. Scans are plain map subsamples by default.
    #[arg(long, default_value_t = 0.0)]
    pub scan_noise: f64,
    #[arg(long, value_enum, default_value_t = AssociationArg::Nn)]
    pub association: AssociationArg,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MakeSceneArgs {
    #[arg(long, value_parser = parse_scene)]
    pub kind: SceneKind,
    /// Output file; format from the extension unless --format is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<CloudFormat>,
    #[arg(long, env = "ICP_RESILIENCE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Points per square meter; the scene default when omitted.
    #[arg(long)]
    pub density: Option<f64>,
}

fn parse_format(s: &str) -> std::result::Result<CloudFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<SearchMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_component(s: &str) -> std::result::Result<Component, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scene(s: &str) -> std::result::Result<SceneKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_radius(s: &str) -> std::result::Result<(Component, f64), String> {
    let (c, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected component=value, got '{s}'"))?;
    let component = parse_component(c.trim())?;
    let value: f64 = v.trim().parse().map_err(|_| format!("invalid radius value '{v}'"))?;
    Ok((component, value))
}

/// Parses `pose_id,x,y,z,yaw,pitch,roll` lines. A header line starting with
/// `pose_id`, blank lines and `#` comments are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryPose>> {
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (poses.is_empty() && line.starts_with("pose_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("invalid number '{f}'"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("non-finite value '{f}'"),
                });
            }
        }
        let id = fields[0].to_string();
        if poses.iter().any(|p: &TrajectoryPose| p.id == id) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate pose id '{id}'"),
            });
        }
        poses.push(TrajectoryPose {
            id,
            pose: Pose::from_xyz_ypr(v[0], v[1], v[2], v[3], v[4], v[5]),
        });
    }
    Ok(poses)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let poses = parse_trajectory(&text)?;
    if poses.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{}: trajectory has no poses",
            path.display()
        )));
    }
    Ok(poses)
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotFound { .. } | Error::Io { .. } | Error::Parse { .. } | Error::EmptyCloud => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

impl RunArgs {
    fn check(&self) -> std::result::Result<(), Failure> {
        let positive = [("d", self.d), ("max-range", self.max_range)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("--{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_error(format!(
                "--sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.sectors == 0 || self.scan_points == 0 {
            return Err(config_error("--sectors and --scan-points must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(config_error("--jobs must be at least 1"));
        }
        self.safety_spec().validate()?;
        Ok(())
    }

    fn radii(&self) -> Vec<(Component, f64)> {
        if self.radius.is_empty() {
            return self.preset.radii();
        }
        // Later flags override earlier ones for the same component.
        let mut out: Vec<(Component, f64)> = Vec::new();
        for &(c, r) in &self.radius {
            match out.iter_mut().find(|(oc, _)| *oc == c) {
                Some(slot) => slot.1 = r,
                None => out.push((c, r)),
            }
        }
        out
    }

    fn safety_spec(&self) -> SafetySpec {
        SafetySpec {
            components: self.radii(),
            p_safe: self.p_safe,
            d: self.d,
        }
    }

    fn scan_params(&self) -> ScanParams {
        ScanParams {
            max_range: self.max_range,
            n_points: self.scan_points,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            scan: self.scan_params(),
            n_sectors: self.sectors,
            mode: self.mode,
            spec: self.safety_spec(),
        }
    }

    /// Everything that influences results; `--out` and `--jobs` are left out
    /// so the same run into another directory or pool size is byte-identical.
    fn provenance(&self, command: &str) -> Provenance {
        let radii: Vec<String> = self.radii().iter().map(|(c, r)| format!("{c}={r}")).collect();
        let preset = if self.radius.is_empty() {
            self.preset.name()
        } else {
            "custom"
        };
        Provenance::new(command, self.seed)
            .with("map", self.map.display())
            .with("d", self.d)
            .with("sigma", self.sigma)
            .with("sectors", self.sectors)
            .with("scan_points", self.scan_points)
            .with("max_range", self.max_range)
            .with("p_safe", self.p_safe)
            .with("preset", preset)
            .with("radius", radii.join(" "))
            .with("mode", self.mode.name())
    }

    fn load_map(&self) -> Result<PointCloud> {
        let format = match self.map_format {
            Some(f) => f,
            None => CloudFormat::from_path(&self.map).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "cannot infer format of {}; pass --map-format",
                    self.map.display()
                ))
            })?,
        };
        let map = load_cloud(&self.map, format)?;
        if map.has_normals() {
            Ok(map)
        } else {
            log::info!("map has no normals; estimating with k = {}", self.normals_k);
            estimate_normals(&map, self.normals_k, None)
        }
    }

    fn configure_pool(&self) {
        if let Some(jobs) = self.jobs {
            // Fails only if a pool was already installed, e.g. by a previous
            // in-process run; the existing pool is then reused.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_certify(args: &CertifyArgs) -> std::result::Result<i32, Failure> {
    let run = &args.run;
    run.check()?;
    let map = run.load_map()?;
    let poses = load_trajectory(&args.trajectory)?;
    run.configure_pool();
    let config = run.certify_config();
    let reports = certify_trajectory(&map, &poses, &config)?;

    let provenance = run.provenance("certify").with("trajectory", args.trajectory.display());
    prepare_out(&run.out)?;
    write_file(
        &run.out.join("certify.json"),
        &report::certify_json(&reports, &provenance),
    )?;
    write_file(
        &run.out.join("certify.csv"),
        &report::certify_csv(&reports, &provenance),
    )?;
    write_file(
        &run.out.join("resilience.svg"),
        &report::resilience_strip_svg(&reports, config.spec.hazard_threshold(), &provenance),
    )?;

    let mut unusable = 0;
    for r in &reports {
        if r.degenerate {
            log::warn!("pose {}: degenerate geometry, R = 0", r.pose_id);
        }
        if let Some(e) = &r.error {
            log::warn!("pose {}: {e}", r.pose_id);
            unusable += 1;
        }
        if r.monotonicity_violation {
            log::debug!("pose {}: top-k hazard was not monotone in k", r.pose_id);
        }
        println!(
            "{} R={} breaking_k={} degenerate={}",
            r.pose_id,
            r.resilience,
            r.breaking_k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
            r.degenerate
        );
    }
    if unusable == reports.len() {
        log::error!("no pose could be analysed");
        return Ok(EXIT_DEGENERATE);
    }
    Ok(EXIT_OK)
}

fn cmd_attack(args: &AttackArgs) -> std::result::Result<i32, Failure> {
    let run = &args.run;
    run.check()?;
    if args.k > run.sectors {
        return Err(config_error(format!(
            "--k {} exceeds --sectors {}",
            args.k, run.sectors
        )));
    }
    let map = run.load_map()?;
    let poses = load_trajectory(&args.trajectory)?;
    let pose = poses
        .iter()
        .find(|p| p.id == args.pose_id)
        .ok_or_else(|| config_error(format!("pose '{}' not in trajectory", args.pose_id)))?;

    let scan_params = ScanParams {
        seed: pose_seed(run.seed, &pose.id),
        ..run.scan_params()
    };
    let ps = match pose_system(&map, &pose.pose, &scan_params, run.d) {
        Ok(ps) => ps,
        Err(e) if e.is_io() => return Err(e.into()),
        Err(e) => {
            log::error!("pose {}: {e}", pose.id);
            return Ok(EXIT_DEGENERATE);
        }
    };
    let est = match ps.estimator {
        Ok(est) => est,
        Err(e) => {
            log::error!("pose {}: {e}", pose.id);
            return Ok(EXIT_DEGENERATE);
        }
    };
    let mask = if args.k == 0 {
        FaultMask::empty()
    } else {
        let part = partition(&ps.system, &ps.scan, run.sectors)?;
        let stats = SectorStats::new(&est, args.component, &part);
        let radius = run
            .radii()
            .iter()
            .find(|(c, _)| *c == args.component)
            .map_or(0.20, |(_, r)| *r);
        let objective = HazardObjective {
            d: run.d,
            noise_sigma: ps.system.sigma,
            radius,
        };
        let sectors = worst_sector_set(&stats, args.k, run.mode, &objective)?;
        log::info!("corrupting sectors {sectors:?}");
        part.mask(&sectors, &est)?
    };
    let attack = synthesize_attack(&ps.scan, &map, &ps.system, &est, args.component, &mask, run.d)?;

    let provenance = run
        .provenance("attack")
        .with("trajectory", args.trajectory.display())
        .with("pose_id", &pose.id)
        .with("component", args.component)
        .with("k", args.k);
    let comments = provenance.lines();
    prepare_out(&run.out)?;
    save_cloud_with_comments(
        &ps.scan.cloud,
        run.out.join("original.ply"),
        CloudFormat::PlyAscii,
        &comments,
    )?;
    save_cloud_with_comments(
        &attack.cloud,
        run.out.join("corrupted.ply"),
        CloudFormat::PlyAscii,
        &comments,
    )?;
    let f_vec: Vec<f64> = attack.f.iter().copied().collect();
    write_file(
        &run.out.join("faults.csv"),
        &report::fault_csv(&ps.system, &mask, &f_vec, &provenance),
    )?;
    println!(
        "pose {} component {} k={} faulted_rows={} worst_error={}",
        pose.id,
        args.component,
        args.k,
        mask.len(),
        attack.error
    );
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs) -> std::result::Result<i32, Failure> {
    let run = &args.run;
    run.check()?;
    if !(0.0..1.0).contains(&args.fraction) {
        return Err(config_error(format!(
            "--fraction must be in [0, 1), got {}",
            args.fraction
        )));
    }
    if args.trials == 0 || args.max_iters == 0 || !(args.tol > 0.0) {
        return Err(config_error("--trials and --max-iters must be >= 1 and --tol > 0"));
    }
    if args.d_values.is_empty() || args.d_values.iter().any(|d| !(*d > 0.0)) {
        return Err(config_error("--d-values must be positive"));
    }
    if !(args.scan_noise >= 0.0 && args.scan_noise.is_finite()) {
        return Err(config_error("--scan-noise must be non-negative"));
    }
    let map = run.load_map()?;
    let poses = load_trajectory(&args.trajectory)?;
    run.configure_pool();
    let config = ValidationConfig {
        poses,
        d_values: args.d_values.clone(),
        corrupted_fraction: args.fraction,
        n_trials: args.trials,
        seed: run.seed,
        scan: ScanParams {
            sigma: args.scan_noise,
            ..run.scan_params()
        },
        n_sectors: run.sectors,
        components: args.components.clone(),
        max_iters: args.max_iters,
        tol: args.tol,
        association: match args.association {
            AssociationArg::Nn => Association::NearestNeighbor,
            AssociationArg::Gt => Association::GroundTruth,
        },
    };
    let table = validate_bound(&map, &config)?;

    let d_list: Vec<String> = args.d_values.iter().map(f64::to_string).collect();
    let comp_list: Vec<&str> = args.components.iter().map(|c| c.name()).collect();
    let provenance = run
        .provenance("validate")
        .with("trajectory", args.trajectory.display())
        .with("fraction", args.fraction)
        .with("trials", args.trials)
        .with("d_values", d_list.join(","))
        .with("components", comp_list.join(","))
        .with("scan_noise", args.scan_noise)
        .with("association", format!("{:?}", args.association).to_lowercase())
        .with("max_iters", args.max_iters)
        .with("tol", args.tol);
    prepare_out(&run.out)?;
    write_file(
        &run.out.join("validation.csv"),
        &report::validation_csv(&table, &provenance),
    )?;
    write_file(
        &run.out.join("validation.svg"),
        &report::validation_svg(&table, &provenance),
    )?;

    for (trial, d, reason) in &table.skipped {
        log::warn!("trial {trial} at d = {d} skipped: {reason}");
    }
    for s in table.summaries() {
        println!(
            "{} d={} n={} icp_failures={} median={:.6} q25={:.6} q75={:.6} false_negative_ratio={:.3}",
            s.component, s.d, s.count, s.icp_failures, s.median, s.q25, s.q75, s.false_negative_ratio
        );
    }
    if table.rows.is_empty() {
        log::error!("every trial was skipped");
        return Ok(EXIT_DEGENERATE);
    }
    Ok(EXIT_OK)
}

fn cmd_make_scene(args: &MakeSceneArgs) -> std::result::Result<i32, Failure> {
    let format = match args.format {
        Some(f) => f,
        None => CloudFormat::from_path(&args.out)
            .ok_or_else(|| config_error(format!("cannot infer format of {}; pass --format", args.out.display())))?,
    };
    let mut params = SceneParams::default_for(args.kind);
    params.seed = args.seed;
    if let Some(density) = args.density {
        params.density = density;
    }
    let cloud = make_scene(args.kind, &params)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out(parent)?;
    }
    save_cloud(&cloud, &args.out, format)?;
    println!("{} points written to {}", cloud.len(), args.out.display());
    Ok(EXIT_OK)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Validate(a) => cmd_validate(a),
        Command::MakeScene(a) => cmd_make_scene(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
