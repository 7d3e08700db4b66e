//! The `fluororeg` command line: `synth`, `register`, `eval` and `gradcheck`.
//!
//! Settings come from an optional TOML run configuration; flags override the
//! file, which overrides built-in defaults. Angles are degrees in the file and
//! on the command line and become radians once, when the config is resolved.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 registration did not
//! converge, 4 gradient check failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Point2;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::evaluation::{pose_error, rmse_per_landmark, PoseErrorReport};
use crate::geometry::{
    detector_to_registration, voxel_to_world, CameraIntrinsics, LandmarkSet2D, LandmarkSet3D,
    Pose, Projector, VolumeFrame,
};
use crate::heatmap::{hard_argmax, soft_argmax, Heatmap, Temperature};
use crate::io;
use crate::registration::{
    estimate_pose, loss_gradient, reprojection_loss, Bounds, Method, OptimizerConfig,
    RegistrationProblem,
};
use crate::synthesis::{
    case_seed, case_to_heatmaps, generate_indexed_case, pelvis_fixture_centered, sample_pose,
    PoseRecord, SyntheticCase,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

/// Where pose rotations are centered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pivot {
    /// Center of the CT volume, `(0, vtd, 0)`.
    #[default]
    VolumeCenter,
    /// World origin, i.e. the X-ray source.
    Origin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 360.0,
            translation_mm: 500.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    /// Soft-argmax temperature.
    pub tau: f64,
    /// Gaussian fixture width (px).
    pub sigma: f64,
    /// Heatmap side length (px).
    pub net_size: usize,
    /// Detector side length the heatmaps are rescaled to (px).
    pub det_size: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            sigma: 2.0,
            net_size: 512,
            det_size: 768,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub rot_range_deg: f64,
    pub trans_range_mm: f64,
    /// Gaussian pixel noise added to observed landmarks.
    pub noise_sigma: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            rot_range_deg: 45.0,
            trans_range_mm: 50.0,
            noise_sigma: 0.0,
        }
    }
}

/// Everything a run depends on. Its hash is stamped on every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Landmark CSV in voxel coordinates; the bundled pelvis when absent.
    pub landmarks: Option<PathBuf>,
    pub pivot: Pivot,
    pub intrinsics: CameraIntrinsics,
    pub volume: VolumeFrame,
    pub sampling: SamplingConfig,
    pub optimizer: OptimizerConfig,
    pub bounds: BoundsConfig,
    pub heatmap: HeatmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            landmarks: None,
            pivot: Pivot::default(),
            intrinsics: CameraIntrinsics::default(),
            volume: VolumeFrame::default(),
            sampling: SamplingConfig::default(),
            optimizer: OptimizerConfig::paper(),
            bounds: BoundsConfig::default(),
            heatmap: HeatmapConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative landmark paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let Some(l) = &cfg.landmarks {
            if l.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.landmarks = Some(base.join(l));
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.volume.validate()?;
        self.ranges()?;
        self.optimizer.validate()?;
        self.bounds()?.validate()?;
        let s = &self.sampling;
        if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
            return Err(invalid(format!("noise_sigma must be >= 0, got {}", s.noise_sigma)));
        }
        let h = &self.heatmap;
        Temperature::new(h.tau)?;
        if !(h.sigma > 0.0 && h.sigma.is_finite()) {
            return Err(invalid(format!("heatmap sigma must be > 0, got {}", h.sigma)));
        }
        if h.net_size == 0 || h.det_size == 0 {
            return Err(invalid("heatmap net_size and det_size must be >= 1"));
        }
        if let Some(p) = &self.landmarks {
            if !p.is_file() {
                return Err(invalid(format!("landmark file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn ranges(&self) -> Result<crate::synthesis::SamplingRanges> {
        crate::synthesis::SamplingRanges::new(
            self.sampling.rot_range_deg,
            self.sampling.trans_range_mm,
        )
    }

    pub fn bounds(&self) -> Result<Bounds> {
        let b = Bounds {
            rotation: self.bounds.rotation_deg.to_radians(),
            translation: self.bounds.translation_mm,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn projector(&self) -> Projector {
        let proj = Projector::new(self.intrinsics);
        match self.pivot {
            Pivot::VolumeCenter => proj.with_pivot(self.volume.center_world()),
            Pivot::Origin => proj,
        }
    }

    /// World-frame landmarks: the configured file or the bundled pelvis,
    /// placed by the volume frame.
    pub fn world_landmarks(&self) -> Result<LandmarkSet3D> {
        let voxels = match &self.landmarks {
            Some(p) => io::read_landmarks_3d(p)?,
            None => pelvis_fixture_centered(),
        };
        voxel_to_world(voxels.points(), &self.volume)
    }

    /// Heatmap frame sizes, checked against a square detector of the same size.
    fn heatmap_frame(&self) -> Result<(f64, f64)> {
        let h = &self.heatmap;
        let [w, ht] = self.intrinsics.image_size;
        if w != ht || w as usize != h.det_size {
            return Err(invalid(format!(
                "heatmap det_size {} must match a square detector, got {w}x{ht}",
                h.det_size
            )));
        }
        Ok((h.net_size as f64, h.det_size as f64))
    }
}

#[derive(Parser, Debug)]
#[command(name = "fluororeg", version, about = "Landmark-based 2D/3D X-ray registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate seeded synthetic registration cases.
    Synth(SynthArgs),
    /// Estimate poses from case files or landmark files.
    Register(RegisterArgs),
    /// Compare predicted landmarks against ground truth.
    Eval(EvalArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Base seed; case i uses seed + i unless it must be resampled.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cases.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Gaussian pixel noise on the observed landmarks.
    #[arg(long)]
    noise: Option<f64>,
    /// Rotation sampling half-range (degrees).
    #[arg(long)]
    rot_range: Option<f64>,
    /// Translation sampling half-range (mm).
    #[arg(long)]
    trans_range: Option<f64>,
    /// Also write a Gaussian heatmap fixture `<case>.hmap` per case.
    #[arg(long)]
    heatmaps: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Adam, lr 1e-3, 100 iterations.
    Paper,
    /// Adam, lr 1e-2, 2000 iterations.
    Converge,
    /// L-BFGS with line search, 500 iterations.
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Lbfgs,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Case file, or a directory of case files.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["landmarks3d", "landmarks2d"])]
    case: Option<PathBuf>,
    /// World-frame 3D landmark CSV (mm).
    #[arg(long, value_name = "FILE", requires = "landmarks2d")]
    landmarks3d: Option<PathBuf>,
    /// Observed landmarks: registration-frame CSV or `.hmap` heatmaps.
    #[arg(long, value_name = "FILE", requires = "landmarks3d")]
    landmarks2d: Option<PathBuf>,
    /// Heatmaps to decode instead of the case's landmarks: a `.hmap` file,
    /// or a directory holding `<case>.hmap` per case.
    #[arg(long, value_name = "PATH", requires = "case")]
    heatmaps: Option<PathBuf>,
    /// Optimizer preset; the config's optimizer section applies otherwise.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Loss-change stopping tolerance (px^2).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Soft-argmax temperature for heatmap decoding.
    #[arg(long)]
    tau: Option<f64>,
    /// Output directory for `<case>.run.json` and `<case>.csv`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Predictions: `<stem>.csv` landmark files or `<stem>.hmap` heatmaps.
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Ground truth: `<stem>.json` case files or `<stem>.csv` landmark files.
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Report file [default: <pred>/report.json].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Test hook: perturb the analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Register(a) => cmd_register(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start {jobs} worker threads: {e}")))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !dir.is_dir() {
        return Err(invalid(format!("{} is not a directory", dir.display())));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.sampling.noise_sigma = n;
    }
    if let Some(r) = a.rot_range {
        cfg.sampling.rot_range_deg = r;
    }
    if let Some(t) = a.trans_range {
        cfg.sampling.trans_range_mm = t;
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let landmarks = cfg.world_landmarks()?;
    let projector = cfg.projector();
    let ranges = cfg.ranges()?;
    ensure_dir(&a.out)?;

    let pool = thread_pool(a.jobs)?;
    let written: Result<Vec<()>> = pool.install(|| {
        (0..a.count)
            .into_par_iter()
            .map(|i| {
                let case = generate_indexed_case(
                    cfg.seed,
                    i,
                    &landmarks,
                    &projector,
                    &ranges,
                    cfg.sampling.noise_sigma,
                )?;
                let stem = a.out.join(&case.case_id);
                io::write_atomic(&stem.with_extension("json"), case.to_json(&hash).as_bytes())?;
                if a.heatmaps {
                    let maps = case_to_heatmaps(&case, cfg.heatmap.sigma, cfg.heatmap.net_size)?;
                    io::write_heatmap_file(&stem.with_extension("hmap"), &maps)?;
                }
                Ok(())
            })
            .collect()
    });
    written?;
    println!(
        "wrote {} case(s) to {} (seed {}, config {hash})",
        a.count,
        a.out.display(),
        cfg.seed
    );
    Ok(EXIT_OK)
}

/// Output of one `register` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub case_id: String,
    pub config_hash: String,
    pub optimizer: OptimizerConfig,
    pub initial_pose: PoseRecord,
    pub pose: PoseRecord,
    /// Sum of squared residuals (px^2).
    pub final_loss: f64,
    /// Per-landmark RMS residual (px).
    pub rmse_px: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    /// Error against the case's true pose, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_error: Option<PoseErrorReport>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run record serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

struct Job {
    stem: String,
    landmarks: LandmarkSet3D,
    observations: LandmarkSet2D,
    projector: Projector,
    truth: Option<Pose>,
}

/// Soft-argmax of every heatmap, mapped into the registration frame.
pub fn decode_soft(maps: &[Heatmap], tau: Temperature, net: f64, det: f64) -> Result<LandmarkSet2D> {
    let net_pts = LandmarkSet2D::new(maps.iter().map(|h| soft_argmax(h, tau)).collect())?;
    detector_to_registration(&net_pts, net, det)
}

/// Hard argmax of every heatmap, mapped into the registration frame.
pub fn decode_hard(maps: &[Heatmap], net: f64, det: f64) -> Result<LandmarkSet2D> {
    let net_pts = LandmarkSet2D::new(
        maps.iter()
            .map(|h| {
                let (x, y) = hard_argmax(h);
                Point2::new(x as f64, y as f64)
            })
            .collect(),
    )?;
    detector_to_registration(&net_pts, net, det)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e == ext)
}

/// Case files in `dir`, sorted by name, skipping run records.
fn case_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| has_ext(p, "json") && !file_stem(p).ends_with(".run") && p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn read_observations(path: &Path, cfg: &RunConfig) -> Result<LandmarkSet2D> {
    if has_ext(path, "hmap") {
        let (net, det) = cfg.heatmap_frame()?;
        decode_soft(&io::read_heatmap_file(path)?, Temperature::new(cfg.heatmap.tau)?, net, det)
    } else {
        io::read_landmarks_2d(path)
    }
}

fn register_jobs(a: &RegisterArgs, cfg: &RunConfig) -> Result<Vec<Job>> {
    if let Some(case) = &a.case {
        let files = if case.is_dir() {
            case_files(case)?
        } else {
            vec![case.clone()]
        };
        if files.is_empty() {
            return Err(invalid(format!("no case files in {}", case.display())));
        }
        return files
            .iter()
            .map(|f| {
                let c = SyntheticCase::read(f)?;
                let stem = file_stem(f);
                let observations = match &a.heatmaps {
                    Some(h) if h.is_dir() => read_observations(&h.join(format!("{stem}.hmap")), cfg)?,
                    Some(h) => read_observations(h, cfg)?,
                    None => c.landmarks_2d_noisy.clone(),
                };
                Ok(Job {
                    stem,
                    projector: c.projector(),
                    landmarks: c.landmarks_3d,
                    observations,
                    truth: Some(c.true_pose),
                })
            })
            .collect();
    }
    match (&a.landmarks3d, &a.landmarks2d) {
        (Some(l3), Some(l2)) => Ok(vec![Job {
            stem: file_stem(l2),
            landmarks: io::read_landmarks_3d(l3)?,
            observations: read_observations(l2, cfg)?,
            projector: cfg.projector(),
            truth: None,
        }]),
        _ => Err(invalid("register needs --case or both --landmarks3d and --landmarks2d")),
    }
}

fn register_one(job: &Job, cfg: &RunConfig, hash: &str, out: &Path) -> Result<RunRecord> {
    let prob = RegistrationProblem::new(
        job.landmarks.clone(),
        job.observations.clone(),
        job.projector.intrinsics,
        cfg.bounds()?,
    )
    .map_err(|e| invalid(format!("{}: {e}", job.stem)))?
    .with_projector(job.projector)?;
    let initial = Pose::identity();
    let fit = estimate_pose(&prob, &cfg.optimizer, &initial)?;
    let pose_error = job.truth.as_ref().map(|t| pose_error(&fit.pose, t)).transpose()?;
    let record = RunRecord {
        case_id: job.stem.clone(),
        config_hash: hash.to_string(),
        optimizer: cfg.optimizer,
        initial_pose: PoseRecord::from(&initial),
        pose: PoseRecord::from(&fit.pose),
        final_loss: fit.final_loss,
        rmse_px: (fit.final_loss / prob.len() as f64).sqrt(),
        iterations_run: fit.iterations_run,
        converged: fit.converged,
        trace: fit.trace,
        pose_error,
    };
    let predicted = LandmarkSet2D::new(prob.project(&fit.pose)?)?;
    io::write_atomic(
        &out.join(format!("{}.run.json", job.stem)),
        record.to_json().as_bytes(),
    )?;
    io::write_atomic(
        &out.join(format!("{}.csv", job.stem)),
        io::format_landmarks_2d(&predicted).as_bytes(),
    )?;
    Ok(record)
}

fn cmd_register(a: RegisterArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    match a.preset {
        Some(Preset::Paper) => cfg.optimizer = OptimizerConfig::paper(),
        Some(Preset::Converge) => cfg.optimizer = OptimizerConfig::converge(),
        Some(Preset::Lbfgs) => cfg.optimizer = OptimizerConfig::lbfgs(),
        None => {}
    }
    let o = &mut cfg.optimizer;
    if let Some(m) = a.optimizer {
        o.method = match m {
            OptimizerArg::Adam => Method::Adam,
            OptimizerArg::Lbfgs => Method::Lbfgs,
        };
    }
    if let Some(lr) = a.lr {
        o.learning_rate = lr;
    }
    if let Some(n) = a.iters {
        o.max_iters = n;
    }
    if let Some(t) = a.tolerance {
        o.tolerance = t;
    }
    if let Some(t) = a.tau {
        cfg.heatmap.tau = t;
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let jobs = register_jobs(&a, &cfg)?;
    ensure_dir(&a.out)?;

    let pool = thread_pool(a.jobs)?;
    let results: Vec<Result<RunRecord>> =
        pool.install(|| jobs.par_iter().map(|j| register_one(j, &cfg, &hash, &a.out)).collect());

    let mut code = EXIT_OK;
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(r) => {
                println!(
                    "{}: rmse {:.4} px, loss {:.6e}, {} iterations, {}",
                    r.case_id,
                    r.rmse_px,
                    r.final_loss,
                    r.iterations_run,
                    if r.converged { "converged" } else { "not converged" }
                );
                if !r.converged {
                    code = code.max(EXIT_NOT_CONVERGED);
                }
            }
            Err(e @ Error::Diverged { .. }) => {
                eprintln!("{}: {e}", job.stem);
                code = code.max(EXIT_NOT_CONVERGED);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(code)
}

fn stems_with(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if !p.is_file() {
            continue;
        }
        let stem = file_stem(&p);
        if stem.ends_with(".run") || stem == "report" {
            continue;
        }
        // earlier extensions win when a stem has several files
        if let Some(rank) = exts.iter().position(|e| has_ext(&p, e)) {
            let keep = match map.get(&stem) {
                Some((r, _)) => rank < *r,
                None => true,
            };
            if keep {
                map.insert(stem, (rank, p));
            }
        }
    }
    Ok(map.into_iter().map(|(k, (_, p))| (k, p)).collect())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    cfg.validate()?;
    let gt_files = stems_with(&a.gt, &["json", "csv"])?;
    let pred_files = stems_with(&a.pred, &["csv", "hmap"])?;
    if gt_files.is_empty() {
        return Err(invalid(format!("no ground-truth files in {}", a.gt.display())).into());
    }
    let mut pred = Vec::with_capacity(gt_files.len());
    let mut gt = Vec::with_capacity(gt_files.len());
    for (stem, gpath) in &gt_files {
        let ppath = pred_files.get(stem).ok_or_else(|| {
            invalid(format!(
                "no prediction for {} (expected {stem}.csv or {stem}.hmap in {})",
                gpath.display(),
                a.pred.display()
            ))
        })?;
        gt.push(if has_ext(gpath, "json") {
            SyntheticCase::read(gpath)?.landmarks_2d_gt
        } else {
            io::read_landmarks_2d(gpath)?
        });
        pred.push(if has_ext(ppath, "hmap") {
            let (net, det) = cfg.heatmap_frame()?;
            decode_hard(&io::read_heatmap_file(ppath)?, net, det)?
        } else {
            io::read_landmarks_2d(ppath)?
        });
    }
    let mut report = rmse_per_landmark(&pred, &gt)?;
    report.config_hash = cfg.hash();
    let out = a.out.unwrap_or_else(|| a.pred.join("report.json"));
    report.write(&out)?;
    print!("{}", report.table());
    Ok(EXIT_OK)
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOutcome {
    pub trials: u64,
    pub worst_trial: u64,
    pub worst_component: usize,
    pub worst_relative_error: f64,
}

pub const PARAM_NAMES: [&str; 6] = ["r_x", "r_y", "r_z", "t_x", "t_y", "t_z"];

/// `|a - n| / max(|a|, |n|, 1)` per component.
pub fn gradient_relative_errors(
    prob: &RegistrationProblem,
    pose: &Pose,
    step: f64,
    analytic: &[f64; 6],
) -> Result<[f64; 6]> {
    let base = pose.to_array();
    let mut out = [0.0; 6];
    for (i, slot) in out.iter_mut().enumerate() {
        let (mut hi, mut lo) = (base, base);
        hi[i] += step;
        lo[i] -= step;
        let fd = (reprojection_loss(&Pose::from_array(hi), prob)?
            - reprojection_loss(&Pose::from_array(lo), prob)?)
            / (2.0 * step);
        *slot = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
    }
    Ok(out)
}

/// Compares gradients on `trials` random problems built from `cfg`: the
/// evaluation pose and the pose generating the observations are drawn
/// independently from the sampling ranges.
pub fn gradcheck(cfg: &RunConfig, seed: u64, trials: u64, step: f64, corrupt: bool) -> Result<GradcheckOutcome> {
    if trials < 1 {
        return Err(invalid("trials must be >= 1"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be > 0, got {step}")));
    }
    let landmarks = cfg.world_landmarks()?;
    let projector = cfg.projector();
    let ranges = cfg.ranges()?;
    let mut worst = GradcheckOutcome {
        trials,
        worst_trial: 0,
        worst_component: 0,
        worst_relative_error: 0.0,
    };
    for trial in 0..trials {
        let s = case_seed(seed, trial, 0);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(s);
        let truth = sample_pose(rand::Rng::random(&mut rng), &ranges)?;
        let at = sample_pose(rand::Rng::random(&mut rng), &ranges)?;
        let obs = projector.project(&truth, &landmarks)?;
        let prob = RegistrationProblem::new(landmarks.clone(), obs, projector.intrinsics, cfg.bounds()?)?
            .with_projector(projector)?;
        let mut g = loss_gradient(&at, &prob)?;
        if corrupt {
            g[0] = g[0] * 1.01 + 1.0;
        }
        let errs = gradient_relative_errors(&prob, &at, step, &g)?;
        for (i, e) in errs.iter().enumerate() {
            if *e > worst.worst_relative_error || e.is_nan() {
                worst.worst_relative_error = *e;
                worst.worst_trial = trial;
                worst.worst_component = i;
            }
        }
    }
    Ok(worst)
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    cfg.validate()?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let out = gradcheck(&cfg, seed, a.trials, a.step, a.corrupt_gradient)?;
    const LIMIT: f64 = 1e-4;
    let pass = out.worst_relative_error < LIMIT;
    println!(
        "gradcheck: {} trial(s), seed {seed}, worst relative error {:.3e} (trial {}, {}): {}",
        out.trials,
        out.worst_relative_error,
        out.worst_trial,
        PARAM_NAMES[out.worst_component],
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(EXIT_OK)
    } else {
        Err(Failure {
            code: EXIT_VERIFY_FAILED,
            message: format!(
                "gradient mismatch: relative error {:.3e} in {} exceeds {LIMIT:e}",
                out.worst_relative_error, PARAM_NAMES[out.worst_component]
            ),
        })
    }
}
