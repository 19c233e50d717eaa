//! Command-line front end. Every failure prints `{"error": {...}}` on stderr
//! and exits with 2 (bad arguments or inputs) or 3 (solver failure).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tfopt::compare::{image_metrics_with, residual_field, MetricMode};
use tfopt::diffdvr::LossKind;
use tfopt::fieldgen::{self, EnsembleStack, SyntheticKind, SyntheticSpec};
use tfopt::renderer::{render, render_residual, CameraSpec, ImageRGBA, RenderConfig};
use tfopt::solvers::Norm;
use tfopt::volcore::io::{read_tf, read_volume, write_tf, write_volume};
use tfopt::volcore::{ScalarVolume, TransferFunction, DEFAULT_TF_SIZE};

use crate::error::{AppError, AppResult};
use crate::pipeline::{self, OptimizeInputs, OptimizeParams, SolverChoice};

pub const DATA_DIR_ENV: &str = "TFOPT_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "tfopt", version, about = "Transfer function optimization for comparative volume rendering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic volume, ensemble, correlation field or transfer function.
    Gen(GenArgs),
    /// Optimize a transfer function for one volume against a reference rendering.
    Optimize(OptimizeArgs),
    /// Render a volume to PNG (or PPM by extension).
    Render(RenderArgs),
    /// Compute the residual field between two classified volumes.
    Residual(ResidualArgs),
    /// Compare two PNG images.
    Metrics(MetricsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GenKind {
    RampX,
    RampXInverted,
    Halves,
    NestedCube,
    Ensemble,
    Pearson,
    Kendall,
    TfRamp,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.trim().parse::<T>().map_err(|_| format!("bad value {p:?}"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_background(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad value {p:?}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected r,g,b,a, got {s:?}"))
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    /// Output header (volume, correlation field), manifest (ensemble) or table.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_dims, default_value = "32,32,32")]
    pub dims: [usize; 3],
    #[arg(long, default_value_t = 0.5)]
    pub inner_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub members: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Existing ensemble manifest for correlation fields; a demo ensemble otherwise.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Reference voxel for correlation fields; the center by default.
    #[arg(long, value_parser = parse_dims)]
    pub ref_point: Option<[usize; 3]>,
    #[arg(long, default_value_t = DEFAULT_TF_SIZE)]
    pub n_t: usize,
    #[arg(long, default_value_t = 1.0)]
    pub max_alpha: f64,
}

#[derive(Args, Debug, Clone)]
pub struct CameraArgs {
    #[arg(long, default_value_t = 0.6)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 0.4)]
    pub elevation: f64,
    /// Distance from the volume center; framed to the volume by default.
    #[arg(long)]
    pub distance: Option<f64>,
    /// Vertical field of view in radians.
    #[arg(long)]
    pub fov: Option<f64>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// World-space sampling step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Premultiplied background as r,g,b,a.
    #[arg(long, value_parser = parse_background)]
    pub background: Option<[f64; 4]>,
}

impl CameraArgs {
    pub fn spec(&self) -> CameraSpec {
        CameraSpec::Orbit {
            azimuth: self.azimuth,
            elevation: self.elevation,
            distance: self.distance,
            fov_y: self.fov,
            width: self.width,
            height: self.height,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        let mut rc = RenderConfig { step_size: self.step, ..RenderConfig::default() };
        if let Some(bg) = self.background {
            rc.background = bg;
        }
        rc
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormArg {
    L2,
    L1,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Reference volume header.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Reference transfer function
    #[arg(long)]
    pub ref_tf: PathBuf,
    /// Volume whose transfer function is optimized.
    #[arg(long)]
    pub opt: PathBuf,
    /// normal, cgls, gd, admm or diffdvr.
    #[arg(long, default_value = "normal")]
    pub solver: String,
    /// Starting table; the reference table by default.
    #[arg(long)]
    pub tf_init: Option<PathBuf>,
    /// Entries in the optimized table
    #[arg(long, default_value_t = DEFAULT_TF_SIZE)]
    pub n_t: usize,
    /// Convergence tolerance for the iterative solvers
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap for the iterative solvers
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: NormArg,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Constant gradient step instead of Adam.
    #[arg(long)]
    pub gd_step: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tikhonov: f64,
    /// Fail instead of switching to CGLS on an ill-conditioned direct solve.
    #[arg(long)]
    pub no_fallback: bool,
    #[arg(long, default_value_t = 400)]
    pub iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub cameras: usize,
    #[arg(long, default_value_t = 512)]
    pub train_width: usize,
    #[arg(long, default_value_t = 512)]
    pub train_height: usize,
    #[arg(long, value_enum, default_value = "l2")]
    pub loss: NormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write reference, optimized and residual renders plus metrics.
    #[arg(long)]
    pub render: bool,
    #[command(flatten)]
    pub camera: CameraArgs,
}

impl OptimizeArgs {
    pub fn params(&self) -> OptimizeParams {
        OptimizeParams {
            n_t: self.n_t,
            tol: self.tol,
            max_iters: self.max_iters,
            norm: match self.norm {
                NormArg::L2 => Norm::L2,
                NormArg::L1 => Norm::L1,
            },
            lr: self.lr,
            gd_step: self.gd_step,
            rho: self.rho,
            tikhonov: self.tikhonov,
            no_fallback: self.no_fallback,
            iterations: self.iterations,
            cameras: self.cameras,
            train_width: self.train_width,
            train_height: self.train_height,
            loss: match self.loss {
                NormArg::L2 => LossKind::L2,
                NormArg::L1 => LossKind::L1,
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub tf: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Treat the volume as a residual field already in [0, 1].
    #[arg(long)]
    pub residual: bool,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Args, Debug)]
pub struct ResidualArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Reference transfer function
    #[arg(long)]
    pub ref_tf: PathBuf,
    #[arg(long)]
    pub opt: PathBuf,
    #[arg(long)]
    pub opt_tf: PathBuf,
    /// Output volume header.
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the residual with a linear ramp.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    OverWhite,
    Premultiplied,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "over-white")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, env = DATA_DIR_ENV, default_value = ".")]
    pub data_dir: PathBuf,
}

fn require(path: &Path) -> AppResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(AppError::usage(format!("{}: no such file", path.display())))
    }
}

fn load_volume(path: &Path) -> AppResult<ScalarVolume> {
    require(path)?;
    Ok(read_volume(path)?)
}

fn load_tf(path: &Path) -> AppResult<TransferFunction> {
    require(path)?;
    Ok(read_tf(path)?)
}

fn write_image(img: &ImageRGBA, path: &Path, rc: &RenderConfig) -> AppResult<()> {
    if path.extension().is_some_and(|e| e == "ppm") {
        let bg = rc.background;
        let white = 1.0 - bg[3];
        fs::write(path, img.to_ppm([bg[0] + white, bg[1] + white, bg[2] + white]))?;
    } else {
        img.write_png(path)?;
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn correlation_input(args: &GenArgs) -> AppResult<EnsembleStack> {
    match &args.ensemble {
        Some(p) => {
            require(p)?;
            Ok(EnsembleStack::load(p)?)
        }
        None => Ok(fieldgen::demo_ensemble(args.dims, args.members, args.seed)?),
    }
}

fn gen(args: &GenArgs) -> AppResult<()> {
    let synthetic = |kind| {
        let spec = SyntheticSpec { inner_fraction: args.inner_fraction, ..SyntheticSpec::new(kind, args.dims) };
        fieldgen::make_synthetic(&spec)
    };
    match args.kind {
        GenKind::RampX | GenKind::RampXInverted | GenKind::Halves | GenKind::NestedCube => {
            let kind = match args.kind {
                GenKind::RampX => SyntheticKind::RampX,
                GenKind::RampXInverted => SyntheticKind::RampXInverted,
                GenKind::Halves => SyntheticKind::Halves,
                _ => SyntheticKind::NestedCube,
            };
            write_volume(&args.out, &synthetic(kind)?)?;
        }
        GenKind::Ensemble => fieldgen::demo_ensemble(args.dims, args.members, args.seed)?.save(&args.out)?,
        GenKind::Pearson | GenKind::Kendall => {
            let ens = correlation_input(args)?;
            let d = ens.dims();
            let p = args.ref_point.unwrap_or([d[0] / 2, d[1] / 2, d[2] / 2]);
            let field = match args.kind {
                GenKind::Pearson => fieldgen::pearson_field(&ens, p)?,
                _ => fieldgen::kendall_field(&ens, p)?,
            };
            write_volume(&args.out, &field.volume)?;
        }
        GenKind::TfRamp => {
            if !(0.0..=1.0).contains(&args.max_alpha) {
                return Err(AppError::usage("max-alpha must lie in [0, 1]"));
            }
            if args.n_t < 2 {
                return Err(AppError::usage("n-t must be >= 2"));
            }
            write_tf(&args.out, &TransferFunction::ramp(args.n_t, args.max_alpha)?)?;
        }
    }
    print_json(&serde_json::json!({ "written": args.out }));
    Ok(())
}

/// Runs `optimize` and returns the artifact paths written.
pub fn optimize(args: &OptimizeArgs) -> AppResult<pipeline::Artifacts> {
    let solver = SolverChoice::parse(&args.solver)?;
    let vol_r = load_volume(&args.reference)?;
    let tf_r = load_tf(&args.ref_tf)?;
    let vol_o = load_volume(&args.opt)?;
    let tf_init = args.tf_init.as_deref().map(load_tf).transpose()?;
    let inputs = OptimizeInputs { vol_r: &vol_r, tf_r: &tf_r, vol_o: &vol_o, tf_init: tf_init.as_ref() };
    let report = pipeline::run_optimize(&inputs, solver, &args.params(), args.seed, |_| {})?;
    let arts = pipeline::write_artifacts(&args.out_dir, &report)?;
    if args.render {
        let cmp = pipeline::compare_renders(&vol_r, &tf_r, &vol_o, &report.solution, &args.camera.spec(), &args.camera.render_config())?;
        pipeline::write_comparison(&args.out_dir, &cmp)?;
    }
    Ok(arts)
}

fn render_cmd(args: &RenderArgs) -> AppResult<()> {
    let vol = load_volume(&args.volume)?;
    let tf = load_tf(&args.tf)?;
    let rc = args.camera.render_config();
    let cam = args.camera.spec().resolve(vol.extent())?;
    let img = if args.residual {
        let res = tfopt::compare::ResidualVolume {
            dims: vol.dims(),
            spacing: vol.spacing(),
            values: vol.data().to_vec(),
            missing: vol.missing_mask(),
        };
        render_residual(&res, &cam, &rc, &tf)?
    } else {
        render(&vol, &tf, &cam, &rc)?
    };
    write_image(&img, &args.out, &rc)?;
    print_json(&serde_json::json!({ "written": args.out, "hash": img.content_hash() }));
    Ok(())
}

fn residual_cmd(args: &ResidualArgs) -> AppResult<()> {
    let vol_r = load_volume(&args.reference)?;
    let tf_r = load_tf(&args.ref_tf)?;
    let vol_o = load_volume(&args.opt)?;
    let tf_o = load_tf(&args.opt_tf)?;
    let res = residual_field(&vol_r, &tf_r, &vol_o, &tf_o)?;
    pipeline::write_residual(&args.out, &res)?;
    if let Some(path) = &args.image {
        let rc = args.camera.render_config();
        let cam = args.camera.spec().resolve(vol_r.extent())?;
        write_image(&render_residual(&res, &cam, &rc, &pipeline::residual_tf())?, path, &rc)?;
    }
    print_json(&serde_json::json!({ "written": args.out, "max": res.max(), "mean": res.mean() }));
    Ok(())
}

fn metrics_cmd(args: &MetricsArgs) -> AppResult<()> {
    require(&args.a)?;
    require(&args.b)?;
    let a = ImageRGBA::read_png(&args.a)?;
    let b = ImageRGBA::read_png(&args.b)?;
    let mode = match args.mode {
        ModeArg::OverWhite => MetricMode::OverWhite,
        ModeArg::Premultiplied => MetricMode::Premultiplied,
    };
    let text = pipeline::metrics_to_json(&image_metrics_with(&a, &b, mode)?);
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn serve_cmd(args: &ServeArgs) -> AppResult<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve((args.host, args.port).into(), args.data_dir.clone()))
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Optimize(a) => {
            let arts = optimize(a)?;
            print_json(&serde_json::to_value(&arts).expect("paths serialize"));
            Ok(())
        }
        Command::Render(a) => render_cmd(a),
        Command::Residual(a) => residual_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{}", AppError::usage(e.to_string().trim_end()).to_json());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
