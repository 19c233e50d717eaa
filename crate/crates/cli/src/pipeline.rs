//! Operations shared by the CLI and the service. Both front ends go through
//! these functions, so the artifacts they write agree byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfopt::compare::{image_metrics_with, residual_field, MetricMode, MetricReport, ResidualVolume};
use tfopt::diffdvr::{loss_history_csv, optimize_diffdvr_with_progress, DiffOptConfig, LossKind};
use tfopt::renderer::{render, render_residual, CameraSpec, ImageRGBA, RenderConfig};
use tfopt::solvers::{optimize_voxel, Norm, SolveReport, SolverConfig, SolverKind, StepRule};
use tfopt::volcore::io::tf_to_json;
use tfopt::volcore::{ScalarVolume, TransferFunction, DEFAULT_TF_SIZE};

use crate::error::{AppError, AppResult};

pub const TF_ARTIFACT: &str = "tf_opt.json";
pub const REPORT_ARTIFACT: &str = "report.json";
pub const LOSS_ARTIFACT: &str = "loss.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Voxel(SolverKind),
    DiffDvr,
}

impl SolverChoice {
    pub fn parse(s: &str) -> AppResult<Self> {
        if s == "diffdvr" {
            return Ok(Self::DiffDvr);
        }
        SolverKind::parse(s)
            .map(Self::Voxel)
            .ok_or_else(|| AppError::usage(format!("unknown solver {s:?}; expected normal, cgls, gd, admm or diffdvr")))
    }
}

/// Solver knobs, named identically as CLI flags and API fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeParams {
    pub n_t: usize,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub norm: Norm,
    /// Adam learning rate for `gd` and `diffdvr`.
    pub lr: Option<f64>,
    /// Constant step for `gd` instead of Adam.
    pub gd_step: Option<f64>,
    pub rho: f64,
    pub tikhonov: f64,
    pub no_fallback: bool,
    pub iterations: usize,
    pub cameras: usize,
    pub train_width: usize,
    pub train_height: usize,
    pub loss: LossKind,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        let d = DiffOptConfig::default();
        Self {
            n_t: DEFAULT_TF_SIZE,
            tol: None,
            max_iters: None,
            norm: Norm::L2,
            lr: None,
            gd_step: None,
            rho: 1.0,
            tikhonov: 0.0,
            no_fallback: false,
            iterations: d.iterations,
            cameras: d.cameras_per_iter,
            train_width: d.width,
            train_height: d.height,
            loss: LossKind::L2,
        }
    }
}

impl OptimizeParams {
    pub fn solver_config(&self, kind: SolverKind, init: Option<&TransferFunction>) -> SolverConfig {
        let mut cfg = SolverConfig::new(kind);
        if let Some(tol) = self.tol {
            cfg.rel_tolerance = tol;
        }
        cfg.max_iters = self.max_iters;
        cfg.norm = self.norm;
        cfg.step = match (self.gd_step, self.lr, StepRule::default()) {
            (Some(rate), _, _) => StepRule::Constant { rate },
            (None, Some(lr), StepRule::Adam { beta1, beta2, eps, .. }) => StepRule::Adam { lr, beta1, beta2, eps },
            (_, _, d) => d,
        };
        cfg.admm_rho = self.rho;
        cfg.tikhonov = self.tikhonov;
        cfg.auto_fallback = !self.no_fallback;
        cfg.initial_guess = init.map(|t| t.to_linear());
        cfg
    }

    pub fn diff_config(&self, seed: u64) -> DiffOptConfig {
        let d = DiffOptConfig::default();
        DiffOptConfig {
            iterations: self.iterations,
            cameras_per_iter: self.cameras,
            width: self.train_width,
            height: self.train_height,
            lr: self.lr.unwrap_or(d.lr),
            seed,
            ..d
        }
    }
}

/// `tf` sampled at the entry positions of an `n_t`-entry table.
pub fn resample(tf: &TransferFunction, n_t: usize) -> AppResult<TransferFunction> {
    if tf.len() == n_t {
        return Ok(tf.clone());
    }
    if n_t < 2 {
        return Err(AppError::usage(format!("n_t must be >= 2, got {n_t}")));
    }
    Ok(TransferFunction::new((0..n_t).map(|k| tf.eval(k as f64 / (n_t - 1) as f64)).collect())?)
}

pub struct OptimizeInputs<'a> {
    pub vol_r: &'a ScalarVolume,
    pub tf_r: &'a TransferFunction,
    pub vol_o: &'a ScalarVolume,
    /// Starting table; the reference table resampled to `n_t` when absent.
    pub tf_init: Option<&'a TransferFunction>,
}

/// Runs one optimization. `progress` receives the completed fraction.
pub fn run_optimize(
    inputs: &OptimizeInputs,
    solver: SolverChoice,
    params: &OptimizeParams,
    seed: u64,
    mut progress: impl FnMut(f64),
) -> AppResult<SolveReport> {
    let init = inputs.tf_init.map(|t| resample(t, params.n_t)).transpose()?;
    let report = match solver {
        SolverChoice::Voxel(kind) => {
            let cfg = params.solver_config(kind, init.as_ref());
            optimize_voxel(inputs.vol_o, inputs.vol_r, inputs.tf_r, params.n_t, &cfg)?
        }
        SolverChoice::DiffDvr => {
            let cfg = params.diff_config(seed);
            let init = match init {
                Some(t) => t,
                None => resample(inputs.tf_r, params.n_t)?,
            };
            let total = cfg.iterations as f64;
            optimize_diffdvr_with_progress(inputs.vol_r, inputs.tf_r, inputs.vol_o, &init, &cfg, params.loss, |p| {
                progress(p.iteration as f64 / total)
            })?
        }
    };
    progress(1.0);
    Ok(report)
}

pub fn report_to_json(report: &SolveReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialize") + "\n"
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub tf: PathBuf,
    pub report: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<PathBuf>,
}

pub fn write_artifacts(dir: &Path, report: &SolveReport) -> AppResult<Artifacts> {
    fs::create_dir_all(dir)?;
    let tf = dir.join(TF_ARTIFACT);
    let rep = dir.join(REPORT_ARTIFACT);
    fs::write(&tf, tf_to_json(&report.solution))?;
    fs::write(&rep, report_to_json(report))?;
    let loss = if report.solver == "diffdvr" {
        let p = dir.join(LOSS_ARTIFACT);
        fs::write(&p, loss_history_csv(&report.residual_history))?;
        Some(p)
    } else {
        None
    };
    Ok(Artifacts { tf, report: rep, loss })
}

/// Table used to render residual fields: gray ramp with zero opacity at zero.
pub fn residual_tf() -> TransferFunction {
    TransferFunction::ramp(DEFAULT_TF_SIZE, 1.0).expect("ramp is valid")
}

pub struct Comparison {
    pub reference: ImageRGBA,
    pub optimized: ImageRGBA,
    pub residual: ImageRGBA,
    pub metrics: MetricReport,
}

/// Reference and optimized renders under one camera, the rendered residual
/// field and the image metrics between the two renders.
pub fn compare_renders(
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    vol_o: &ScalarVolume,
    tf_o: &TransferFunction,
    camera: &CameraSpec,
    rc: &RenderConfig,
) -> AppResult<Comparison> {
    let cam = camera.resolve(vol_r.extent())?;
    let reference = render(vol_r, tf_r, &cam, rc)?;
    let optimized = render(vol_o, tf_o, &cam, rc)?;
    let res = residual_field(vol_r, tf_r, vol_o, tf_o)?;
    let residual = render_residual(&res, &cam, rc, &residual_tf())?;
    let metrics = image_metrics_with(&reference, &optimized, MetricMode::OverWhite)?;
    Ok(Comparison { reference, optimized, residual, metrics })
}

pub fn write_comparison(dir: &Path, cmp: &Comparison) -> AppResult<()> {
    fs::create_dir_all(dir)?;
    cmp.reference.write_png(dir.join("reference.png"))?;
    cmp.optimized.write_png(dir.join("optimized.png"))?;
    cmp.residual.write_png(dir.join("residual.png"))?;
    fs::write(dir.join("metrics.json"), metrics_to_json(&cmp.metrics))?;
    Ok(())
}

pub fn metrics_to_json(m: &MetricReport) -> String {
    serde_json::to_string_pretty(m).expect("metrics always serialize") + "\n"
}

/// Writes a residual field in the volume format.
pub fn write_residual(path: &Path, res: &ResidualVolume) -> AppResult<()> {
    tfopt::volcore::io::write_volume(path, &res.to_volume()?)?;
    Ok(())
}
