//! Solvers for the voxel-space transfer function problem
//! `min ‖b − A x‖` subject to `0 ≤ x ≤ 1`.
//!
//! All solvers start from a flat mid-gray table, accept an optional ridge
//! term, and finish the same way: entries clamped to `[0, 1]`, and entries no
//! voxel references filled by linear interpolation between their referenced
//! neighbors (constant extrapolation at the ends).

mod admm;
mod cgls;
mod condition;
mod direct;
mod gradient;
mod tridiag;

pub use admm::solve_admm_qp;
pub use cgls::{solve_cgls, solve_cgls_problem};
pub use condition::{condition_estimate, condition_estimate_with};
pub use direct::{solve_normal_direct, unclamped_normal_solution};
pub use gradient::{objective_gradient, solve_grad_desc, solve_grad_desc_problem};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_gram, GramSystem, LeastSquaresProblem};
use crate::volcore::{ScalarVolume, TransferFunction};
use crate::{Error, Result};

use tridiag::Tridiagonal;

/// Fill weight relative to the largest Gram diagonal entry.
pub const FILL_WEIGHT: f64 = 1e-6;

pub const INITIAL_VALUE: f64 = 0.5;

/// Above this condition estimate the direct solver hands over to CGLS.
pub const FALLBACK_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[serde(alias = "normal")]
    NormalDirect,
    Cgls,
    #[serde(alias = "gd")]
    GradDesc,
    #[serde(alias = "admm")]
    AdmmQp,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NormalDirect => "normal_direct",
            Self::Cgls => "cgls",
            Self::GradDesc => "grad_desc",
            Self::AdmmQp => "admm_qp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" | "normal_direct" => Some(Self::NormalDirect),
            "cgls" => Some(Self::Cgls),
            "gd" | "grad_desc" => Some(Self::GradDesc),
            "admm" | "admm_qp" => Some(Self::AdmmQp),
            _ => None,
        }
    }

    fn default_max_iters(self) -> usize {
        match self {
            Self::GradDesc => 5000,
            _ => 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    L2,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Constant { rate: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        Self::Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// `None` picks the per-solver default (5000 for gradient descent, 1000 otherwise).
    pub max_iters: Option<usize>,
    pub rel_tolerance: f64,
    pub norm: Norm,
    pub step: StepRule,
    pub admm_rho: f64,
    /// Ridge weight on referenced entries.
    pub tikhonov: f64,
    /// Starting point for the iterative solvers, interleaved RGBA.
    pub initial_guess: Option<Vec<f64>>,
    /// Let `normal_direct` hand over to CGLS on singular or ill-conditioned systems.
    pub auto_fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::NormalDirect,
            max_iters: None,
            rel_tolerance: 1e-8,
            norm: Norm::L2,
            step: StepRule::default(),
            admm_rho: 1.0,
            tikhonov: 0.0,
            initial_guess: None,
            auto_fallback: true,
        }
    }
}

impl SolverConfig {
    pub fn new(kind: SolverKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters.unwrap_or(self.kind.default_max_iters())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.rel_tolerance > 0.0) {
            return bad("rel_tolerance must be > 0");
        }
        if !(self.admm_rho > 0.0) {
            return bad("admm_rho must be > 0");
        }
        if !(self.tikhonov >= 0.0 && self.tikhonov.is_finite()) {
            return bad("tikhonov must be >= 0");
        }
        match self.step {
            StepRule::Constant { rate } if !(rate > 0.0) => return bad("rate must be > 0"),
            StepRule::Adam { lr, beta1, beta2, eps } => {
                if !(lr > 0.0 && eps > 0.0) {
                    return bad("lr and eps must be > 0");
                }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
                    return bad("beta1 and beta2 must lie in [0, 1)");
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn initial(&self, n_t: usize) -> Result<Vec<f64>> {
        match &self.initial_guess {
            Some(x) if x.len() != 4 * n_t => Err(Error::LengthMismatch { expected: 4 * n_t, got: x.len() }),
            Some(x) => Ok(x.clone()),
            None => Ok(vec![INITIAL_VALUE; 4 * n_t]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub solution: TransferFunction,
    pub iterations: usize,
    pub objective: f64,
    pub residual_history: Vec<f64>,
    pub clamped: bool,
    #[serde(with = "crate::floatser::option")]
    pub condition_estimate: Option<f64>,
    pub converged: bool,
    /// Set when the requested solver handed over to another one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fell_back_from: Option<String>,
}

/// Componentwise truncation to `[0, 1]`.
pub fn clamp_tf(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Replace entries of unreferenced bins (`empty[k]`) by linear interpolation
/// between the nearest referenced bins, per channel.
pub fn fill_unreferenced(x: &mut [f64], empty: &[bool]) {
    let n = empty.len();
    let mut k = 0;
    while k < n {
        if !empty[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && empty[k] {
            k += 1;
        }
        let left = start.checked_sub(1);
        let right = (k < n).then_some(k);
        for m in start..k {
            for ch in 0..4 {
                x[4 * m + ch] = match (left, right) {
                    (Some(l), Some(r)) => {
                        let t = (m - l) as f64 / (r - l) as f64;
                        (1.0 - t) * x[4 * l + ch] + t * x[4 * r + ch]
                    }
                    (Some(l), None) => x[4 * l + ch],
                    (None, Some(r)) => x[4 * r + ch],
                    (None, None) => x[4 * m + ch],
                };
            }
        }
    }
}

/// Per-channel system matrix: the Gram matrix plus ridge on referenced bins;
/// unreferenced rows are replaced by `λ_fill (x_k − mean of neighbors) = 0`.
/// Only those rows change, so referenced entries solve the original system.
pub(crate) fn regularized_matrix(gs: &GramSystem, ridge: f64) -> Tridiagonal {
    let n = gs.n_t();
    let max_diag = gs.diag.iter().copied().fold(0.0, f64::max);
    let fill = FILL_WEIGHT * max_diag;
    let mut t = Tridiagonal::symmetric(gs.diag.clone(), &gs.offdiag);
    for k in 0..n {
        if gs.diag[k] == 0.0 {
            let neighbors = (k > 0) as usize + (k + 1 < n) as usize;
            let c = if neighbors > 0 { -fill / neighbors as f64 } else { 0.0 };
            t.diag[k] = fill;
            t.lower[k] = if k > 0 { c } else { 0.0 };
            t.upper[k] = if k + 1 < n { c } else { 0.0 };
        } else {
            t.diag[k] += ridge;
        }
    }
    t
}

pub(crate) fn interleave(channels: &[Vec<f64>; 4]) -> Vec<f64> {
    let n = channels[0].len();
    (0..4 * n).map(|i| channels[i % 4][i / 4]).collect()
}

/// Clamp, fill unreferenced entries, and report whether clamping changed anything.
pub(crate) fn finalize(x: &[f64], empty: &[bool]) -> (Vec<f64>, bool) {
    let mut out = clamp_tf(x);
    let clamped = out
        .iter()
        .zip(x)
        .enumerate()
        .any(|(i, (a, b))| !empty[i / 4] && a != b);
    fill_unreferenced(&mut out, empty);
    (out, clamped)
}

pub(crate) fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Solve the voxel-space problem with the solver selected in `cfg`.
pub fn optimize_voxel(
    vol_o: &ScalarVolume,
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    n_t: usize,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    match cfg.kind {
        SolverKind::NormalDirect => {
            let gs = assemble_gram(vol_o, vol_r, tf_r, n_t)?;
            let cond = condition_estimate_with(&gs, cfg.tikhonov);
            let direct = if cfg.auto_fallback && cond > FALLBACK_CONDITION {
                Err(Error::SingularSystem { row: 0 })
            } else {
                solve_normal_direct(&gs, cfg)
            };
            match direct {
                Err(Error::SingularSystem { .. }) if cfg.auto_fallback => {
                    let problem = LeastSquaresProblem::new(vol_o, vol_r, tf_r, n_t)?;
                    let mut report = solve_cgls_problem(&problem, &SolverConfig { kind: SolverKind::Cgls, ..cfg.clone() })?;
                    report.condition_estimate = Some(cond);
                    report.fell_back_from = Some(SolverKind::NormalDirect.name().to_string());
                    Ok(report)
                }
                other => other,
            }
        }
        SolverKind::AdmmQp => solve_admm_qp(&assemble_gram(vol_o, vol_r, tf_r, n_t)?, cfg),
        SolverKind::Cgls => solve_cgls(vol_o, vol_r, tf_r, n_t, cfg),
        SolverKind::GradDesc => solve_grad_desc(vol_o, vol_r, tf_r, n_t, cfg),
    }
}
