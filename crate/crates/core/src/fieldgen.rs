//! Synthetic test volumes and ensemble correlation fields.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volcore::{io, ScalarVolume};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `x / (nx - 1)`.
    RampX,
    /// `1 - x / (nx - 1)`.
    RampXInverted,
    /// 0 on the left half, 1 on the right half.
    Halves,
    /// [`SyntheticKind::Halves`] with the assignment flipped inside a centered cube.
    NestedCube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dims: [usize; 3],
    /// Edge length of the inner cube relative to the domain (nested cube only).
    #[serde(default = "default_fraction")]
    pub inner_fraction: f64,
}

fn default_fraction() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, dims: [usize; 3]) -> Self {
        Self { kind, dims, inner_fraction: default_fraction() }
    }
}

/// Spacing that fits the longest axis into a unit box.
pub fn unit_box_spacing(dims: [usize; 3]) -> [f64; 3] {
    let s = 1.0 / *dims.iter().max().unwrap_or(&1) as f64;
    [s; 3]
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<ScalarVolume> {
    let d = spec.dims;
    if d.iter().any(|&n| n < 2) {
        return Err(Error::InvalidConfig(format!("synthetic volumes need dims >= 2, got {d:?}")));
    }
    if spec.kind == SyntheticKind::NestedCube && !(spec.inner_fraction > 0.0 && spec.inner_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("inner fraction {} not in (0, 1)", spec.inner_fraction)));
    }
    let nx1 = (d[0] - 1) as f64;
    let half = |x: usize| if 2 * x + 1 < d[0] { 0.0 } else { 1.0 };
    let inside = |p: [usize; 3]| {
        (0..3).all(|a| {
            let c = p[a] as f64 + 0.5 - d[a] as f64 / 2.0;
            c.abs() < spec.inner_fraction * d[a] as f64 / 2.0
        })
    };
    ScalarVolume::from_fn(d, unit_box_spacing(d), |x, y, z| match spec.kind {
        SyntheticKind::RampX => x as f64 / nx1,
        SyntheticKind::RampXInverted => 1.0 - x as f64 / nx1,
        SyntheticKind::Halves => half(x),
        SyntheticKind::NestedCube => {
            if inside([x, y, z]) {
                1.0 - half(x)
            } else {
                half(x)
            }
        }
    })
}

/// Ensemble members sharing one grid.
#[derive(Debug, Clone)]
pub struct EnsembleStack {
    members: Vec<ScalarVolume>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    /// Member header paths, relative to the manifest.
    pub members: Vec<String>,
}

impl EnsembleStack {
    pub fn new(members: Vec<ScalarVolume>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidConfig(format!("an ensemble needs >= 2 members, got {}", members.len())));
        }
        let (dims, spacing) = (members[0].dims(), members[0].spacing());
        for m in &members[1..] {
            if m.dims() != dims {
                return Err(Error::DimsMismatch { expected: dims, got: m.dims() });
            }
            if m.spacing() != spacing {
                return Err(Error::InvalidVolume("ensemble members differ in spacing".into()));
            }
        }
        Ok(Self { members })
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let members = manifest.members.iter().map(|m| io::read_volume(base.join(m))).collect::<Result<_>>()?;
        Self::new(members)
    }

    /// Writes every member as `member_NNN.json` plus the manifest.
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let path = manifest_path.as_ref();
        let base: PathBuf = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut names = Vec::with_capacity(self.members.len());
        for (k, m) in self.members.iter().enumerate() {
            let name = format!("member_{k:03}.json");
            io::write_volume(base.join(&name), m)?;
            names.push(name);
        }
        let text = serde_json::to_string_pretty(&EnsembleManifest { members: names }).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[ScalarVolume] {
        &self.members
    }

    pub fn dims(&self) -> [usize; 3] {
        self.members[0].dims()
    }

    /// The E-length series at voxel `i`.
    pub fn series(&self, i: usize) -> Vec<f64> {
        self.members.iter().map(|m| m.data()[i]).collect()
    }
}

/// Demo ensemble: a shared smooth signal whose amplitude varies per member,
/// plus per-voxel noise, so correlations decay away from any point.
pub fn demo_ensemble(dims: [usize; 3], members: usize, seed: u64) -> Result<EnsembleStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = unit_box_spacing(dims);
    let vols = (0..members)
        .map(|_| {
            let amp: f64 = rng.random_range(-1.0..1.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            ScalarVolume::from_fn(dims, spacing, |x, y, z| {
                let p = [x, y, z].map(|c| c as f64);
                let u = p[0] / dims[0] as f64;
                let v = p[1] / dims[1] as f64;
                let w = p[2] / dims[2] as f64;
                let signal = amp * (-(u - 0.5).powi(2) * 6.0).exp() * (3.0 * v + phase).sin() * (1.0 - 0.5 * w);
                signal + 0.3 * rng.random_range(-1.0..1.0)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleStack::new(vols)
}

/// A correlation volume plus the voxels where the coefficient is undefined
/// (zero variance or all ties); those hold 0.
#[derive(Debug, Clone)]
pub struct CorrelationField {
    pub volume: ScalarVolume,
    pub undefined: Vec<bool>,
}

/// Sample Pearson correlation of two equal-length series, `None` if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall tau-b by pair counting, `None` when either series is all ties.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j])? as i64;
            let db = b[i].partial_cmp(&b[j])? as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    // pairs tied in both series drop out of both denominators
    let na = (concordant + discordant + ties_b) as f64;
    let nb = (concordant + discordant + ties_a) as f64;
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(((concordant - discordant) as f64 / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

fn correlation_field(
    ens: &EnsembleStack,
    ref_point: [usize; 3],
    coeff: impl Fn(&[f64], &[f64]) -> Option<f64> + Sync,
) -> Result<CorrelationField> {
    let dims = ens.dims();
    if (0..3).any(|a| ref_point[a] >= dims[a]) {
        return Err(Error::InvalidConfig(format!("reference point {ref_point:?} outside {dims:?}")));
    }
    let first = &ens.members()[0];
    let reference = ens.series(first.index(ref_point[0], ref_point[1], ref_point[2]));
    if reference.iter().any(|v| !v.is_finite()) || reference.iter().all(|&v| v == reference[0]) {
        return Err(Error::ConstantSeries);
    }
    let values: Vec<Option<f64>> = (0..first.len())
        .into_par_iter()
        .map(|i| {
            let s = ens.series(i);
            if s.iter().any(|v| !v.is_finite()) {
                None
            } else {
                coeff(&reference, &s)
            }
        })
        .collect();
    let undefined = values.iter().map(Option::is_none).collect();
    let data = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
    Ok(CorrelationField { volume: ScalarVolume::new(dims, first.spacing(), data)?, undefined })
}

pub fn pearson_field(ens: &EnsembleStack, ref_point: [usize; 3]) -> Result<CorrelationField> {
    correlation_field(ens, ref_point, pearson)
}

pub fn kendall_field(ens: &EnsembleStack, ref_point: [usize; 3]) -> Result<CorrelationField> {
    correlation_field(ens, ref_point, kendall_tau_b)
}
