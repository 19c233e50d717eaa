use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Rgba = [f64; 4];

pub const DEFAULT_TF_SIZE: usize = 256;

/// Position of a normalized density between two table entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCoordinate {
    /// Lower entry, in `0..=n_t - 2`.
    pub j: usize,
    /// Weight of entry `j + 1`.
    pub w: f64,
}

/// Splits `d01 * (n_t - 1)` into a lower bin and an interpolation weight.
///
/// The top of the range lands in the last interval with `w = 1` rather than in
/// a phantom bin, so every voxel touches exactly two entries.
#[inline]
pub fn quantize(d01: f64, n_t: usize) -> BinCoordinate {
    debug_assert!(n_t >= 2);
    let u = d01.clamp(0.0, 1.0) * (n_t - 1) as f64;
    let j = (u.floor() as usize).min(n_t - 2);
    BinCoordinate { j, w: u - j as f64 }
}

/// Table of RGBA entries over `[0, 1]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfFile", into = "TfFile")]
pub struct TransferFunction {
    entries: Vec<Rgba>,
}

#[derive(Serialize, Deserialize)]
struct TfFile {
    n_t: usize,
    entries: Vec<Rgba>,
}

impl TryFrom<TfFile> for TransferFunction {
    type Error = Error;

    fn try_from(f: TfFile) -> Result<Self> {
        if f.n_t != f.entries.len() {
            return Err(Error::InvalidTransferFunction(format!(
                "n_t = {} but {} entries",
                f.n_t,
                f.entries.len()
            )));
        }
        TransferFunction::new(f.entries)
    }
}

impl From<TransferFunction> for TfFile {
    fn from(tf: TransferFunction) -> Self {
        TfFile { n_t: tf.entries.len(), entries: tf.entries }
    }
}

impl TransferFunction {
    pub fn new(entries: Vec<Rgba>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidTransferFunction(format!("need at least 2 entries, got {}", entries.len())));
        }
        if let Some(k) = entries.iter().position(|e| e.iter().any(|c| !(0.0..=1.0).contains(c))) {
            return Err(Error::InvalidTransferFunction(format!("entry {k} = {:?} leaves [0, 1]", entries[k])));
        }
        Ok(Self { entries })
    }

    /// Builds a table from the interleaved layout `[R0 G0 B0 A0 R1 ...]`.
    pub fn from_linear(x: &[f64]) -> Result<Self> {
        if x.len() % 4 != 0 {
            return Err(Error::InvalidTransferFunction(format!("linear length {} is not a multiple of 4", x.len())));
        }
        Self::new(x.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
    }

    /// Grayscale ramp with opacity growing linearly from 0 to `max_alpha`.
    pub fn ramp(n_t: usize, max_alpha: f64) -> Result<Self> {
        Self::new(
            (0..n_t)
                .map(|k| {
                    let t = k as f64 / (n_t.max(2) - 1) as f64;
                    [t, t, t, t * max_alpha]
                })
                .collect(),
        )
    }

    pub fn constant(n_t: usize, rgba: Rgba) -> Result<Self> {
        Self::new(vec![rgba; n_t])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Rgba] {
        &self.entries
    }

    pub fn to_linear(&self) -> Vec<f64> {
        self.entries.iter().flatten().copied().collect()
    }

    #[inline]
    pub fn eval(&self, d01: f64) -> Rgba {
        let BinCoordinate { j, w } = quantize(d01, self.entries.len());
        self.eval_at(j, w)
    }

    #[inline]
    pub fn eval_at(&self, j: usize, w: f64) -> Rgba {
        let a = &self.entries[j];
        let b = &self.entries[j + 1];
        [
            (1.0 - w) * a[0] + w * b[0],
            (1.0 - w) * a[1] + w * b[1],
            (1.0 - w) * a[2] + w * b[2],
            (1.0 - w) * a[3] + w * b[3],
        ]
    }
}
