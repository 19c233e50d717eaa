//! Residual fields between pre-shaded volumes and image similarity metrics.
//!
//! Metrics work on the 0–255 scale. By default images are first composited
//! over opaque white; [`MetricMode::Premultiplied`] uses the raw RGBA instead.

use serde::{Deserialize, Serialize};

use crate::renderer::ImageRGBA;
use crate::volcore::{ScalarVolume, TransferFunction};
use crate::{Error, Result};

/// Per-voxel magnitude of the premultiplied RGBA difference, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub values: Vec<f64>,
    /// Voxels missing on either side; their value is 0.
    pub missing: Vec<bool>,
}

impl ResidualVolume {
    pub fn to_volume(&self) -> Result<ScalarVolume> {
        ScalarVolume::new(self.dims, self.spacing, self.values.clone())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn premultiplied(c: [f64; 4]) -> [f64; 4] {
    [c[0] * c[3], c[1] * c[3], c[2] * c[3], c[3]]
}

/// `‖(α_r C_r, α_r) − (α_o C_o, α_o)‖₂ / 2` per voxel, using each volume's own normalization.
pub fn residual_field(vol_r: &ScalarVolume, tf_r: &TransferFunction, vol_o: &ScalarVolume, tf_o: &TransferFunction) -> Result<ResidualVolume> {
    if vol_r.dims() != vol_o.dims() {
        return Err(Error::DimsMismatch { expected: vol_r.dims(), got: vol_o.dims() });
    }
    let (nr, no) = (vol_r.normalizer(), vol_o.normalizer());
    let (dr, dov) = (vol_r.data(), vol_o.data());
    let mut values = vec![0.0; dr.len()];
    let mut missing = vec![false; dr.len()];
    use rayon::prelude::*;
    values.par_iter_mut().zip(missing.par_iter_mut()).enumerate().for_each(|(i, (v, m))| {
        if !(dr[i].is_finite() && dov[i].is_finite()) {
            *m = true;
            return;
        }
        let a = premultiplied(tf_r.eval(nr.map(dr[i])));
        let b = premultiplied(tf_o.eval(no.map(dov[i])));
        let sq: f64 = (0..4).map(|c| (a[c] - b[c]).powi(2)).sum();
        *v = (0.5 * sq.sqrt()).min(1.0);
    });
    Ok(ResidualVolume { dims: vol_r.dims(), spacing: vol_r.spacing(), values, missing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    #[default]
    OverWhite,
    Premultiplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    /// `+inf` for identical images, encoded as `"inf"` in JSON.
    #[serde(with = "crate::floatser")]
    pub psnr: f64,
    pub ssim: f64,
}

/// Channels on the 0–255 scale, one plane per channel.
fn planes(img: &ImageRGBA, mode: MetricMode) -> Vec<Vec<f64>> {
    match mode {
        MetricMode::OverWhite => {
            let rgb = img.over_background([1.0; 3]);
            (0..3).map(|c| rgb.iter().map(|p| 255.0 * p[c]).collect()).collect()
        }
        MetricMode::Premultiplied => (0..4).map(|c| img.pixels.iter().map(|p| 255.0 * p[c]).collect()).collect(),
    }
}

fn check_sizes(a: &ImageRGBA, b: &ImageRGBA) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::SizeMismatch { a: a.size(), b: b.size() });
    }
    Ok(())
}

fn rmse_planes(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (pa, pb) in a.iter().zip(b) {
        sum += pa.iter().zip(pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        n += pa.len();
    }
    (sum / n as f64).sqrt()
}

pub fn image_rmse_with(a: &ImageRGBA, b: &ImageRGBA, mode: MetricMode) -> Result<f64> {
    check_sizes(a, b)?;
    Ok(rmse_planes(&planes(a, mode), &planes(b, mode)))
}

pub fn image_rmse(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    image_rmse_with(a, b, MetricMode::OverWhite)
}

pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / rmse).log10()
    }
}

pub fn image_psnr(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    Ok(psnr_from_rmse(image_rmse(a, b)?))
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_WINDOW: usize = 11;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid window positions only.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian(SSIM_WINDOW.min(w).min(h));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, _, _) = filter(a, w, h, &k);
    let (mu_b, _, _) = filter(b, w, h, &k);
    let (aa, _, _) = filter(&prod(a, a), w, h, &k);
    let (bb, _, _) = filter(&prod(b, b), w, h, &k);
    let (ab, _, _) = filter(&prod(a, b), w, h, &k);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum::<f64>()
        / n as f64
}

pub fn image_ssim_with(a: &ImageRGBA, b: &ImageRGBA, mode: MetricMode) -> Result<f64> {
    check_sizes(a, b)?;
    let (pa, pb) = (planes(a, mode), planes(b, mode));
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, a.width, a.height)).sum();
    Ok(total / pa.len() as f64)
}

pub fn image_ssim(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    image_ssim_with(a, b, MetricMode::OverWhite)
}

pub fn image_metrics_with(a: &ImageRGBA, b: &ImageRGBA, mode: MetricMode) -> Result<MetricReport> {
    let rmse = image_rmse_with(a, b, mode)?;
    Ok(MetricReport { rmse, psnr: psnr_from_rmse(rmse), ssim: image_ssim_with(a, b, mode)? })
}

pub fn image_metrics(a: &ImageRGBA, b: &ImageRGBA) -> Result<MetricReport> {
    image_metrics_with(a, b, MetricMode::OverWhite)
}
