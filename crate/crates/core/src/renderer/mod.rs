//! Emission-absorption ray marching with post-classification.
//!
//! The volume box is centered at the origin and spans `dims * spacing`.
//! Each ray is cut into `S = ceil(len / Δt)` equal segments, sampled at their
//! midpoints; a sample with TF opacity `α` gets per-segment opacity
//! `1 − exp(−seg σ α)` and is composited front to back.

mod camera;
mod image;

pub use camera::{framing, Camera, CameraSpec, Vec3};
pub use image::ImageRGBA;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::ResidualVolume;
use crate::volcore::{Normalizer, ScalarVolume, TransferFunction};
use crate::{Error, Result};
use camera::add_scaled;

pub const DEFAULT_EXTINCTION: f64 = 100.0;

/// Largest per-sample opacity in differentiable mode.
pub const DIFFERENTIABLE_MAX_OPACITY: f64 = 1.0 - 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// World-space step; `None` means a quarter of the smallest voxel spacing.
    pub step_size: Option<f64>,
    /// Stop a ray once its opacity reaches this value.
    pub early_termination: Option<f64>,
    /// Premultiplied RGBA behind the volume.
    pub background: [f64; 4],
    pub max_samples: usize,
    /// Extinction per unit world length for a TF opacity of one.
    pub extinction: f64,
    pub max_sample_opacity: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            step_size: None,
            early_termination: Some(0.99),
            background: [0.0; 4],
            max_samples: 4096,
            extinction: DEFAULT_EXTINCTION,
            max_sample_opacity: 1.0,
        }
    }
}

impl RenderConfig {
    /// No early termination and per-sample opacity kept below one, so that
    /// every compositing step can be inverted.
    pub fn differentiable() -> Self {
        Self::default().into_differentiable()
    }

    pub fn into_differentiable(self) -> Self {
        Self { early_termination: None, max_sample_opacity: self.max_sample_opacity.min(DIFFERENTIABLE_MAX_OPACITY), ..self }
    }

    pub fn step_for(&self, vol: &ScalarVolume) -> f64 {
        self.step_size.unwrap_or_else(|| 0.25 * vol.spacing().iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return bad("step_size must be > 0");
            }
        }
        if let Some(t) = self.early_termination {
            if !(t > 0.0 && t <= 1.0) {
                return bad("early_termination must lie in (0, 1]");
            }
        }
        if self.max_samples == 0 {
            return bad("max_samples must be >= 1");
        }
        if !(self.extinction > 0.0 && self.extinction.is_finite()) {
            return bad("extinction must be > 0");
        }
        if !(self.max_sample_opacity > 0.0 && self.max_sample_opacity <= 1.0) {
            return bad("max_sample_opacity must lie in (0, 1]");
        }
        let bg = self.background;
        if !(bg.iter().all(|v| (0.0..=1.0).contains(v)) && bg[..3].iter().all(|&c| c <= bg[3] + 1e-6)) {
            return bad("background must be premultiplied RGBA in [0, 1]");
        }
        Ok(())
    }
}

/// Running state of a ray: premultiplied color and opacity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositingState {
    pub color: [f64; 3],
    pub alpha: f64,
}

/// Front-to-back blend of a sample with color `c` and opacity `a`.
pub fn composite_step(state: CompositingState, c: [f64; 3], a: f64) -> CompositingState {
    let t = 1.0 - state.alpha;
    CompositingState {
        color: std::array::from_fn(|k| state.color[k] + t * c[k] * a),
        alpha: state.alpha + t * a,
    }
}

/// Final pixel: the ray's state over the background.
pub fn resolve_pixel(state: CompositingState, bg: [f64; 4]) -> [f64; 4] {
    let t = 1.0 - state.alpha;
    [state.color[0] + t * bg[0], state.color[1] + t * bg[1], state.color[2] + t * bg[2], state.alpha + t * bg[3]]
}

/// Cell-centered trilinear interpolation with clamping at the border.
/// `None` outside the box or when a contributing corner is missing.
pub fn trilinear_sample(vol: &ScalarVolume, p: Vec3) -> Option<f64> {
    let dims = vol.dims();
    let spacing = vol.spacing();
    let extent = vol.extent();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let half = 0.5 * extent[a];
        if !(p[a] >= -half && p[a] <= half) {
            return None;
        }
        let g = ((p[a] + half) / spacing[a] - 0.5).clamp(0.0, (dims[a] - 1) as f64);
        lo[a] = (g.floor() as usize).min(dims[a] - 1);
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        t[a] = g - lo[a] as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let pick = |a: usize| corner >> a & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = if pick(a) { hi[a] } else { lo[a] };
            w *= if pick(a) { t[a] } else { 1.0 - t[a] };
        }
        let v = vol.get(idx[0], idx[1], idx[2]);
        // a missing corner voids the sample even at zero weight
        if !v.is_finite() {
            return None;
        }
        acc += w * v;
    }
    Some(acc)
}

/// Parameter interval where the ray meets the centered box, clipped to `t ≥ 0`.
pub fn intersect_box(origin: Vec3, dir: Vec3, extent: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let half = 0.5 * extent[a];
        if dir[a] == 0.0 {
            if origin[a] < -half || origin[a] > half {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((-half - origin[a]) * inv, (half - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Sample positions along one ray.
#[derive(Debug, Clone, Copy)]
pub struct RayMarch {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t0: f64,
    pub seg: f64,
    pub count: usize,
}

impl RayMarch {
    pub fn new(vol: &ScalarVolume, origin: Vec3, dir: Vec3, rc: &RenderConfig) -> Option<Self> {
        let (t0, t1) = intersect_box(origin, dir, vol.extent())?;
        let len = t1 - t0;
        let count = ((len / rc.step_for(vol)).ceil() as usize).clamp(1, rc.max_samples);
        Some(Self { origin, dir, t0, seg: len / count as f64, count })
    }

    pub fn position(&self, k: usize) -> Vec3 {
        add_scaled(self.origin, self.dir, self.t0 + (k as f64 + 0.5) * self.seg)
    }
}

/// Per-segment opacity from a TF opacity.
pub fn sample_opacity(alpha_tf: f64, seg: f64, rc: &RenderConfig) -> f64 {
    (1.0 - (-seg * rc.extinction * alpha_tf).exp()).min(rc.max_sample_opacity)
}

fn march(vol: &ScalarVolume, norm: &Normalizer, tf: &TransferFunction, ray: &RayMarch, rc: &RenderConfig) -> CompositingState {
    let mut state = CompositingState::default();
    for k in 0..ray.count {
        let Some(d) = trilinear_sample(vol, ray.position(k)) else { continue };
        let [r, g, b, alpha] = tf.eval(norm.map(d));
        if alpha <= 0.0 {
            continue;
        }
        state = composite_step(state, [r, g, b], sample_opacity(alpha, ray.seg, rc));
        if rc.early_termination.is_some_and(|thr| state.alpha >= thr) {
            break;
        }
    }
    state
}

/// Ray state for a single ray, exposed for inspection.
pub fn march_ray(vol: &ScalarVolume, tf: &TransferFunction, origin: Vec3, dir: Vec3, rc: &RenderConfig) -> CompositingState {
    match RayMarch::new(vol, origin, dir, rc) {
        Some(ray) => march(vol, &vol.normalizer(), tf, &ray, rc),
        None => CompositingState::default(),
    }
}

pub(crate) fn render_with(vol: &ScalarVolume, norm: &Normalizer, tf: &TransferFunction, cam: &Camera, rc: &RenderConfig) -> Result<ImageRGBA> {
    rc.validate()?;
    let (f, r, u) = cam.basis();
    let mut pixels = vec![[0.0; 4]; cam.width * cam.height];
    pixels.par_chunks_mut(cam.width).enumerate().for_each(|(py, row)| {
        for (px, out) in row.iter_mut().enumerate() {
            let dir = cam.direction_in(f, r, u, px, py);
            let state = match RayMarch::new(vol, cam.eye, dir, rc) {
                Some(ray) => march(vol, norm, tf, &ray, rc),
                None => CompositingState::default(),
            };
            *out = resolve_pixel(state, rc.background);
        }
    });
    ImageRGBA::from_pixels(cam.width, cam.height, pixels)
}

/// Render `vol` classified by `tf`, densities min-max normalized.
pub fn render(vol: &ScalarVolume, tf: &TransferFunction, cam: &Camera, rc: &RenderConfig) -> Result<ImageRGBA> {
    render_with(vol, &vol.normalizer(), tf, cam, rc)
}

/// Render a residual field. Residuals already lie in `[0, 1]` and are used as is.
pub fn render_residual(res: &ResidualVolume, cam: &Camera, rc: &RenderConfig, tf: &TransferFunction) -> Result<ImageRGBA> {
    render_with(&res.to_volume()?, &Normalizer::unit(), tf, cam, rc)
}
