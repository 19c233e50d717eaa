//! Differentiable rendering of the transfer function.
//!
//! The forward pass is the renderer's ray march without early termination and
//! with per-sample opacity capped at `1 − 1e-4`. Each ray also keeps its
//! optical depth `τ = −ln T`. The backward pass walks every ray in reverse and
//! recovers the pre-sample state by undoing each blend:
//! `τ_prev = τ − x`, `L_prev = L − T_prev c a`, which is the opacity inversion
//! `α_prev = (α − a) / (1 − a)` carried out in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::renderer::{composite_step, framing, resolve_pixel, trilinear_sample, Camera, CompositingState, ImageRGBA, RayMarch, RenderConfig, Vec3};
use crate::solvers::SolveReport;
use crate::volcore::{quantize, Normalizer, ScalarVolume, TransferFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    #[default]
    L2,
}

/// Mean over pixels and premultiplied RGBA channels.
pub fn loss(a: &ImageRGBA, b: &ImageRGBA, kind: LossKind) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::SizeMismatch { a: a.size(), b: b.size() });
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..4).map(move |c| p[c] - q[c]))
        .map(|d| match kind {
            LossKind::L1 => d.abs(),
            LossKind::L2 => d * d,
        })
        .sum();
    Ok(sum / (4 * a.pixels.len()) as f64)
}

/// One classified sample.
struct Shaded {
    j: usize,
    w: f64,
    color: [f64; 3],
    a: f64,
    /// Optical depth of the sample, `−ln(1 − a)`.
    depth: f64,
    /// `∂a/∂α_TF`; zero where the opacity cap is active.
    da: f64,
}

fn shade(x: &[f64], n_t: usize, d01: f64, seg: f64, rc: &RenderConfig) -> Shaded {
    let q = quantize(d01, n_t);
    let (lo, hi) = (&x[4 * q.j..4 * q.j + 4], &x[4 * q.j + 4..4 * q.j + 8]);
    let v: [f64; 4] = std::array::from_fn(|c| (1.0 - q.w) * lo[c] + q.w * hi[c]);
    let raw_depth = seg * rc.extinction * v[3];
    let raw = 1.0 - (-raw_depth).exp();
    let (a, depth, da) = if raw > rc.max_sample_opacity {
        (rc.max_sample_opacity, -(1.0 - rc.max_sample_opacity).ln(), 0.0)
    } else {
        (raw, raw_depth, seg * rc.extinction * (1.0 - raw))
    };
    Shaded { j: q.j, w: q.w, color: [v[0], v[1], v[2]], a, depth, da }
}

struct Scene<'a> {
    vol: &'a ScalarVolume,
    norm: Normalizer,
    x: &'a [f64],
    n_t: usize,
    rc: RenderConfig,
}

impl<'a> Scene<'a> {
    fn new(vol: &'a ScalarVolume, x: &'a [f64], rc: &RenderConfig) -> Result<Self> {
        let rc = rc.clone().into_differentiable();
        rc.validate()?;
        if x.len() < 8 || x.len() % 4 != 0 {
            return Err(Error::InvalidTransferFunction(format!("linear table of length {}", x.len())));
        }
        Ok(Self { vol, norm: vol.normalizer(), x, n_t: x.len() / 4, rc })
    }

    fn samples<'s>(&'s self, ray: &'s RayMarch) -> impl DoubleEndedIterator<Item = Shaded> + 's {
        (0..ray.count).filter_map(move |k| {
            let d = trilinear_sample(self.vol, ray.position(k))?;
            Some(shade(self.x, self.n_t, self.norm.map(d), ray.seg, &self.rc))
        })
    }

    /// Final state and optical depth of a ray.
    fn forward_ray(&self, origin: Vec3, dir: Vec3) -> (CompositingState, f64, Option<RayMarch>) {
        let Some(ray) = RayMarch::new(self.vol, origin, dir, &self.rc) else {
            return (CompositingState::default(), 0.0, None);
        };
        let mut state = CompositingState::default();
        let mut tau = 0.0;
        for s in self.samples(&ray) {
            state = composite_step(state, s.color, s.a);
            tau += s.depth;
        }
        (state, tau, Some(ray))
    }

    /// Reverse sweep accumulating `∂loss/∂x` into `grad`, given the adjoints of
    /// the final premultiplied color `g_l` and transmittance `g_t`.
    fn backward_ray(&self, ray: &RayMarch, end: CompositingState, tau_end: f64, g_l: [f64; 3], g_t: f64, grad: &mut [f64]) {
        let mut color = end.color;
        let mut tau = tau_end;
        let mut g_t = g_t;
        let samples: Vec<Shaded> = self.samples(ray).collect();
        for s in samples.into_iter().rev() {
            tau -= s.depth;
            let t_prev = (-tau.max(0.0)).exp();
            for c in 0..3 {
                color[c] -= t_prev * s.color[c] * s.a;
            }
            let g_c: [f64; 3] = std::array::from_fn(|c| g_l[c] * t_prev * s.a);
            let lc: f64 = (0..3).map(|c| g_l[c] * s.color[c]).sum();
            let g_a = lc * t_prev - g_t * t_prev;
            let g_alpha = g_a * s.da;
            let base = 4 * s.j;
            for c in 0..3 {
                grad[base + c] += (1.0 - s.w) * g_c[c];
                grad[base + 4 + c] += s.w * g_c[c];
            }
            grad[base + 3] += (1.0 - s.w) * g_alpha;
            grad[base + 7] += s.w * g_alpha;
            g_t = lc * s.a + g_t * (1.0 - s.a);
        }
    }
}

fn render_scene(scene: &Scene, cam: &Camera) -> ImageRGBA {
    let (f, r, u) = cam.basis();
    let pixels = (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|py| {
            (0..cam.width).map(move |px| {
                let (state, _, _) = scene.forward_ray(cam.eye, cam.direction_in(f, r, u, px, py));
                resolve_pixel(state, scene.rc.background)
            })
        })
        .collect();
    ImageRGBA { width: cam.width, height: cam.height, pixels }
}

/// Forward render in differentiable mode.
pub fn forward(vol: &ScalarVolume, tf: &TransferFunction, cam: &Camera, rc: &RenderConfig) -> Result<ImageRGBA> {
    forward_linear(vol, &tf.to_linear(), cam, rc)
}

pub fn forward_linear(vol: &ScalarVolume, x: &[f64], cam: &Camera, rc: &RenderConfig) -> Result<ImageRGBA> {
    Ok(render_scene(&Scene::new(vol, x, rc)?, cam))
}

pub fn loss_and_grad(
    vol_o: &ScalarVolume,
    tf_o: &TransferFunction,
    target: &ImageRGBA,
    cam: &Camera,
    rc: &RenderConfig,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_linear(vol_o, &tf_o.to_linear(), target, cam, rc, kind)
}

/// Loss against `target` and its gradient with respect to the interleaved
/// table `x`. Entries are not required to lie in `[0, 1]`.
pub fn loss_and_grad_linear(
    vol_o: &ScalarVolume,
    x: &[f64],
    target: &ImageRGBA,
    cam: &Camera,
    rc: &RenderConfig,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if target.size() != (cam.width, cam.height) {
        return Err(Error::SizeMismatch { a: (cam.width, cam.height), b: target.size() });
    }
    let scene = Scene::new(vol_o, x, rc)?;
    let bg = scene.rc.background;
    let (f, r, u) = cam.basis();
    let norm = 1.0 / (4 * cam.width * cam.height) as f64;
    let rows: Vec<(f64, Vec<f64>)> = (0..cam.height)
        .into_par_iter()
        .map(|py| {
            let mut grad = vec![0.0; x.len()];
            let mut total = 0.0;
            for px in 0..cam.width {
                let dir = cam.direction_in(f, r, u, px, py);
                let (state, tau, ray) = scene.forward_ray(cam.eye, dir);
                let out = resolve_pixel(state, bg);
                let want = target.get(px, py);
                let mut g_out = [0.0; 4];
                for c in 0..4 {
                    let d = out[c] - want[c];
                    let (l, g) = match kind {
                        LossKind::L2 => (d * d, 2.0 * d),
                        LossKind::L1 => (d.abs(), if d == 0.0 { 0.0 } else { d.signum() }),
                    };
                    total += l;
                    g_out[c] = g * norm;
                }
                if let Some(ray) = ray {
                    // out = L + T bg_rgb, out_α = 1 − T (1 − bg_α)
                    let g_t = (0..3).map(|c| g_out[c] * bg[c]).sum::<f64>() - g_out[3] * (1.0 - bg[3]);
                    scene.backward_ray(&ray, state, tau, [g_out[0], g_out[1], g_out[2]], g_t, &mut grad);
                }
            }
            (total, grad)
        })
        .collect();
    let mut grad = vec![0.0; x.len()];
    let mut total = 0.0;
    for (l, g) in rows {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if !grad.iter().all(|v| v.is_finite()) || !total.is_finite() {
        return Err(Error::NonFinite("diffdvr gradient"));
    }
    Ok((total * norm, grad))
}

/// States after each sample of one ray (the first entry is the empty state),
/// as recorded by the forward pass.
pub fn ray_states(vol: &ScalarVolume, tf: &TransferFunction, origin: Vec3, dir: Vec3, rc: &RenderConfig) -> Result<Vec<CompositingState>> {
    let x = tf.to_linear();
    let scene = Scene::new(vol, &x, rc)?;
    let mut out = vec![CompositingState::default()];
    if let Some(ray) = RayMarch::new(vol, origin, dir, &scene.rc) {
        for s in scene.samples(&ray) {
            out.push(composite_step(*out.last().unwrap(), s.color, s.a));
        }
    }
    Ok(out)
}

/// The same states re-derived backwards from the final one by inverting each
/// blend, returned in forward order.
pub fn ray_states_inverted(vol: &ScalarVolume, tf: &TransferFunction, origin: Vec3, dir: Vec3, rc: &RenderConfig) -> Result<Vec<CompositingState>> {
    let x = tf.to_linear();
    let scene = Scene::new(vol, &x, rc)?;
    let (end, tau_end, ray) = scene.forward_ray(origin, dir);
    let mut out = vec![end];
    if let Some(ray) = ray {
        let mut state = end;
        let mut tau = tau_end;
        let samples: Vec<Shaded> = scene.samples(&ray).collect();
        for s in samples.into_iter().rev() {
            tau -= s.depth;
            let t_prev = (-tau.max(0.0)).exp();
            state = CompositingState {
                color: std::array::from_fn(|c| state.color[c] - t_prev * s.color[c] * s.a),
                alpha: 1.0 - t_prev,
            };
            out.push(state);
        }
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffOptConfig {
    pub iterations: usize,
    pub cameras_per_iter: usize,
    pub width: usize,
    pub height: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for DiffOptConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            cameras_per_iter: 8,
            width: 512,
            height: 512,
            lr: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            render: RenderConfig::differentiable(),
        }
    }
}

impl DiffOptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.iterations == 0 || self.cameras_per_iter == 0 {
            return bad("iterations and cameras_per_iter must be >= 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(self.lr > 0.0 && self.eps > 0.0) {
            return bad("lr and eps must be > 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        self.render.validate()
    }
}

/// Cameras drawn area-uniformly on a sphere around the origin.
pub struct CameraSampler {
    rng: ChaCha8Rng,
    distance: f64,
    fov_y: f64,
    width: usize,
    height: usize,
}

impl CameraSampler {
    /// The sphere radius is 1.5 times the larger bounding-sphere radius of the volumes.
    pub fn new(volumes: &[&ScalarVolume], width: usize, height: usize, seed: u64) -> Self {
        let (distance, fov_y) = volumes
            .iter()
            .map(|v| framing(v.extent()))
            .fold((0.0, 0.0), |acc, f| if f.0 > acc.0 { f } else { acc });
        Self { rng: ChaCha8Rng::seed_from_u64(seed), distance, fov_y, width, height }
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn sample(&mut self) -> Camera {
        let z: f64 = self.rng.random_range(-1.0..=1.0);
        let phi: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).max(0.0).sqrt();
        let eye = [self.distance * s * phi.cos(), self.distance * s * phi.sin(), self.distance * z];
        Camera::looking_from(eye, [0.0; 3], self.fov_y, self.width, self.height).expect("sampled camera is valid")
    }
}

/// Progress of an image-space optimization after one iteration.
pub struct DiffProgress<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub tf: &'a [f64],
}

pub fn optimize_diffdvr(
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    vol_o: &ScalarVolume,
    tf_init: &TransferFunction,
    cfg: &DiffOptConfig,
    kind: LossKind,
) -> Result<SolveReport> {
    optimize_diffdvr_with_progress(vol_r, tf_r, vol_o, tf_init, cfg, kind, |_| {})
}

/// Adam on the table entries with projection onto `[0, 1]`; each iteration
/// averages loss and gradient over freshly sampled cameras. Returns the table
/// with the lowest iteration loss together with the loss history.
pub fn optimize_diffdvr_with_progress(
    vol_r: &ScalarVolume,
    tf_r: &TransferFunction,
    vol_o: &ScalarVolume,
    tf_init: &TransferFunction,
    cfg: &DiffOptConfig,
    kind: LossKind,
    mut progress: impl FnMut(DiffProgress),
) -> Result<SolveReport> {
    cfg.validate()?;
    let rc = cfg.render.clone().into_differentiable();
    let mut sampler = CameraSampler::new(&[vol_r, vol_o], cfg.width, cfg.height, cfg.seed);
    let reference = tf_r.to_linear();
    let mut x = tf_init.to_linear();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::INFINITY, x.clone());

    for it in 1..=cfg.iterations {
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        for _ in 0..cfg.cameras_per_iter {
            let cam = sampler.sample();
            let target = forward_linear(vol_r, &reference, &cam, &rc)?;
            let (l, g) = loss_and_grad_linear(vol_o, &x, &target, &cam, &rc, kind)?;
            total += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.cameras_per_iter as f64;
        let l = total * scale;
        history.push(l);
        if l < best.0 {
            best = (l, x.clone());
        }
        let (c1, c2) = (1.0 - cfg.beta1.powi(it as i32), 1.0 - cfg.beta2.powi(it as i32));
        for i in 0..x.len() {
            let g = grad[i] * scale;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            x[i] = (x[i] - cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps)).clamp(0.0, 1.0);
        }
        progress(DiffProgress { iteration: it, loss: l, tf: &x });
    }

    Ok(SolveReport {
        solver: "diffdvr".to_string(),
        solution: TransferFunction::from_linear(&best.1)?,
        iterations: cfg.iterations,
        objective: best.0,
        residual_history: history,
        clamped: false,
        condition_estimate: None,
        converged: true,
        fell_back_from: None,
    })
}

/// `iteration,loss` lines with a header, iterations counted from one.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}
