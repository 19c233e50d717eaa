use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalized(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera. Rays pass through pixel centers; pixel `(0, 0)` is the top-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(eye: Vec3, look_at: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return bad("fov_y must lie in (0, pi)");
        }
        if width == 0 || height == 0 {
            return bad("image size must be at least 1x1");
        }
        if eye.iter().chain(&look_at).chain(&up).any(|v| !v.is_finite()) {
            return bad("camera vectors must be finite");
        }
        let f = sub(look_at, eye);
        if dot(f, f) == 0.0 {
            return bad("eye and look_at coincide");
        }
        let side = cross(f, up);
        if dot(side, side) <= 1e-24 * dot(f, f) * dot(up, up) {
            return bad("up is parallel to the view direction");
        }
        Ok(Self { eye, look_at, up, fov_y, width, height })
    }

    /// Orbit around `target`: azimuth in the xy-plane from +x, elevation towards +z.
    pub fn orbit(azimuth: f64, elevation: f64, distance: f64, target: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        if !(distance > 0.0) {
            return Err(Error::InvalidConfig("distance must be > 0".to_string()));
        }
        let dir = [elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()];
        Self::looking_from(add_scaled(target, dir, distance), target, fov_y, width, height)
    }

    /// Camera at `eye` looking at `target`, with `+z` up unless that is degenerate.
    pub fn looking_from(eye: Vec3, target: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let f = normalized(sub(target, eye));
        let up = if f[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        Self::new(eye, target, up, fov_y, width, height)
    }

    pub fn with_size(&self, width: usize, height: usize) -> Self {
        Self { width, height, ..self.clone() }
    }

    /// Orthonormal `(forward, right, up)`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = normalized(sub(self.look_at, self.eye));
        let r = normalized(cross(f, self.up));
        (f, r, cross(r, f))
    }

    /// Unit direction through the center of pixel `(px, py)`.
    pub fn ray_direction(&self, px: usize, py: usize) -> Vec3 {
        let (f, r, u) = self.basis();
        self.direction_in(f, r, u, px, py)
    }

    pub(crate) fn direction_in(&self, f: Vec3, r: Vec3, u: Vec3, px: usize, py: usize) -> Vec3 {
        let half = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * half * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * half;
        normalized(add_scaled(add_scaled(f, r, sx), u, sy))
    }
}

/// Distance and field of view that frame a volume of the given extent.
/// The camera sits at 1.5 times the bounding-sphere radius and the view cone
/// just contains the sphere.
pub fn framing(extent: Vec3) -> (f64, f64) {
    let radius = 0.5 * dot(extent, extent).sqrt();
    let distance = 1.5 * radius;
    (distance, 2.0 * (radius / distance).asin())
}

/// Serializable camera description, resolved against a volume extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraSpec {
    Orbit {
        azimuth: f64,
        elevation: f64,
        /// Defaults to the framing distance of the volume.
        #[serde(default)]
        distance: Option<f64>,
        #[serde(default)]
        fov_y: Option<f64>,
        width: usize,
        height: usize,
    },
    Explicit {
        eye: Vec3,
        look_at: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    },
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self::Orbit { azimuth: 0.6, elevation: 0.4, distance: None, fov_y: None, width: 512, height: 512 }
    }
}

impl CameraSpec {
    pub fn resolve(&self, extent: Vec3) -> Result<Camera> {
        match *self {
            Self::Orbit { azimuth, elevation, distance, fov_y, width, height } => {
                let (d, fov) = framing(extent);
                Camera::orbit(azimuth, elevation, distance.unwrap_or(d), [0.0; 3], fov_y.unwrap_or(fov), width, height)
            }
            Self::Explicit { eye, look_at, up, fov_y, width, height } => Camera::new(eye, look_at, up, fov_y, width, height),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        match *self {
            Self::Orbit { width, height, .. } | Self::Explicit { width, height, .. } => (width, height),
        }
    }

    pub fn with_size(&self, w: usize, h: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Orbit { width, height, .. } | Self::Explicit { width, height, .. } => {
                *width = w;
                *height = h;
            }
        }
        out
    }
}
