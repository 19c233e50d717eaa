use crate::{Error, Result};

/// A regular 3D grid of densities, x-fastest.
///
/// Non-finite samples are treated as missing values: they are excluded from
/// the value range, histograms and assembly, and render transparent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
    vmin: f64,
    vmax: f64,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: data.len() });
        }
        let (vmin, vmax) = data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !vmin.is_finite() {
            return Err(Error::InvalidVolume("every voxel is missing".into()));
        }
        Ok(Self { dims, spacing, data, vmin, vmax })
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vmin(&self) -> f64 {
        self.vmin
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    /// World-space size of the grid; voxels are cell-centered.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn is_missing(&self, i: usize) -> bool {
        !self.data[i].is_finite()
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        self.data.iter().map(|v| !v.is_finite()).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn is_degenerate(&self) -> bool {
        self.vmin == self.vmax
    }

    /// Linear map of `value` from `[vmin, vmax]` to `[0, 1]`, clamped.
    pub fn normalize(&self, value: f64) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::DegenerateRange);
        }
        Ok(((value - self.vmin) / (self.vmax - self.vmin)).clamp(0.0, 1.0))
    }

    /// Normalization map with the degenerate-range rule folded in.
    pub fn normalizer(&self) -> Normalizer {
        Normalizer::new(self.vmin, self.vmax)
    }
}

/// Maps raw densities to `[0, 1]`. A degenerate range maps everything to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    vmin: f64,
    scale: f64,
}

impl Normalizer {
    pub fn new(vmin: f64, vmax: f64) -> Self {
        let scale = if vmax > vmin { 1.0 / (vmax - vmin) } else { 0.0 };
        Self { vmin, scale }
    }

    /// Identity on `[0, 1]`, used for fields that are already normalized.
    pub fn unit() -> Self {
        Self { vmin: 0.0, scale: 1.0 }
    }

    #[inline]
    pub fn map(&self, value: f64) -> f64 {
        ((value - self.vmin) * self.scale).clamp(0.0, 1.0)
    }
}
