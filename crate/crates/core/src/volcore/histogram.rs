use serde::{Deserialize, Serialize};

use super::ScalarVolume;
use crate::par::{chunked_fold, CHUNK};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram of the non-missing voxels over `[vmin, vmax]`.
///
/// The top edge is inclusive. A constant volume puts every voxel in bin 0.
pub fn histogram(vol: &ScalarVolume, n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let (lo, hi) = (vol.vmin(), vol.vmax());
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|k| if k == n_bins { hi } else { lo + k as f64 * width }).collect();
    let norm = vol.normalizer();
    let counts = chunked_fold(
        vol.data(),
        CHUNK,
        || vec![0u64; n_bins],
        |acc, _, &v| {
            if v.is_finite() {
                let b = ((norm.map(v) * n_bins as f64) as usize).min(n_bins - 1);
                acc[b] += 1;
            }
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    );
    Ok(Histogram { edges, counts })
}
