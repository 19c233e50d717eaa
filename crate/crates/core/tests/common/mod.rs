#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfopt::volcore::{ScalarVolume, TransferFunction};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(rng: &mut impl Rng, dims: [usize; 3]) -> ScalarVolume {
    ScalarVolume::from_fn(dims, [1.0; 3], |_, _, _| rng.random::<f64>()).unwrap()
}

pub fn random_tf(rng: &mut impl Rng, n: usize) -> TransferFunction {
    TransferFunction::new((0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect()).unwrap()
}

/// Min-max normalized density, written out independently of the library.
pub fn normalized(vol: &ScalarVolume, d: f64) -> f64 {
    let (lo, hi) = vol
        .data()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        ((d - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn tf_lookup(tf: &TransferFunction, d01: f64) -> [f64; 4] {
    let n = tf.len();
    let u = d01 * (n - 1) as f64;
    let j = (u.floor() as usize).min(n - 2);
    let w = u - j as f64;
    let e = tf.entries();
    std::array::from_fn(|c| (1.0 - w) * e[j][c] + w * e[j + 1][c])
}

/// Dense `A` and `b` for voxels present in both volumes.
pub fn dense_system(vol_o: &ScalarVolume, vol_r: &ScalarVolume, tf_r: &TransferFunction, n_t: usize) -> (DMatrix<f64>, DVector<f64>) {
    let ids: Vec<usize> = (0..vol_o.len()).filter(|&i| vol_o.data()[i].is_finite() && vol_r.data()[i].is_finite()).collect();
    let mut a = DMatrix::zeros(4 * ids.len(), 4 * n_t);
    let mut b = DVector::zeros(4 * ids.len());
    for (r, &i) in ids.iter().enumerate() {
        let u = normalized(vol_o, vol_o.data()[i]) * (n_t - 1) as f64;
        let j = (u.floor() as usize).min(n_t - 2);
        let w = u - j as f64;
        let target = tf_lookup(tf_r, normalized(vol_r, vol_r.data()[i]));
        for ch in 0..4 {
            a[(4 * r + ch, 4 * j + ch)] += 1.0 - w;
            a[(4 * r + ch, 4 * (j + 1) + ch)] += w;
            b[4 * r + ch] = target[ch];
        }
    }
    (a, b)
}

/// Minimum-norm least squares by SVD, then clamped to the box.
pub fn dense_lstsq_clamped(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let x = a.clone().svd(true, true).solve(b, 1e-12).unwrap();
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

pub fn oracle(vol_o: &ScalarVolume, vol_r: &ScalarVolume, tf_r: &TransferFunction, n_t: usize) -> Vec<f64> {
    let (a, b) = dense_system(vol_o, vol_r, tf_r, n_t);
    dense_lstsq_clamped(&a, &b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Ramp pair along x: the reference increases, the other decreases.
pub fn ramp_pair(n: usize) -> (ScalarVolume, ScalarVolume) {
    let up = ScalarVolume::from_fn([n, n, n], [1.0; 3], |x, _, _| x as f64).unwrap();
    let down = ScalarVolume::from_fn([n, n, n], [1.0; 3], |x, _, _| (n - 1 - x) as f64).unwrap();
    (up, down)
}
