//! The linear map from transfer function entries to pre-shaded voxel colors.
//!
//! Voxel `i` with bin coordinate `(j, w)` has color
//! `(1 - w) T[j] + w T[j + 1]`, one row per RGBA channel. TF-space vectors use
//! the interleaved layout `4 * entry + channel`; voxel-color vectors use
//! `4 * row + channel` over the voxels retained by a [`BinnedVoxels`].
//!
//! Channels never mix, so `AᵀA` is stored as one tridiagonal `n_t × n_t`
//! matrix shared by all four channels ([`GramSystem`]).

use serde::{Deserialize, Serialize};

use crate::par::{add_into, chunked_fold, chunked_range_fold, CHUNK};
use crate::volcore::{quantize, BinCoordinate, ScalarVolume, TransferFunction};
use crate::{Error, Result};
use rayon::prelude::*;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (r, &yr) in y.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        out
    }
}

/// Bin coordinates of the voxels that take part in a system.
#[derive(Debug, Clone)]
pub struct BinnedVoxels {
    n_t: usize,
    voxels: Vec<usize>,
    bins: Vec<BinCoordinate>,
}

fn check_n_t(n_t: usize) -> Result<()> {
    if n_t < 2 {
        return Err(Error::InvalidConfig(format!("n_t must be >= 2, got {n_t}")));
    }
    Ok(())
}

impl BinnedVoxels {
    /// Every non-missing voxel of `vol_o`.
    pub fn new(vol_o: &ScalarVolume, n_t: usize) -> Result<Self> {
        Self::build(vol_o, None, n_t)
    }

    /// Voxels present in both volumes.
    pub fn paired(vol_o: &ScalarVolume, vol_r: &ScalarVolume, n_t: usize) -> Result<Self> {
        Self::build(vol_o, Some(vol_r), n_t)
    }

    fn build(vol_o: &ScalarVolume, vol_r: Option<&ScalarVolume>, n_t: usize) -> Result<Self> {
        check_n_t(n_t)?;
        if let Some(r) = vol_r {
            if r.dims() != vol_o.dims() {
                return Err(Error::DimsMismatch { expected: vol_o.dims(), got: r.dims() });
            }
        }
        let norm = vol_o.normalizer();
        let voxels: Vec<usize> = (0..vol_o.len())
            .filter(|&i| !vol_o.is_missing(i) && vol_r.is_none_or(|r| !r.is_missing(i)))
            .collect();
        if voxels.is_empty() {
            return Err(Error::EmptySystem);
        }
        let bins = voxels.iter().map(|&i| quantize(norm.map(vol_o.data()[i]), n_t)).collect();
        Ok(Self { n_t, voxels, bins })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Number of voxels, i.e. `m_V`; the matrix has `4 * rows()` rows.
    pub fn rows(&self) -> usize {
        self.voxels.len()
    }

    pub fn cols(&self) -> usize {
        4 * self.n_t
    }

    pub fn voxel_ids(&self) -> &[usize] {
        &self.voxels
    }

    pub fn bins(&self) -> &[BinCoordinate] {
        &self.bins
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let n_rows = 4 * self.rows();
        let mut col_indices = Vec::with_capacity(2 * n_rows);
        let mut values = Vec::with_capacity(2 * n_rows);
        for b in &self.bins {
            for ch in 0..4 {
                col_indices.extend([4 * b.j + ch, 4 * (b.j + 1) + ch]);
                values.extend([1.0 - b.w, b.w]);
            }
        }
        CsrMatrix { n_rows, n_cols: self.cols(), row_offsets: (0..=n_rows).map(|r| 2 * r).collect(), col_indices, values }
    }

    /// `A x` without forming `A`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::LengthMismatch { expected: self.cols(), got: x.len() });
        }
        let mut out = vec![0.0; 4 * self.rows()];
        out.par_chunks_mut(4 * CHUNK).zip(self.bins.par_chunks(CHUNK)).for_each(|(o, bins)| {
            for (v, b) in o.chunks_exact_mut(4).zip(bins) {
                let lo = &x[4 * b.j..4 * b.j + 4];
                let hi = &x[4 * b.j + 4..4 * b.j + 8];
                for ch in 0..4 {
                    v[ch] = (1.0 - b.w) * lo[ch] + b.w * hi[ch];
                }
            }
        });
        Ok(out)
    }

    /// `Aᵀ v` without forming `A`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != 4 * self.rows() {
            return Err(Error::LengthMismatch { expected: 4 * self.rows(), got: v.len() });
        }
        let cols = self.cols();
        Ok(chunked_fold(
            &self.bins,
            CHUNK,
            || vec![0.0; cols],
            |acc, r, b| {
                for ch in 0..4 {
                    let vr = v[4 * r + ch];
                    acc[4 * b.j + ch] += (1.0 - b.w) * vr;
                    acc[4 * b.j + 4 + ch] += b.w * vr;
                }
            },
            |a, b| add_into(a, &b),
        ))
    }

    /// Squared column norms of `A`, one per entry (identical across channels).
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let n_t = self.n_t;
        chunked_fold(
            &self.bins,
            CHUNK,
            || vec![0.0; n_t],
            |acc, _, b| {
                acc[b.j] += (1.0 - b.w) * (1.0 - b.w);
                acc[b.j + 1] += b.w * b.w;
            },
            |a, b| add_into(a, &b),
        )
    }

    /// Pre-shaded colors of `vol_r` under `tf_r` at the retained voxels: the right-hand side `b`.
    pub fn reference_colors(&self, vol_r: &ScalarVolume, tf_r: &TransferFunction) -> Vec<f64> {
        let norm = vol_r.normalizer();
        self.voxels.iter().flat_map(|&i| tf_r.eval(norm.map(vol_r.data()[i]))).collect()
    }
}

pub fn build_csr(vol_o: &ScalarVolume, n_t: usize) -> Result<CsrMatrix> {
    Ok(BinnedVoxels::new(vol_o, n_t)?.to_csr())
}

pub fn apply_a(vol_o: &ScalarVolume, n_t: usize, x: &[f64]) -> Result<Vec<f64>> {
    BinnedVoxels::new(vol_o, n_t)?.apply(x)
}

pub fn apply_at(vol_o: &ScalarVolume, n_t: usize, v: &[f64]) -> Result<Vec<f64>> {
    BinnedVoxels::new(vol_o, n_t)?.apply_transpose(v)
}

/// A least squares instance `min ‖b − A x‖` in matrix-free form.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    pub system: BinnedVoxels,
    pub target: Vec<f64>,
}

impl LeastSquaresProblem {
    pub fn new(vol_o: &ScalarVolume, vol_r: &ScalarVolume, tf_r: &TransferFunction, n_t: usize) -> Result<Self> {
        let system = BinnedVoxels::paired(vol_o, vol_r, n_t)?;
        let target = system.reference_colors(vol_r, tf_r);
        Ok(Self { system, target })
    }

    pub fn n_t(&self) -> usize {
        self.system.n_t()
    }

    /// `b − A x`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.system.apply(x)?;
        for (ri, bi) in r.iter_mut().zip(&self.target) {
            *ri = bi - *ri;
        }
        Ok(r)
    }

    /// `‖b − A x‖²`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residual(x)?.iter().map(|r| r * r).sum())
    }

    pub fn objective_l1(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residual(x)?.iter().map(|r| r.abs()).sum())
    }
}

/// Normal equations `AᵀA x = Aᵀb`, per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSystem {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    /// `Aᵀb` for R, G, B, α, each of length `n_t`.
    pub rhs: [Vec<f64>; 4],
    /// `bᵀb` per channel, so objectives can be evaluated from the Gram form.
    pub b_sq: [f64; 4],
    pub voxel_count_used: usize,
}

#[derive(Clone)]
struct GramAcc {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
    rhs: [Vec<f64>; 4],
    b_sq: [f64; 4],
    count: usize,
}

impl GramAcc {
    fn new(n_t: usize) -> Self {
        Self {
            diag: vec![0.0; n_t],
            offdiag: vec![0.0; n_t - 1],
            rhs: std::array::from_fn(|_| vec![0.0; n_t]),
            b_sq: [0.0; 4],
            count: 0,
        }
    }

    fn merge(&mut self, o: GramAcc) {
        add_into(&mut self.diag, &o.diag);
        add_into(&mut self.offdiag, &o.offdiag);
        for ch in 0..4 {
            add_into(&mut self.rhs[ch], &o.rhs[ch]);
            self.b_sq[ch] += o.b_sq[ch];
        }
        self.count += o.count;
    }
}

/// Accumulates the tridiagonal Gram matrix and right-hand sides in one pass
/// over the voxels, without building `A`.
pub fn assemble_gram(vol_o: &ScalarVolume, vol_r: &ScalarVolume, tf_r: &TransferFunction, n_t: usize) -> Result<GramSystem> {
    check_n_t(n_t)?;
    if vol_o.dims() != vol_r.dims() {
        return Err(Error::DimsMismatch { expected: vol_o.dims(), got: vol_r.dims() });
    }
    let (norm_o, norm_r) = (vol_o.normalizer(), vol_r.normalizer());
    let (data_o, data_r) = (vol_o.data(), vol_r.data());
    let acc = chunked_range_fold(
        data_o.len(),
        CHUNK,
        || GramAcc::new(n_t),
        |acc, i| {
            let (d_o, d_r) = (data_o[i], data_r[i]);
            if !(d_o.is_finite() && d_r.is_finite()) {
                return;
            }
            let BinCoordinate { j, w } = quantize(norm_o.map(d_o), n_t);
            let b = tf_r.eval(norm_r.map(d_r));
            acc.diag[j] += (1.0 - w) * (1.0 - w);
            acc.diag[j + 1] += w * w;
            acc.offdiag[j] += (1.0 - w) * w;
            for ch in 0..4 {
                acc.rhs[ch][j] += (1.0 - w) * b[ch];
                acc.rhs[ch][j + 1] += w * b[ch];
                acc.b_sq[ch] += b[ch] * b[ch];
            }
            acc.count += 1;
        },
        GramAcc::merge,
    );
    if acc.count == 0 {
        return Err(Error::EmptySystem);
    }
    Ok(GramSystem { diag: acc.diag, offdiag: acc.offdiag, rhs: acc.rhs, b_sq: acc.b_sq, voxel_count_used: acc.count })
}

impl GramSystem {
    pub fn n_t(&self) -> usize {
        self.diag.len()
    }

    /// `sum(diag) + 2 sum(offdiag)`; equals the voxel count since every row of `A` sums to one.
    pub fn mass(&self) -> f64 {
        self.diag.iter().sum::<f64>() + 2.0 * self.offdiag.iter().sum::<f64>()
    }

    /// Bins no voxel touches.
    pub fn empty_bins(&self) -> Vec<bool> {
        self.diag.iter().map(|&d| d == 0.0).collect()
    }

    /// `G z` for one channel.
    pub fn matvec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n_t();
        (0..n)
            .map(|k| {
                let mut s = self.diag[k] * z[k];
                if k > 0 {
                    s += self.offdiag[k - 1] * z[k - 1];
                }
                if k + 1 < n {
                    s += self.offdiag[k] * z[k + 1];
                }
                s
            })
            .collect()
    }

    /// `‖b − A x‖² = bᵀb − 2xᵀAᵀb + xᵀGx` for an interleaved TF-space `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n_t();
        let mut total = 0.0;
        for ch in 0..4 {
            let xc: Vec<f64> = (0..n).map(|k| x[4 * k + ch]).collect();
            let gx = self.matvec(&xc);
            let quad: f64 = xc.iter().zip(&gx).map(|(a, b)| a * b).sum();
            let lin: f64 = xc.iter().zip(&self.rhs[ch]).map(|(a, b)| a * b).sum();
            total += self.b_sq[ch] - 2.0 * lin + quad;
        }
        total.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut impl Rng, dims: [usize; 3]) -> ScalarVolume {
        ScalarVolume::from_fn(dims, [1.0; 3], |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn random_tf(rng: &mut impl Rng, n: usize) -> TransferFunction {
        TransferFunction::new((0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect()).unwrap()
    }

    /// Dense reference matrix built from the defining formula.
    fn dense_a(vol: &ScalarVolume, n_t: usize) -> Vec<Vec<f64>> {
        let norm = vol.normalizer();
        let mut rows = Vec::new();
        for &d in vol.data().iter().filter(|d| d.is_finite()) {
            let u = norm.map(d) * (n_t - 1) as f64;
            let j = (u.floor() as usize).min(n_t - 2);
            let w = u - j as f64;
            for ch in 0..4 {
                let mut row = vec![0.0; 4 * n_t];
                row[4 * j + ch] = 1.0 - w;
                row[4 * (j + 1) + ch] += w;
                rows.push(row);
            }
        }
        rows
    }

    #[test]
    fn single_voxel_gram() {
        // d01 = 2/4 with n_t = 5 lands exactly on entry 2
        let vol_o = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![0.0, 0.5, 1.0]).unwrap();
        let vol_r = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![f64::NAN, 1.0, f64::NAN]).unwrap();
        let tf_r = TransferFunction::new(vec![[1.0, 0.0, 0.0, 1.0]; 2]).unwrap();
        let g = assemble_gram(&vol_o, &vol_r, &tf_r, 5).unwrap();
        assert_eq!(g.voxel_count_used, 1);
        assert_eq!(g.diag, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.offdiag, vec![0.0; 4]);
        assert_eq!(g.rhs[0], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.rhs[3], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.rhs[1], vec![0.0; 5]);
        assert_eq!(g.rhs[2], vec![0.0; 5]);
    }

    #[test]
    fn constant_volume_hits_bin_zero() {
        let vol = ScalarVolume::new([4, 2, 1], [1.0; 3], vec![2.0; 8]).unwrap();
        let tf = TransferFunction::ramp(4, 1.0).unwrap();
        let g = assemble_gram(&vol, &vol, &tf, 4).unwrap();
        assert_eq!(g.diag, vec![8.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.offdiag, vec![0.0; 3]);
    }

    #[test]
    fn gram_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n_t = 8;
        let vol_o = random_volume(&mut rng, [8, 8, 8]);
        let vol_r = random_volume(&mut rng, [8, 8, 8]);
        let tf_r = random_tf(&mut rng, 6);
        let g = assemble_gram(&vol_o, &vol_r, &tf_r, n_t).unwrap();
        let csr = build_csr(&vol_o, n_t).unwrap();
        let b: Vec<f64> = vol_r.data().iter().flat_map(|&d| tf_r.eval(vol_r.normalize(d).unwrap())).collect();
        // dense AᵀA and Aᵀb from the CSR rows
        let n = 4 * n_t;
        let mut ata = vec![vec![0.0; n]; n];
        let mut atb = vec![0.0; n];
        for r in 0..csr.n_rows {
            let row: Vec<(usize, f64)> = csr.row(r).collect();
            for &(c1, v1) in &row {
                atb[c1] += v1 * b[r];
                for &(c2, v2) in &row {
                    ata[c1][c2] += v1 * v2;
                }
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
        for ch in 0..4 {
            for k in 0..n_t {
                assert!(close(g.diag[k], ata[4 * k + ch][4 * k + ch]));
                assert!(close(g.rhs[ch][k], atb[4 * k + ch]));
                if k + 1 < n_t {
                    assert!(close(g.offdiag[k], ata[4 * k + ch][4 * (k + 1) + ch]));
                    assert!(close(g.offdiag[k], ata[4 * (k + 1) + ch][4 * k + ch]));
                }
            }
        }
        // nothing outside the per-channel tridiagonal band
        for c1 in 0..n {
            for c2 in 0..n {
                let same_channel = c1 % 4 == c2 % 4;
                let near = (c1 / 4).abs_diff(c2 / 4) <= 1;
                if !(same_channel && near) {
                    assert_eq!(ata[c1][c2], 0.0);
                }
            }
        }
    }

    #[test]
    fn csr_layout() {
        let vol = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![0.0, 0.5, 1.0]).unwrap();
        let csr = build_csr(&vol, 2).unwrap();
        assert_eq!(csr.n_rows, 12);
        assert_eq!(csr.row_offsets[0], 0);
        assert_eq!(*csr.row_offsets.last().unwrap(), csr.nnz());
        // middle voxel: w = 0.5 on columns (ch, 4 + ch)
        for ch in 0..4 {
            assert_eq!(csr.row(4 + ch).collect::<Vec<_>>(), vec![(ch, 0.5), (4 + ch, 0.5)]);
            // first voxel has w = 0
            assert_eq!(csr.row(ch).collect::<Vec<_>>(), vec![(ch, 1.0), (4 + ch, 0.0)]);
        }
        let empty = ScalarVolume::new([2, 1, 1], [1.0; 3], vec![f64::NAN, 1.0]).unwrap();
        assert_eq!(build_csr(&empty, 4).unwrap().n_rows, 4);
    }

    #[test]
    fn csr_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vol = random_volume(&mut rng, [4, 4, 4]);
        let csr = build_csr(&vol, 9).unwrap();
        for s in csr.matvec(&vec![1.0; csr.n_cols]) {
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(csr, dense_csr(&vol, 9));
    }

    fn dense_csr(vol: &ScalarVolume, n_t: usize) -> CsrMatrix {
        let a = dense_a(vol, n_t);
        let mut m = CsrMatrix { n_rows: a.len(), n_cols: 4 * n_t, row_offsets: vec![0], col_indices: vec![], values: vec![] };
        for row in a {
            let nz: Vec<usize> = (0..row.len()).filter(|&c| row[c] != 0.0).collect();
            // keep structural zeros of w = 0 so the layout matches exactly
            let (c0, c1) = match nz.as_slice() {
                [c0, c1] => (*c0, *c1),
                [c0] if row.len() > c0 + 4 => (*c0, c0 + 4),
                [c0] => (c0 - 4, *c0),
                _ => unreachable!(),
            };
            m.col_indices.extend([c0, c1]);
            m.values.extend([row[c0], row[c1]]);
            m.row_offsets.push(m.values.len());
        }
        m
    }

    #[test]
    fn apply_matches_tf_eval_and_zero_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vol = random_volume(&mut rng, [5, 3, 2]);
        let tf = random_tf(&mut rng, 7);
        let colors = apply_a(&vol, 7, &tf.to_linear()).unwrap();
        for (i, &d) in vol.data().iter().enumerate() {
            let want = tf.eval(vol.normalize(d).unwrap());
            for ch in 0..4 {
                assert!((colors[4 * i + ch] - want[ch]).abs() < 1e-15);
            }
        }
        assert_eq!(apply_at(&vol, 7, &vec![0.0; 4 * vol.len()]).unwrap(), vec![0.0; 28]);
        assert!(apply_a(&vol, 7, &[0.0; 3]).is_err());
        assert!(apply_at(&vol, 7, &[0.0; 3]).is_err());
    }

    #[test]
    fn adjoint_identity_against_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vol = random_volume(&mut rng, [8, 8, 8]);
        let sys = BinnedVoxels::new(&vol, 8).unwrap();
        let a = dense_a(&vol, 8);
        for _ in 0..10 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..4 * 512).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax = sys.apply(&x).unwrap();
            let atv = sys.apply_transpose(&v).unwrap();
            let dense_ax: Vec<f64> = a.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
            for (p, q) in ax.iter().zip(&dense_ax) {
                assert!((p - q).abs() < 1e-12);
            }
            let lhs: f64 = ax.iter().zip(&v).map(|(p, q)| p * q).sum();
            let rhs: f64 = x.iter().zip(&atv).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn gram_equals_composed_operator_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vol_o = random_volume(&mut rng, [6, 6, 6]);
        let vol_r = random_volume(&mut rng, [6, 6, 6]);
        let tf = random_tf(&mut rng, 5);
        let n_t = 6;
        let g = assemble_gram(&vol_o, &vol_r, &tf, n_t).unwrap();
        let sys = BinnedVoxels::paired(&vol_o, &vol_r, n_t).unwrap();
        for k in 0..4 * n_t {
            let mut e = vec![0.0; 4 * n_t];
            e[k] = 1.0;
            let col = sys.apply_transpose(&sys.apply(&e).unwrap()).unwrap();
            let mut unit = vec![0.0; n_t];
            unit[k / 4] = 1.0;
            let gcol = g.matvec(&unit);
            for m in 0..4 * n_t {
                let want = if m % 4 == k % 4 { gcol[m / 4] } else { 0.0 };
                assert!((col[m] - want).abs() < 1e-10);
            }
        }
        // Aᵀb through the operator matches every channel of rhs
        let p = LeastSquaresProblem::new(&vol_o, &vol_r, &tf, n_t).unwrap();
        let atb = p.system.apply_transpose(&p.target).unwrap();
        for ch in 0..4 {
            for k in 0..n_t {
                assert!((atb[4 * k + ch] - g.rhs[ch][k]).abs() < 1e-10);
            }
        }
        assert_eq!(sys.column_norms_sq().iter().zip(&g.diag).filter(|(a, b)| (*a - *b).abs() > 1e-10).count(), 0);
        for _ in 0..50 {
            let z: Vec<f64> = (0..n_t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = z.iter().zip(g.matvec(&z)).map(|(a, b)| a * b).sum();
            assert!(q >= 0.0);
        }
        assert!((g.mass() - g.voxel_count_used as f64).abs() <= 1e-9 * g.voxel_count_used as f64);
        let x: Vec<f64> = (0..4 * n_t).map(|_| rng.random::<f64>()).collect();
        assert!((g.objective(&x) - p.objective(&x).unwrap()).abs() < 1e-9 * p.objective(&x).unwrap());
    }

    #[test]
    fn missing_and_mismatched_inputs() {
        let a = ScalarVolume::new([2, 1, 1], [1.0; 3], vec![0.0, 1.0]).unwrap();
        let b = ScalarVolume::new([3, 1, 1], [1.0; 3], vec![0.0, 1.0, 2.0]).unwrap();
        let tf = TransferFunction::ramp(2, 1.0).unwrap();
        assert!(matches!(assemble_gram(&a, &b, &tf, 4), Err(Error::DimsMismatch { .. })));
        assert!(matches!(LeastSquaresProblem::new(&a, &b, &tf, 4), Err(Error::DimsMismatch { .. })));
        let c = ScalarVolume::new([2, 1, 1], [1.0; 3], vec![f64::NAN, 1.0]).unwrap();
        let d = ScalarVolume::new([2, 1, 1], [1.0; 3], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(assemble_gram(&c, &d, &tf, 4), Err(Error::EmptySystem)));
        assert!(matches!(BinnedVoxels::paired(&c, &d, 4), Err(Error::EmptySystem)));
        assert!(assemble_gram(&a, &a, &tf, 1).is_err());
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vol_o = random_volume(&mut rng, [24, 24, 24]);
        let vol_r = random_volume(&mut rng, [24, 24, 24]);
        let tf = random_tf(&mut rng, 16);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let g = assemble_gram(&vol_o, &vol_r, &tf, 32).unwrap();
                let p = LeastSquaresProblem::new(&vol_o, &vol_r, &tf, 32).unwrap();
                (g, p.system.apply_transpose(&p.target).unwrap())
            })
        };
        assert_eq!(run(1), run(3));
    }
}
