use crate::assembly::GramSystem;

/// Number of eigenvalues of the symmetric tridiagonal `(d, e)` strictly below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = 1.0;
    for k in 0..d.len() {
        q = d[k] - x - if k > 0 { e[k - 1] * e[k - 1] / q } else { 0.0 };
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue by bisection.
pub(crate) fn eigenvalue(d: &[f64], e: &[f64], k: usize) -> f64 {
    let n = d.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let width = hi - lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 2.0 * f64::EPSILON * width.max(lo.abs().max(hi.abs())) || mid == lo || mid == hi {
            break;
        }
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The Gram matrix restricted to referenced bins, plus `ridge` on its diagonal.
/// Unreferenced bins carry no coupling, so dropping them leaves a tridiagonal matrix.
pub(crate) fn referenced_block(gs: &GramSystem, ridge: f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let idx: Vec<usize> = (0..gs.n_t()).filter(|&k| gs.diag[k] > 0.0).collect();
    let d = idx.iter().map(|&k| gs.diag[k] + ridge).collect();
    let e = idx.windows(2).map(|w| if w[1] == w[0] + 1 { gs.offdiag[w[0]] } else { 0.0 }).collect();
    (idx, d, e)
}

/// Extreme eigenvalues `(min, max)` of the referenced block.
pub(crate) fn extreme_eigenvalues(gs: &GramSystem, ridge: f64) -> (f64, f64) {
    let (_, d, e) = referenced_block(gs, ridge);
    (eigenvalue(&d, &e, 0), eigenvalue(&d, &e, d.len() - 1))
}

/// Spectral condition number of the Gram matrix over referenced bins.
/// Unreferenced bins are filled exactly by interpolation and do not affect
/// accuracy, so they are left out. Returns `f64::INFINITY` when singular.
pub fn condition_estimate(gs: &GramSystem) -> f64 {
    condition_estimate_with(gs, 0.0)
}

pub fn condition_estimate_with(gs: &GramSystem, ridge: f64) -> f64 {
    if gs.diag.iter().all(|&d| d == 0.0) {
        return f64::INFINITY;
    }
    let (lo, hi) = extreme_eigenvalues(gs, ridge);
    let n = gs.n_t() as f64;
    if lo <= n * f64::EPSILON * hi {
        f64::INFINITY
    } else {
        hi / lo
    }
}
