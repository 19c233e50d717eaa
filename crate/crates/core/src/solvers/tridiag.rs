use crate::{Error, Result};

/// General (not necessarily symmetric) tridiagonal matrix.
/// `lower[k]` couples row `k` to `k - 1` and `upper[k]` couples it to `k + 1`;
/// `lower[0]` and `upper[n - 1]` are ignored.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Thomas factorization, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct TridiagFactor {
    lower: Vec<f64>,
    pivots: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn symmetric(diag: Vec<f64>, off: &[f64]) -> Self {
        let n = diag.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..n.saturating_sub(1) {
            upper[k] = off[k];
            lower[k + 1] = off[k];
        }
        Self { lower, diag, upper }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut s = self.diag[k] * x[k];
                if k > 0 {
                    s += self.lower[k] * x[k - 1];
                }
                if k + 1 < n {
                    s += self.upper[k] * x[k + 1];
                }
                s
            })
            .collect()
    }

    /// Fails with `SingularSystem` when a pivot vanishes relative to its row's diagonal.
    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.len();
        let mut pivots = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        for k in 0..n {
            let mut p = self.diag[k];
            if k > 0 {
                p -= self.lower[k] * upper_scaled[k - 1];
            }
            let scale = self.diag[k].abs().max(if k > 0 { self.lower[k].abs() } else { 0.0 });
            if !p.is_finite() || p.abs() <= 64.0 * f64::EPSILON * scale || scale == 0.0 {
                return Err(Error::SingularSystem { row: k });
            }
            pivots[k] = p;
            upper_scaled[k] = if k + 1 < n { self.upper[k] / p } else { 0.0 };
        }
        Ok(TridiagFactor { lower: self.lower.clone(), pivots, upper_scaled })
    }
}

impl TridiagFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let mut y = vec![0.0; n];
        for k in 0..n {
            let carry = if k > 0 { self.lower[k] * y[k - 1] } else { 0.0 };
            y[k] = (rhs[k] - carry) / self.pivots[k];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            y[k] -= self.upper_scaled[k] * y[k + 1];
        }
        y
    }
}
