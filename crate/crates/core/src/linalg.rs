//! Dense linear-algebra helpers shared by the model fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{HfaError, Result};

/// Singular-value cutoff: `max(rows, cols) * eps * s_max`.
pub fn rank_tolerance(rows: usize, cols: usize, s_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * s_max
}

/// Thin decomposition `(U, s, V)` with singular values in decreasing order.
///
/// Delegates to faer: nalgebra's SVD loses accuracy on rank-deficient tall
/// matrices such as schedule designs.
fn thin_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        let k = rows.min(cols);
        return Ok((DMatrix::zeros(rows, k), DVector::zeros(k), DMatrix::zeros(cols, k)));
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| HfaError::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = s.nrows();
    Ok((
        DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        DVector::from_fn(k, |i, _| s[i]),
        DMatrix::from_fn(cols, k, |i, j| v[(i, j)]),
    ))
}

/// Singular value decomposition truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// Left singular vectors, `rows x rank`.
    pub u: DMatrix<f64>,
    /// Retained singular values.
    pub s: DVector<f64>,
    /// Right singular vectors, `cols x rank`.
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        let (u_full, sv, v_full) = thin_svd(m)?;
        let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
        let tol = rank_tolerance(rows, cols, s_max);
        let keep: Vec<usize> = (0..sv.len())
            .filter(|&k| s_max > 0.0 && sv[k] > tol)
            .collect();
        let r = keep.len();
        let mut u = DMatrix::zeros(rows, r);
        let mut v = DMatrix::zeros(cols, r);
        let mut s = DVector::zeros(r);
        for (j, &k) in keep.iter().enumerate() {
            u.set_column(j, &u_full.column(k));
            v.set_column(j, &v_full.column(k));
            s[j] = sv[k];
        }
        Ok(Self { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `M⁺ = V S⁻¹ U'`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (j, mut col) in vs.column_iter_mut().enumerate() {
            col /= self.s[j];
        }
        vs * self.u.transpose()
    }

    /// `(M'M)⁺ = V S⁻² V'`.
    pub fn gram_pseudo_inverse(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (j, mut col) in vs.column_iter_mut().enumerate() {
            col /= self.s[j] * self.s[j];
        }
        vs * self.v.transpose()
    }

    /// Residual of projecting `c'` onto the row space of `M`:
    /// `max |c'M⁺M − c'|`.
    pub fn row_space_defect(&self, c: &DVector<f64>) -> f64 {
        let coords = self.v.transpose() * c;
        let proj = &self.v * coords;
        (proj - c).amax()
    }
}

fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    match thin_svd(m) {
        Ok((_, s, _)) => s,
        Err(_) => m.clone().singular_values(),
    }
}

/// Numerical rank under the [`rank_tolerance`] policy.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let (rows, cols) = m.shape();
    let sv = singular_values(m);
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if s_max == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(rows, cols, s_max);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Smallest over largest singular value; `0` for a zero matrix.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if s_max > 0.0 {
        s_min / s_max
    } else {
        0.0
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| HfaError::Numerical("matrix not positive definite".into()))
}
