//! Small dense least-squares helpers shared by the fitting code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on the diagonal of R below which a design is rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via Householder QR on a column-equilibrated design.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n < p || p == 0 {
        return Err(Error::SingularDesign);
    }
    let scales: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    if scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let mut scaled = x.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let qr = scaled.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * max_diag) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().transpose() * y;
    let mut beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign)?;
    for (b, s) in beta.iter_mut().zip(&scales) {
        *b /= s;
    }
    Ok(beta)
}

/// Minimum-norm least squares through the SVD, for rank-deficient designs.
pub fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let svd = x.clone().svd(true, true);
    let tol = RANK_TOL * svd.singular_values.max() * x.nrows().max(x.ncols()) as f64;
    svd.solve(y, tol).map_err(|_| Error::SingularDesign)
}

/// Solves `(XᵀX + λI) β = Xᵀy`.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut ne = NormalEquations::new(x.ncols());
    ne.add_rows(x, y);
    ne.solve_ridge(lambda)
}

/// OLS, falling back to a tiny ridge penalty when the design is singular.
pub fn lstsq_or_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    match lstsq(x, y) {
        Err(Error::SingularDesign) => ridge(x, y, lambda),
        other => other,
    }
}

pub fn residual_sum_of_squares(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared()
}

/// Accumulated `XᵀX`, `Xᵀy` for incremental regression.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub n: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            self.xty[i] += xi * y;
            for j in 0..d {
                self.xtx[(i, j)] += xi * x[j];
            }
        }
        self.n += 1;
    }

    pub fn add_rows(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) {
        self.xtx += x.transpose() * x;
        self.xty += x.transpose() * y;
        self.n += x.nrows();
    }

    /// Cholesky solve; `SingularDesign` when the Gram matrix is rank deficient.
    pub fn solve(&self) -> Result<DVector<f64>> {
        let d = self.dim();
        if self.n < d {
            return Err(Error::SingularDesign);
        }
        // equilibrate so the pivot test is scale free
        let scales: Vec<f64> = (0..d).map(|i| self.xtx[(i, i)].sqrt()).collect();
        if scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let a = DMatrix::from_fn(d, d, |i, j| self.xtx[(i, j)] / (scales[i] * scales[j]));
        let b = DVector::from_fn(d, |i, _| self.xty[i] / scales[i]);
        let chol = a.cholesky().ok_or(Error::SingularDesign)?;
        let l = chol.l_dirty();
        let min_pivot = (0..d)
            .map(|i| l[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if min_pivot * min_pivot < 1e-12 {
            return Err(Error::SingularDesign);
        }
        let mut beta = chol.solve(&b);
        for (v, s) in beta.iter_mut().zip(&scales) {
            *v /= s;
        }
        Ok(beta)
    }

    pub fn solve_ridge(&self, lambda: f64) -> Result<DVector<f64>> {
        let d = self.dim();
        let a = &self.xtx + DMatrix::identity(d, d) * lambda;
        a.cholesky()
            .map(|c| c.solve(&self.xty))
            .ok_or(Error::SingularDesign)
    }
}

/// Solves `A Z = B` for symmetric positive definite `A` by Cholesky on the
/// diagonally equilibrated system. Fails when a squared pivot drops below
/// `pivot_tol`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, pivot_tol: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let scales: Vec<f64> = (0..d).map(|i| a[(i, i)].sqrt()).collect();
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let a_s = DMatrix::from_fn(d, d, |i, j| a[(i, j)] / (scales[i] * scales[j]));
    let b_s = DMatrix::from_fn(d, b.ncols(), |i, j| b[(i, j)] / scales[i]);
    let chol = a_s.cholesky().ok_or(Error::SingularDesign)?;
    let l = chol.l_dirty();
    if (0..d).any(|i| l[(i, i)] * l[(i, i)] < pivot_tol) {
        return Err(Error::SingularDesign);
    }
    let mut z = chol.solve(&b_s);
    for i in 0..d {
        z.row_mut(i).unscale_mut(scales[i]);
    }
    Ok(z)
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lstsq_recovers_exact_coefficients() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin() + j as f64);
        let beta = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let y = &x * &beta;
        let fit = lstsq(&x, &y).unwrap();
        assert_relative_eq!(fit, beta, epsilon = 1e-10);
        let mut ne = NormalEquations::new(3);
        for i in 0..30 {
            let row: Vec<f64> = x.row(i).iter().cloned().collect();
            ne.add(&row, y[i]);
        }
        assert_relative_eq!(ne.solve().unwrap(), beta, epsilon = 1e-8);
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = DMatrix::from_fn(10, 2, |i, _| i as f64 + 1.0);
        let y = DVector::from_element(10, 1.0);
        assert!(matches!(lstsq(&x, &y), Err(Error::SingularDesign)));
        let mut ne = NormalEquations::new(2);
        ne.add_rows(&x, &y);
        assert!(matches!(ne.solve(), Err(Error::SingularDesign)));
        assert!(lstsq_or_ridge(&x, &y, 1e-8).is_ok());
    }
}
