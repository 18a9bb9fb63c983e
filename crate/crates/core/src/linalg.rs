//! Dense linear-algebra kernels shared by the modal modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, QR, SVD};

use crate::error::{Error, Result};

/// Householder least-squares factorisation of a tall matrix with full column rank.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    condition: f64,
}

impl LeastSquares {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = a.shape();
        if cols == 0 {
            return Err(Error::InvalidInput("least squares with no columns".into()));
        }
        if cols > rows {
            return Err(Error::InvalidInput(format!(
                "least squares needs rows >= columns, got {rows}x{cols}"
            )));
        }
        let qr = QR::new(a.clone());
        let q = qr.q();
        let r = qr.r();
        let condition = condition_number(&r);
        Ok(LeastSquares { q, r, condition })
    }

    /// 2-norm condition number of the factored matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Orthonormal factor whose leading `m` columns span the leading `m`
    /// columns of the factored matrix.
    pub fn orthonormal_factor(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.q.nrows() {
            return Err(Error::InvalidInput(format!(
                "right-hand side has {} entries, expected {}",
                b.len(),
                self.q.nrows()
            )));
        }
        let qtb = self.q.tr_mul(b);
        self.r
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numerical("singular triangular factor".into()))
    }
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// All eigenpairs of `K x = w M x`, ascending, with M-orthonormal vectors.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Solves the symmetric-definite pencil `(K, M)` with `K = Bᵀ B`.
///
/// Working on the factor squares only the singular values, so zero-energy
/// modes come out at `eps² ‖K‖` instead of `eps ‖K‖`.
pub fn generalized_eigen_from_factor(
    factor: &DMatrix<f64>,
    mass: &DMatrix<f64>,
) -> Result<GeneralizedEigen> {
    let p = mass.nrows();
    if factor.ncols() != p {
        return Err(Error::InvalidInput(format!(
            "stiffness factor has {} columns, mass is {p}x{p}",
            factor.ncols()
        )));
    }
    let chol = mass_cholesky(mass)?;
    let l = chol.l();
    // C = B L^-T, i.e. Cᵀ = L^-1 Bᵀ
    let ct = l
        .solve_lower_triangular(&factor.transpose())
        .ok_or_else(|| Error::Numerical("mass factor is singular".into()))?;
    let mut c = ct.transpose();
    if c.nrows() < p {
        c = c.resize_vertically(p, 0.0);
    }
    let svd = SVD::try_new(c, false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("singular value decomposition did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("missing right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..p).collect();
    let sv = &svd.singular_values;
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(p);
    let mut y = DMatrix::zeros(p, p);
    for (k, &j) in order.iter().enumerate() {
        values.push(sv[j] * sv[j]);
        y.set_column(k, &v_t.row(j).transpose());
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Numerical("mass factor is singular".into()))?;
    Ok(GeneralizedEigen { values, vectors })
}

/// Solves the symmetric-definite pencil `(K, M)` by Cholesky reduction.
pub fn generalized_eigen_dense(
    stiffness: &DMatrix<f64>,
    mass: &DMatrix<f64>,
) -> Result<GeneralizedEigen> {
    let p = mass.nrows();
    if stiffness.shape() != (p, p) {
        return Err(Error::InvalidInput("stiffness and mass shapes differ".into()));
    }
    let chol = mass_cholesky(mass)?;
    let l = chol.l();
    let tmp = l
        .solve_lower_triangular(stiffness)
        .ok_or_else(|| Error::Numerical("mass factor is singular".into()))?;
    let mut a = l
        .solve_lower_triangular(&tmp.transpose())
        .ok_or_else(|| Error::Numerical("mass factor is singular".into()))?;
    a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigen solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let mut values = Vec::with_capacity(p);
    let mut y = DMatrix::zeros(p, p);
    for (k, &j) in order.iter().enumerate() {
        values.push(eig.eigenvalues[j]);
        y.set_column(k, &eig.eigenvectors.column(j));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Numerical("mass factor is singular".into()))?;
    Ok(GeneralizedEigen { values, vectors })
}

fn mass_cholesky(mass: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !mass.is_square() {
        return Err(Error::InvalidInput("mass matrix is not square".into()));
    }
    let diag_min = mass.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
    let diag_max = mass.diagonal().iter().cloned().fold(0.0, f64::max);
    Cholesky::new(mass.clone()).ok_or_else(|| {
        Error::Numerical(format!(
            "mass matrix is not positive definite (diagonal range [{diag_min:.3e}, {diag_max:.3e}])"
        ))
    })
}

/// Re-orthogonalised projection of `v` off an orthonormal set.
pub(crate) fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for u in basis {
            let c = u.dot(v);
            v.axpy(-c, u, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let x = DVector::from_vec(vec![0.5, -2.0]);
        let ls = LeastSquares::new(&a).unwrap();
        let got = ls.solve(&(&a * &x)).unwrap();
        assert!((got - x).norm() < 1e-12);
        assert!(ls.condition() > 1.0);
    }

    #[test]
    fn wide_system_rejected() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert!(LeastSquares::new(&a).is_err());
    }

    #[test]
    fn factor_and_dense_routes_agree() {
        // path-graph Laplacian with a diagonal mass
        let p = 6;
        let mut b = DMatrix::zeros(p - 1, p);
        for i in 0..p - 1 {
            b[(i, i)] = -1.0;
            b[(i, i + 1)] = 1.0;
        }
        let k = b.transpose() * &b;
        let m = DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| 1.0 + i as f64 * 0.1));
        let f = generalized_eigen_from_factor(&b, &m).unwrap();
        let d = generalized_eigen_dense(&k, &m).unwrap();
        for (x, y) in f.values.iter().zip(&d.values) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
        assert!(f.values[0].abs() < 1e-24);
        let gram = f.vectors.transpose() * &m * &f.vectors;
        assert!((gram - DMatrix::identity(p, p)).amax() < 1e-12);
    }

    #[test]
    fn non_definite_mass_reported() {
        let k = DMatrix::identity(2, 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(generalized_eigen_dense(&k, &m), Err(Error::Numerical(_))));
    }
}
