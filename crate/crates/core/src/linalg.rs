use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::numerical("cholesky of a non-square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))
}

/// Lower factor `L` with `L Lᵀ = m` for a positive-semidefinite `m`.
///
/// Columns whose residual pivot vanishes are zeroed, so a zero matrix
/// factors to zero. On failure one retry with `1e-10·I` jitter is made.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match semidefinite_cholesky(m) {
        Some(l) => Ok(l),
        None => {
            let n = m.nrows();
            let jittered = m + DMatrix::identity(n, n) * 1e-10;
            semidefinite_cholesky(&jittered)
                .ok_or_else(|| Error::numerical("covariance is not positive semidefinite"))
        }
    }
}

fn semidefinite_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            // Zero pivot: the rest of the column must vanish for a PSD input.
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-8 * scale.max(1.0) {
                    return None;
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::numerical("matrix is not square"));
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::numerical(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solve `L x = b` for lower-triangular `L` with nonzero diagonal.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn invert_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = 1.0;
        let x = solve_lower(l, &e);
        inv.set_column(col, &x);
    }
    inv
}
