//! Dense linear-algebra helpers used across the solver modules.
//!
//! All norms follow one convention: the primal (X) norm is induced by a
//! symmetric positive-definite Gram matrix when one is declared and is the
//! Euclidean norm otherwise; the dual (Y) norm is the weighted Euclidean
//! norm with positive pairing weights.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Maximum absolute entry, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Checks exact symmetry up to `tol` relative to the matrix scale.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = 1.0 + max_abs(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// X-norm of a coordinate vector: `sqrt(v' G v)` or Euclidean without a Gram.
pub fn x_norm(gram: Option<&DMatrix<f64>>, v: &DVector<f64>) -> f64 {
    match gram {
        Some(g) => (g * v).dot(v).max(0.0).sqrt(),
        None => v.norm(),
    }
}

/// Weighted Euclidean (Y) norm: `sqrt(sum w_i v_i^2)`.
pub fn y_norm(weights: &DVector<f64>, v: &DVector<f64>) -> f64 {
    v.iter()
        .zip(weights.iter())
        .map(|(vi, wi)| wi * vi * vi)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Cholesky factorization of an SPD matrix, with a descriptive error.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| {
        Error::Validation(format!("{context}: matrix is not positive definite"))
    })
}

/// Eigenvalue range of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Generalized eigenvalue range of the pencil `(a, gram)`, i.e. the extreme
/// values of `v'Av / v'Gv`. Without a Gram this is the plain eigenvalue range.
pub fn gen_eig_range(a: &DMatrix<f64>, gram: Option<&DMatrix<f64>>) -> Result<(f64, f64)> {
    match gram {
        None => Ok(sym_eig_range(a)),
        Some(g) => {
            let chol = cholesky(g, "generalized eigenvalues")?;
            // L^-1 A L^-T has the same spectrum as the pencil.
            let l = chol.l();
            let step = l
                .solve_lower_triangular(a)
                .ok_or_else(|| Error::Validation("singular Cholesky factor".into()))?;
            let reduced = l
                .solve_lower_triangular(&step.transpose())
                .ok_or_else(|| Error::Validation("singular Cholesky factor".into()))?;
            Ok(sym_eig_range(&reduced))
        }
    }
}

/// Singular-value range of the coupling matrix measured in the declared
/// norms: `sigma(D B L^-T)` where `D = diag(w^power)` acts on rows and `L` is
/// the Cholesky factor of the primal Gram matrix.
///
/// `power = -1/2` yields the continuity/inf-sup constants of the bilinear
/// form in the Y-norm; `power = +1/2` yields the operator norm governing the
/// projected dual iteration.
pub fn coupling_singular_range(
    b: &DMatrix<f64>,
    weights: &DVector<f64>,
    gram: Option<&DMatrix<f64>>,
    power: f64,
) -> Result<(f64, f64)> {
    if b.nrows() == 0 {
        return Ok((0.0, 0.0));
    }
    let mut scaled = b.clone();
    for (i, w) in weights.iter().enumerate() {
        let factor = w.powf(power);
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= factor;
        }
    }
    let reduced = match gram {
        None => scaled,
        Some(g) => {
            let chol = cholesky(g, "coupling singular values")?;
            // rows of B L^-T solve L X' = B'.
            let xt = chol
                .l()
                .solve_lower_triangular(&scaled.transpose())
                .ok_or_else(|| Error::Validation("singular Cholesky factor".into()))?;
            xt.transpose()
        }
    };
    let svd = reduced.svd(false, false);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for s in svd.singular_values.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    Ok((lo, hi))
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive pairs.
/// Returns `None` when fewer than two usable points remain.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys.iter())
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_eig_of_scaled_gram_is_constant() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = 3.0 * &g;
        let (lo, hi) = gen_eig_range(&a, Some(&g)).unwrap();
        assert!((lo - 3.0).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_range_of_orthonormal_rows_is_one() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let w = DVector::from_element(2, 1.0);
        let (lo, hi) = coupling_singular_range(&b, &w, None, -0.5).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law_is_exponent() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 5.0 * f64::powf(*x, -1.3)).collect();
        let s = log_log_slope(&xs, &ys).unwrap();
        assert!((s + 1.3).abs() < 1e-10);
    }
}
