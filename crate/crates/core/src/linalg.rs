//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{FbcapError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular-value rank cutoff, relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-9;
/// Tolerance for classifying eigenvalues on the unit circle.
pub const EIG_TOL: f64 = 1e-9;
/// Condition number above which an innovation covariance counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn sup_norm(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn is_finite(a: &Mat) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Smallest eigenvalue of the symmetric part of `a`; `+inf` for an empty matrix.
pub fn min_eigenvalue(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}

/// Symmetrizes and replaces negative eigenvalues by zero.
pub fn clip_psd(a: &Mat) -> Mat {
    let s = symmetrize(a);
    if s.nrows() == 0 || min_eigenvalue(&s) >= 0.0 {
        return s;
    }
    let eig = s.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues treated as zero).
pub fn psd_sqrt(a: &Mat) -> Mat {
    if a.nrows() == 0 {
        return a.clone();
    }
    let eig = symmetrize(a).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its eigendecomposition.
pub fn pinv_psd(a: &Mat, rel_tol: f64) -> Mat {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let eig = symmetrize(a).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Mat::zeros(n, n);
    }
    let d = eig.eigenvalues.map(|v| if v > rel_tol * max { 1.0 / v } else { 0.0 });
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// Inverse of a symmetric positive definite matrix; fails when its
/// condition number exceeds [`MAX_CONDITION`].
pub fn inv_spd(a: &Mat) -> Result<Mat> {
    let s = symmetrize(a);
    let eig = s.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if lo <= 0.0 || !lo.is_finite() || hi / lo > MAX_CONDITION {
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(FbcapError::SingularInnovation { cond });
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(symmetrize(
        &(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()),
    ))
}

/// `log det a` for a symmetric positive definite matrix, `None` otherwise.
pub fn log_det_spd(a: &Mat) -> Option<f64> {
    let chol = symmetrize(a).cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += 2.0 * d.ln();
    }
    Some(acc)
}

pub fn eigenvalues(a: &Mat) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(a: &Mat) -> f64 {
    eigenvalues(a).iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

fn to_complex(a: &Mat) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0))
}

/// Column rank of a complex matrix by singular-value thresholding.
pub fn complex_rank(a: &DMatrix<Complex64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0_f64, |m, &v| m.max(v));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v >= RANK_TOL * max).count()
}

/// PBH observability test for the modes of `f` selected by `select`:
/// every selected eigenvalue λ must give full column rank of `[F − λI; C]`.
pub fn pbh_observable(f: &Mat, c: &Mat, select: impl Fn(Complex64) -> bool) -> bool {
    let n = f.nrows();
    let fc = to_complex(f);
    let cc = to_complex(c);
    eigenvalues(f).into_iter().filter(|&l| select(l)).all(|l| {
        let mut stacked = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
        let shifted = &fc - DMatrix::<Complex64>::identity(n, n) * l;
        stacked.view_mut((0, 0), (n, n)).copy_from(&shifted);
        stacked.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
        complex_rank(&stacked) == n
    })
}

/// PBH controllability test for the selected modes: `[F − λI, B]` must have full row rank.
pub fn pbh_controllable(f: &Mat, b: &Mat, select: impl Fn(Complex64) -> bool) -> bool {
    pbh_observable(&f.transpose(), &b.transpose(), select)
}

/// Orthonormal basis (columns) of the range of `a`, by SVD with a relative cutoff.
pub fn range_basis(a: &Mat) -> Mat {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return Mat::zeros(n, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let max = svd.singular_values.iter().fold(0.0_f64, |m, &v| m.max(v));
    if max == 0.0 {
        return Mat::zeros(n, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * max)
        .collect();
    Mat::from_fn(n, keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthonormal basis of the controllable subspace of `(f, b)`, i.e. the smallest
/// `f`-invariant subspace containing the range of `b`.
pub fn controllable_basis(f: &Mat, b: &Mat) -> Mat {
    let n = f.nrows();
    let mut basis = range_basis(b);
    for _ in 0..n {
        if basis.ncols() == n {
            break;
        }
        let image = f * &basis;
        let mut joined = Mat::zeros(n, basis.ncols() + image.ncols());
        joined.view_mut((0, 0), (n, basis.ncols())).copy_from(&basis);
        joined
            .view_mut((0, basis.ncols()), (n, image.ncols()))
            .copy_from(&image);
        let next = range_basis(&joined);
        if next.ncols() == basis.ncols() {
            break;
        }
        basis = next;
    }
    basis
}

/// Solves `X = F X Fᵀ + Q` for stable `F` by the doubling iteration.
pub fn lyapunov_discrete(f: &Mat, q: &Mat) -> Mat {
    let mut x = symmetrize(q);
    let mut a = f.clone();
    for _ in 0..200 {
        let next = &x + &a * &x * a.transpose();
        let delta = sup_norm(&(&next - &x));
        x = symmetrize(&next);
        a = &a * &a;
        if delta <= 1e-16 * (1.0 + sup_norm(&x)) || sup_norm(&a) < 1e-300 {
            break;
        }
    }
    x
}

/// Determinant of a square matrix (1 for an empty one).
pub fn det(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

/// Converts nested row-major rows into a matrix; `cols` is enforced on every row.
pub fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(FbcapError::DimensionMismatch(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(FbcapError::DimensionMismatch(format!("{name} has ragged rows")));
    }
    let m = Mat::from_fn(nrows, ncols, |r, c| rows[r][c]);
    if !is_finite(&m) {
        return Err(FbcapError::NonFinite(name.to_string()));
    }
    Ok(m)
}

pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[(r, c)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = Mat::zeros(2, 2);
        assert_eq!(pinv_psd(&z, 1e-9), z);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = Mat::from_row_slice(2, 1, &[1.0, 2.0]);
        let a = &v * v.transpose();
        let p = pinv_psd(&a, 1e-9);
        let back = &a * &p * &a;
        assert!(sup_norm(&(back - &a)) < 1e-12);
    }

    #[test]
    fn inv_spd_rejects_ill_conditioned() {
        let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1e-13]));
        assert!(matches!(inv_spd(&a), Err(FbcapError::SingularInnovation { .. })));
    }

    #[test]
    fn controllable_basis_of_chain() {
        // shift register driven at the first state reaches all three
        let f = Mat::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 0., 1., 0.]);
        let b = Mat::from_row_slice(3, 1, &[1., 0., 0.]);
        assert_eq!(controllable_basis(&f, &b).ncols(), 3);
        let b2 = Mat::from_row_slice(3, 1, &[0., 0., 1.]);
        assert_eq!(controllable_basis(&f, &b2).ncols(), 1);
    }

    #[test]
    fn lyapunov_scalar() {
        let f = Mat::from_element(1, 1, 0.5);
        let q = Mat::from_element(1, 1, 1.0);
        let x = lyapunov_discrete(&f, &q);
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn pbh_scalar_cases() {
        let f = Mat::from_element(1, 1, 2.0);
        let unstable = |l: Complex64| l.norm() >= 1.0 - EIG_TOL;
        assert!(!pbh_observable(&f, &Mat::zeros(1, 1), unstable));
        assert!(pbh_observable(&f, &Mat::from_element(1, 1, 1.0), unstable));
    }
}
