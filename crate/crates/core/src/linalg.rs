//! Small dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Eigenvalues below this are clamped to zero by [`psd_sqrt`].
pub const PSD_CLAMP: f64 = 1e-10;

/// Inverse of a square matrix, `None` when it is numerically singular.
pub fn inverse(a: &Matrix) -> Option<Matrix> {
    if a.nrows() != a.ncols() {
        return None;
    }
    if a.nrows() == 0 {
        return Some(Matrix::zeros(0, 0));
    }
    let inv = a.clone().lu().try_inverse()?;
    inv.iter().all(|x| x.is_finite()).then_some(inv)
}

/// Inverse or a [`Error::Singular`] naming the matrix and the configuration.
pub fn inverse_at(a: &Matrix, what: &'static str, q: &Vector) -> Result<Matrix> {
    inverse(a).ok_or_else(|| Error::Singular {
        what,
        q: q.iter().copied().collect(),
    })
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `A − Aᵀ`.
pub fn asymmetry(a: &Matrix) -> f64 {
    max_abs(&(a - a.transpose()))
}

/// Largest absolute entry of `A + Aᵀ`.
pub fn skewness_defect(a: &Matrix) -> f64 {
    max_abs(&(a + a.transpose()))
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Smallest eigenvalue of the symmetric part; `+∞` for an empty matrix.
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

pub fn is_positive_definite(a: &Matrix) -> bool {
    asymmetry(a) <= 1e-9 * (1.0 + max_abs(a)) && min_eigenvalue(a) > 0.0
}

/// Numerical rank from singular values with the usual `max(r, c)·ε·σ_max` cut.
pub fn rank(a: &Matrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = SVD::new(a.clone(), false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |m, s| m.max(*s));
    let tol = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|s| **s > tol).count()
}

/// Symmetric PSD square root `R` with `R·R = S`.
///
/// Eigenvalues in `[−1e-10, 0)` are clamped to zero; anything more negative
/// is rejected.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension(format!(
            "psd_sqrt of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    if let Some(bad) = eig.eigenvalues.iter().find(|l| **l < -PSD_CLAMP) {
        return Err(Error::NotPsd { eigenvalue: *bad });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * Matrix::from_diagonal(&roots) * v.transpose())))
}

/// Full-rank left annihilator of `G` (`n×m`, rank `m`): an `s×n` matrix
/// (`s = n − m`) with orthonormal rows and `G^⊥ G = 0`.
///
/// Rows span the eigenspace of the complementary projector
/// `I − G(GᵀG)⁻¹Gᵀ`; each row is normalized so its largest-magnitude entry
/// is positive.
pub fn left_annihilator(g: &Matrix) -> Result<Matrix> {
    let (n, m) = g.shape();
    let r = rank(g);
    if r != m || m > n {
        return Err(Error::RankDeficient {
            rows: n,
            cols: m,
            rank: r,
            expected: m,
        });
    }
    let s = n - m;
    if s == 0 {
        return Ok(Matrix::zeros(0, n));
    }
    let gtg_inv = inverse(&(g.transpose() * g)).ok_or(Error::RankDeficient {
        rows: n,
        cols: m,
        rank: r,
        expected: m,
    })?;
    let proj_g = g * &gtg_inv * g.transpose();
    let complement = Matrix::identity(n, n) - &proj_g;
    let eig = SymmetricEigen::new(symmetrize(&complement));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));

    let mut rows: Vec<Vector> = Vec::with_capacity(s);
    for &idx in order.iter().take(s) {
        let mut v: Vector = eig.eigenvectors.column(idx).into_owned();
        // one projection pass removes the residual component along range(G)
        v -= &proj_g * &v;
        for prev in &rows {
            let c = prev.dot(&v);
            v -= prev * c;
        }
        v /= v.norm();
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v = -v;
        }
        rows.push(v);
    }
    let mut out = Matrix::zeros(s, n);
    for (k, v) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&v.transpose());
    }
    Ok(out)
}

/// Block-diagonal matrix from two square blocks.
pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// `[top; bottom]`.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

/// `[left right]`.
pub fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// `(GᵀG)⁻¹Gᵀ`, the left pseudo-inverse used by every control law.
pub fn left_pinv(g: &Matrix, q: &Vector) -> Result<Matrix> {
    let gtg = g.transpose() * g;
    Ok(inverse_at(&gtg, "GᵀG", q)? * g.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};
    use proptest::prelude::*;

    #[test]
    fn psd_sqrt_examples() {
        let i = Matrix::identity(3, 3);
        assert!((psd_sqrt(&i).unwrap() - &i).abs().max() < 1e-15);
        let r = psd_sqrt(&dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap();
        assert!((r - dmatrix![2.0, 0.0; 0.0, 3.0]).abs().max() < 1e-14);
        let s = dmatrix![2.0, 1.0; 1.0, 2.0];
        let r = psd_sqrt(&s).unwrap();
        assert!((&r * &r - &s).abs().max() <= 1e-10);
        assert!(asymmetry(&r) == 0.0);
        assert!(min_eigenvalue(&r) >= 0.0);
    }

    #[test]
    fn psd_sqrt_clamps_tiny_negative_and_rejects_negative() {
        let r = psd_sqrt(&dmatrix![1.0, 0.0; 0.0, -1e-12]).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
        match psd_sqrt(&dmatrix![1.0, 0.0; 0.0, -1e-3]) {
            Err(Error::NotPsd { eigenvalue }) => assert!((eigenvalue + 1e-3).abs() < 1e-15),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn annihilator_examples() {
        let a = left_annihilator(&dmatrix![1.0; 0.0]).unwrap();
        assert!((a - dmatrix![0.0, 1.0]).abs().max() < 1e-15);

        let a = left_annihilator(&Matrix::identity(2, 2)).unwrap();
        assert_eq!(a.shape(), (0, 2));

        let (m, l, qu) = (0.2, 0.5, 0.4f64);
        let g = dmatrix![1.0; -m * l * qu.cos()];
        let a = left_annihilator(&g).unwrap();
        let expect = dmatrix![m * l * qu.cos(), 1.0];
        let expect = &expect / expect.norm();
        assert!((&a - expect).abs().max() < 1e-14);
        assert!((a * g).abs().max() <= 1e-12);
    }

    #[test]
    fn annihilator_rejects_rank_deficient() {
        let g = dmatrix![1.0, 2.0; 2.0, 4.0; 0.0, 0.0];
        assert!(matches!(
            left_annihilator(&g),
            Err(Error::RankDeficient { rank: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn annihilator_rows_orthonormal_and_orthogonal_to_g(
            entries in proptest::collection::vec(-3.0f64..3.0, 10),
        ) {
            let g = DMatrix::from_column_slice(5, 2, &entries);
            prop_assume!(SVD::new(g.clone(), false, false).singular_values.min() > 1e-3);
            let a = left_annihilator(&g).unwrap();
            prop_assert_eq!(a.shape(), (3, 5));
            prop_assert!((&a * &g).abs().max() <= 1e-12 * (1.0 + max_abs(&g)));
            prop_assert!((&a * a.transpose() - Matrix::identity(3, 3)).abs().max() < 1e-12);
            prop_assert_eq!(rank(&a), 3);
        }
    }
}
