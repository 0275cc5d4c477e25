//! Subspaces of `C^n` represented by column-orthonormal bases.
//!
//! Bases are never compared directly; two subspaces are equal when their
//! orthogonal projectors agree (Frobenius distance below [`EQ_TOL`]). The zero
//! subspace is a basis with no columns, so none of the set operations need a
//! special case for it.

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use num_complex::Complex64;

/// Default relative threshold on singular values when deciding rank.
pub const RANK_TOL: f64 = 1e-9;

/// Projector distance under which two subspaces are considered equal.
pub const EQ_TOL: f64 = 1e-8;

/// Absolute threshold on principal-angle sines used by [`Subspace::intersect`].
const ANGLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: usize,
    basis: CMatrix,
}

impl Subspace {
    pub fn zero(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: linalg::zeros(ambient, 0),
        }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: linalg::identity(ambient),
        }
    }

    /// Wrap a matrix whose columns are already orthonormal.
    pub fn from_orthonormal(basis: CMatrix) -> Self {
        debug_assert!({
            let g = basis.adjoint() * &basis;
            linalg::frobenius(&(g - linalg::identity(basis.ncols()))) < 1e-8
        });
        Subspace {
            ambient: basis.nrows(),
            basis,
        }
    }

    /// Column span of `m` at relative rank threshold `tol`.
    pub fn span(m: &CMatrix, tol: f64) -> Self {
        orthonormal_basis(m, tol)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn into_basis(self) -> CMatrix {
        self.basis
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient
    }

    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    /// Component of the columns of `m` orthogonal to this subspace.
    pub fn reject(&self, m: &CMatrix) -> CMatrix {
        m - &self.basis * (self.basis.adjoint() * m)
    }

    pub fn complement(&self) -> Subspace {
        if self.is_zero() {
            return Subspace::full(self.ambient);
        }
        if self.is_full() {
            return Subspace::zero(self.ambient);
        }
        // Null space of basis^H; its singular values are all 1 so any
        // threshold in (0, 1) separates cleanly.
        null_space_abs(&self.basis.adjoint(), 0.5)
    }

    pub fn intersect(&self, other: &Subspace) -> Result<Subspace> {
        self.check_same(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Subspace::zero(self.ambient));
        }
        if other.is_full() {
            return Ok(self.clone());
        }
        if self.is_full() {
            return Ok(other.clone());
        }
        // x = A y lies in B iff (I - P_B) A y = 0. The singular values of
        // (I - P_B) A are sines of principal angles, so the threshold is absolute.
        let resid = other.reject(&self.basis);
        let coeffs = null_space_abs(&resid, ANGLE_TOL);
        if coeffs.is_zero() {
            return Ok(Subspace::zero(self.ambient));
        }
        let raw = &self.basis * coeffs.basis();
        Ok(Subspace::from_orthonormal(linalg::orthonormalize_columns(&raw)))
    }

    pub fn sum(&self, other: &Subspace) -> Result<Subspace> {
        self.check_same(other)?;
        if other.is_zero() {
            return Ok(self.clone());
        }
        if self.is_zero() {
            return Ok(other.clone());
        }
        let mut cat = linalg::zeros(self.ambient, self.dim() + other.dim());
        cat.columns_mut(0, self.dim()).copy_from(&self.basis);
        cat.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        Ok(orthonormal_basis(&cat, RANK_TOL))
    }

    /// Span of this subspace together with extra columns.
    pub fn extend(&self, cols: &CMatrix) -> Result<Subspace> {
        if cols.nrows() != self.ambient {
            return Err(Error::DimensionMismatch {
                expected: self.ambient,
                found: cols.nrows(),
            });
        }
        self.sum(&orthonormal_basis(cols, RANK_TOL))
    }

    /// `dim(self ∩ other)` without materializing a basis when either side is trivial.
    pub fn intersection_dim(&self, other: &Subspace) -> Result<usize> {
        self.check_same(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(0);
        }
        if other.is_full() {
            return Ok(self.dim());
        }
        if self.is_full() {
            return Ok(other.dim());
        }
        Ok(self.intersect(other)?.dim())
    }

    /// Dimension of the projection of this subspace onto `other^⊥`, i.e.
    /// `dim(self) - dim(self ∩ other)`.
    pub fn dim_outside(&self, other: &Subspace) -> Result<usize> {
        Ok(self.dim() - self.intersection_dim(other)?)
    }

    /// Whether `other` is contained in this subspace.
    pub fn contains(&self, other: &Subspace) -> bool {
        if other.ambient != self.ambient {
            return false;
        }
        if other.is_zero() || self.is_full() {
            return true;
        }
        if other.dim() > self.dim() {
            return false;
        }
        linalg::frobenius(&self.reject(&other.basis)) < EQ_TOL
    }

    /// Frobenius distance between orthogonal projectors.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.ambient != other.ambient {
            return f64::INFINITY;
        }
        linalg::frobenius(&(self.projector() - other.projector()))
    }

    pub fn approx_eq(&self, other: &Subspace) -> bool {
        self.dim() == other.dim() && self.distance(other) < EQ_TOL
    }

    /// First `count` basis columns as a subspace.
    pub fn leading(&self, count: usize) -> Subspace {
        Subspace {
            ambient: self.ambient,
            basis: self.basis.columns(0, count.min(self.dim())).into_owned(),
        }
    }

    fn check_same(&self, other: &Subspace) -> Result<()> {
        if self.ambient != other.ambient {
            return Err(Error::DimensionMismatch {
                expected: self.ambient,
                found: other.ambient,
            });
        }
        Ok(())
    }
}

/// Orthonormal basis of the column span of `m`; dimension is the number of
/// singular values above `tol * sigma_max`.
pub fn orthonormal_basis(m: &CMatrix, tol: f64) -> Subspace {
    let rows = m.nrows();
    if m.ncols() == 0 {
        return Subspace::zero(rows);
    }
    let (u, sigma, _) = linalg::svd_sorted(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax <= f64::MIN_POSITIVE {
        return Subspace::zero(rows);
    }
    let r = sigma.iter().filter(|&&s| s > tol * smax).count();
    Subspace {
        ambient: rows,
        basis: u.columns(0, r).into_owned(),
    }
}

/// Null space `{x : m x = 0}` at relative rank threshold `tol`.
pub fn null_space(m: &CMatrix, tol: f64) -> Subspace {
    let cols = m.ncols();
    let sv = linalg::singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax <= f64::MIN_POSITIVE {
        return Subspace::full(cols);
    }
    null_space_abs(m, tol * smax)
}

/// Null space keeping right singular vectors with singular value `<= abs_tol`.
fn null_space_abs(m: &CMatrix, abs_tol: f64) -> Subspace {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Subspace::zero(0);
    }
    // Pad to at least `cols` rows so the thin SVD yields a full right basis.
    let padded = if rows < cols {
        let mut p = linalg::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(m);
        p
    } else {
        m.clone()
    };
    let (_, sigma, v) = linalg::svd_sorted(&padded);
    let keep: Vec<usize> = (0..cols).filter(|&i| sigma[i] <= abs_tol).collect();
    let mut basis = linalg::zeros(cols, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &v.column(src));
    }
    Subspace {
        ambient: cols,
        basis,
    }
}

/// Canonical basis vector `e_i` of `C^n`.
pub fn unit_vector(n: usize, i: usize) -> CMatrix {
    let mut v = linalg::zeros(n, 1);
    v[(i, 0)] = Complex64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::complex_gaussian;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn span_of(cols: &[CMatrix]) -> Subspace {
        let n = cols[0].nrows();
        let mut m = linalg::zeros(n, cols.len());
        for (i, c) in cols.iter().enumerate() {
            m.set_column(i, &c.column(0));
        }
        orthonormal_basis(&m, RANK_TOL)
    }

    /// Projector of the column span of a full-column-rank matrix via the
    /// normal equations, independent of the SVD route.
    fn normal_equation_projector(m: &CMatrix) -> CMatrix {
        let gram = m.adjoint() * m;
        let inv = gram.try_inverse().expect("full column rank");
        m * inv * m.adjoint()
    }

    fn random_subspace(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Subspace {
        orthonormal_basis(&complex_gaussian(n, d, rng), RANK_TOL)
    }

    #[test]
    fn basis_of_identity_is_full() {
        let s = orthonormal_basis(&linalg::identity(3), 1e-9);
        assert_eq!(s.dim(), 3);
        assert!(s.approx_eq(&Subspace::full(3)));
    }

    #[test]
    fn basis_of_zero_matrix_is_empty() {
        let s = orthonormal_basis(&linalg::zeros(4, 2), 1e-9);
        assert_eq!(s.dim(), 0);
        assert_eq!(s.ambient_dim(), 4);
    }

    #[test]
    fn basis_projector_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = complex_gaussian(4, 2, &mut rng);
        let s = orthonormal_basis(&m, 1e-9);
        assert_eq!(s.dim(), 2);
        let p = normal_equation_projector(&m);
        assert!(linalg::frobenius(&(s.projector() - p)) < 1e-9);
    }

    #[test]
    fn null_space_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let full_rank = complex_gaussian(2, 2, &mut rng);
        assert_eq!(null_space(&full_rank, RANK_TOL).dim(), 0);

        let mut diag = linalg::zeros(2, 2);
        diag[(0, 0)] = Complex64::new(1.0, 0.0);
        let ns = null_space(&diag, RANK_TOL);
        assert!(ns.approx_eq(&Subspace::from_orthonormal(unit_vector(2, 1))));

        let ns = null_space(&linalg::zeros(2, 2), RANK_TOL);
        assert!(ns.approx_eq(&Subspace::full(2)));
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = complex_gaussian(2, 5, &mut rng);
        let ns = null_space(&m, RANK_TOL);
        assert_eq!(ns.dim(), 3);
        assert!(linalg::frobenius(&(&m * ns.basis())) < 1e-10);
    }

    #[test]
    fn intersection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_subspace(5, 3, &mut rng);
        assert!(a.intersect(&a).unwrap().approx_eq(&a));
        assert!(a.intersect(&a.complement()).unwrap().is_zero());

        let e = |i| unit_vector(3, i);
        let s12 = span_of(&[e(0), e(1)]);
        let s23 = span_of(&[e(1), e(2)]);
        let meet = s12.intersect(&s23).unwrap();
        assert!(meet.approx_eq(&span_of(&[e(1)])));
    }

    #[test]
    fn intersection_rejects_mismatched_ambient() {
        let a = Subspace::full(3);
        let b = Subspace::full(4);
        assert!(matches!(a.intersect(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.sum(&b).is_err());
    }

    #[test]
    fn sum_and_complement_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = random_subspace(4, 2, &mut rng);
        assert!(a.sum(&Subspace::zero(4)).unwrap().approx_eq(&a));
        assert!(Subspace::full(4).complement().is_zero());

        let e1 = unit_vector(3, 0);
        let e12 = &unit_vector(3, 0) + &unit_vector(3, 1);
        let s = span_of(&[e1.clone()]).sum(&span_of(&[e12])).unwrap();
        assert_eq!(s.dim(), 2);
    }

    #[test]
    fn random_subspace_misses_fixed_complementary_subspace() {
        // A random D-dim subspace meets a fixed (N-D)-dim subspace only at 0.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for trial in 0..1000 {
            let n = 2 + trial % 7;
            let d = 1 + trial % (n - 1);
            let fixed = Subspace::from_orthonormal(linalg::identity(n).columns(0, n - d).into_owned());
            let v = random_subspace(n, d, &mut rng);
            assert!(v.intersect(&fixed).unwrap().is_zero(), "trial {trial}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dimension_formula_and_double_complement(
            seed in any::<u64>(),
            n in 2usize..8,
            da in 0usize..8,
            db in 0usize..8,
            shared in 0usize..4,
        ) {
            let da = da.min(n);
            let db = db.min(n);
            let shared = shared.min(da).min(db);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Build A and B with a planted common part so intersections are non-trivial.
            let common = complex_gaussian(n, shared, &mut rng);
            let mut ma = linalg::zeros(n, da);
            let mut mb = linalg::zeros(n, db);
            ma.columns_mut(0, shared).copy_from(&common);
            mb.columns_mut(0, shared).copy_from(&common);
            ma.columns_mut(shared, da - shared).copy_from(&complex_gaussian(n, da - shared, &mut rng));
            mb.columns_mut(shared, db - shared).copy_from(&complex_gaussian(n, db - shared, &mut rng));
            let a = orthonormal_basis(&ma, RANK_TOL);
            let b = orthonormal_basis(&mb, RANK_TOL);
            let meet = a.intersect(&b).unwrap();
            let join = a.sum(&b).unwrap();
            prop_assert_eq!(meet.dim() + join.dim(), a.dim() + b.dim());
            prop_assert!(b.intersect(&a).unwrap().approx_eq(&meet));
            prop_assert!(a.complement().complement().approx_eq(&a));
            prop_assert_eq!(a.dim() + a.complement().dim(), n);
        }
    }
}
