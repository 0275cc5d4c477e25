//! Dense complex linear-algebra helpers shared by the rest of the crate.
//!
//! Everything here is a thin, deterministic wrapper over nalgebra's
//! factorizations: sorted singular values, ascending Hermitian spectra with a
//! canonical eigenvector phase, and LQ via QR of the adjoint.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    frobenius_sq(m).sqrt()
}

/// Matrix with i.i.d. standard circular complex Gaussian entries (unit variance).
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    // Column-major fill so that the draw order is fixed by (rows, cols).
    let mut m = CMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(r, c)] = Complex64::new(re * scale, im * scale);
        }
    }
    m
}

/// Thin SVD with singular values sorted in descending order.
///
/// Returns `(u, sigma, v)` with `m = u * diag(sigma) * v^H`; `u` is
/// `rows x p`, `v` is `cols x p`, `p = min(rows, cols)`.
pub fn svd_sorted(m: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return (zeros(rows, 0), Vec::new(), zeros(cols, 0));
    }
    let svd = to_faer(m).thin_svd().expect("SVD did not converge");
    let sv: Vec<f64> = svd.S().column_vector().iter().map(|x| x.re).collect();
    let (u, v) = (svd.U(), svd.V());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let us = CMatrix::from_fn(rows, p, |i, j| u[(i, order[j])]);
    let vs = CMatrix::from_fn(cols, p, |i, j| v[(i, order[j])]);
    let sigma = order.iter().map(|&i| sv[i]).collect();
    (us, sigma, vs)
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = to_faer(m)
        .singular_values()
        .expect("SVD did not converge")
        .into_iter()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

// nalgebra's complex SVD loses accuracy on nearly rank-deficient input
// (reconstruction errors of order 1e-1), which partial connectivity produces
// routinely; faer's does not.
fn to_faer(m: &CMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Numerical rank: singular values above `tol * sigma_max`.
pub fn rank(m: &CMatrix, tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&smax) if smax > f64::MIN_POSITIVE => sv.iter().filter(|&&s| s > tol * smax).count(),
        _ => 0,
    }
}

/// Multiply a vector by a unit phase so its largest-magnitude entry is real
/// and positive. Ties go to the lowest index.
pub fn canonical_phase(v: &mut DVector<Complex64>) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let mag = z.norm();
        if mag > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = mag;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / best_mag;
        *v *= phase;
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
///
/// The input is symmetrized first; eigenvectors are phase-canonicalized.
pub fn hermitian_eig_ascending(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), zeros(0, 0));
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = nalgebra::linalg::SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut vecs = zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<Complex64> = eig.eigenvectors.column(src).into_owned();
        canonical_phase(&mut col);
        vecs.set_column(dst, &col);
        vals.push(eig.eigenvalues[src]);
    }
    (vals, vecs)
}

/// Eigenvectors of the `count` smallest eigenvalues of a Hermitian matrix.
pub fn smallest_eigenvectors(m: &CMatrix, count: usize) -> CMatrix {
    let (_, vecs) = hermitian_eig_ascending(m);
    vecs.columns(0, count).into_owned()
}

/// LQ decomposition of a square or wide matrix: `m = l * q` with `q` having
/// orthonormal rows. Computed from the QR factorization of `m^H`.
pub fn lq(m: &CMatrix) -> (CMatrix, CMatrix) {
    let qr = m.adjoint().qr();
    let q = qr.q();
    let r = qr.r();
    (r.adjoint(), q.adjoint())
}

/// Orthonormal basis of the column span of a full-column-rank matrix,
/// keeping the column count (first left singular vectors).
pub fn orthonormalize_columns(m: &CMatrix) -> CMatrix {
    let (u, _, _) = svd_sorted(m);
    u.columns(0, m.ncols().min(u.ncols())).into_owned()
}

/// Solve `a x = b` for Hermitian positive semidefinite `a` through its
/// eigen-decomposition, discarding eigenvalues below `tol * max(lambda_max, scale)`.
/// `scale` ties the cutoff to the problem `a` was reduced from, so a block
/// that is zero up to round-off is not inverted. Returns the solution and
/// whether any eigenvalue was discarded.
pub fn hermitian_pinv_solve(a: &CMatrix, b: &CMatrix, tol: f64, scale: f64) -> (CMatrix, bool) {
    let (vals, vecs) = hermitian_eig_ascending(a);
    let lmax = vals.iter().fold(scale.abs(), |acc, &v| acc.max(v.abs()));
    let mut truncated = false;
    let proj = vecs.adjoint() * b;
    let mut scaled = proj.clone();
    for (i, &lam) in vals.iter().enumerate() {
        let inv = if lmax > 0.0 && lam > tol * lmax {
            1.0 / lam
        } else {
            truncated = true;
            0.0
        };
        let mut row = scaled.row_mut(i);
        row *= Complex64::new(inv, 0.0);
    }
    (vecs * scaled, truncated)
}

/// Unitary matrix drawn from the Haar measure (QR of a Gaussian matrix with
/// the diagonal phases of `r` removed).
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = complex_gaussian(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d / mag;
            let mut col = q.column_mut(j);
            col *= phase;
        }
    }
    q
}
