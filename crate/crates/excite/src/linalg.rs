//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

pub type CMatrix = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    // nalgebra does not guarantee an ordering; sort ascending.
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0[0]
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let (v, _) = sym_eigen(m);
    v[v.len() - 1]
}

/// Orthonormal basis of the eigenspace within `gap` of the minimum eigenvalue.
pub fn min_eigenspace(m: &DMatrix<f64>, gap: f64) -> (f64, DMatrix<f64>) {
    let (vals, vecs) = sym_eigen(m);
    let lo = vals[0];
    let count = vals.iter().filter(|&&v| v <= lo + gap).count().max(1);
    (lo, vecs.columns(0, count).into_owned())
}

/// Spectral norm of a real matrix.
pub fn opnorm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Spectral norm of a complex matrix, via the top eigenvalue of `m^H m`.
pub fn opnorm_c(m: &CMatrix) -> f64 {
    let h = m.adjoint() * m;
    herm_top_eig(&h).0.max(0.0).sqrt()
}

/// Top eigenpair of a Hermitian PSD matrix by power iteration.
///
/// Deterministic start; sizes here are tiny (p, d <= a few dozen) so a fixed
/// iteration budget with one restart is plenty.
pub fn herm_top_eig(h: &CMatrix) -> (f64, CVector) {
    let n = h.nrows();
    assert_eq!(n, h.ncols());
    if n == 0 {
        return (0.0, CVector::zeros(0));
    }
    if n == 1 {
        return (h[(0, 0)].re, CVector::from_element(1, Complex::new(1.0, 0.0)));
    }
    let mut best: Option<(f64, CVector)> = None;
    for start in 0..2usize {
        let mut v = CVector::from_fn(n, |i, _| {
            Complex::new(1.0 + (i as f64 + 1.0) * 0.013 + start as f64 * 0.37, 0.17 * (i as f64 - 1.0))
        });
        let nv = v.norm();
        v /= Complex::new(nv, 0.0);
        let mut lam = 0.0;
        let mut prev = f64::INFINITY;
        for _ in 0..300 {
            let w = h * &v;
            let nw = w.norm();
            if nw < 1e-300 {
                lam = 0.0;
                break;
            }
            v = w / Complex::new(nw, 0.0);
            // For PSD input the iterate norm converges to the top eigenvalue.
            if (nw - prev).abs() <= 1e-14 * (1.0 + nw) {
                lam = nw;
                break;
            }
            prev = nw;
            lam = nw;
        }
        if lam > 0.0 {
            lam = (v.adjoint() * h * &v)[(0, 0)].re;
        }
        if best.as_ref().map_or(true, |(b, _)| lam > *b) {
            best = Some((lam, v));
        }
    }
    best.unwrap()
}

/// `log det(m)` for symmetric positive definite `m`; `None` if not SPD.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let (vals, _) = sym_eigen(m);
    if vals[0] <= 0.0 {
        return None;
    }
    Some(vals.iter().map(|v| v.ln()).sum())
}

/// Real part of a complex matrix.
pub fn re(m: &CMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

/// Largest imaginary-part magnitude, used to validate Hermitian-to-real casts.
pub fn max_imag(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

/// Lift a real matrix into the complex field.
pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| Complex::new(m[(i, j)], 0.0))
}
