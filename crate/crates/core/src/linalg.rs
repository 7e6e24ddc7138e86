//! Small dense complex linear-algebra helpers on top of `nalgebra`.
//!
//! Decompositions here always return their spectra sorted in descending
//! order, which is the convention every caller in this crate relies on.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `exp(j*phase)`
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Frobenius norm squared.
pub fn fro2(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest absolute deviation from Hermitian symmetry, relative to the
/// Frobenius norm (0 for the zero matrix).
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let scale = fro2(m).sqrt();
    if scale == 0.0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        // symmetrize so tiny asymmetries from accumulation never leak in
        let sym = (m + m.adjoint()).map(|z| z * 0.5);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    /// `U diag(values) U^H`
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for c in 0..n {
            let v = self.values[c];
            scaled.column_mut(c).iter_mut().for_each(|z| *z *= v);
        }
        scaled * self.vectors.adjoint()
    }
}

/// Singular value decomposition with singular values descending.
///
/// `right` always holds a full `ncols x ncols` unitary basis: when the input
/// is wide the trailing columns span its null space.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub values: Vec<f64>,
    /// Left singular vectors (`nrows x min(nrows, ncols)`).
    pub left: CMatrix,
    /// Right singular vectors (`ncols x ncols`).
    pub right: CMatrix,
}

impl SortedSvd {
    pub fn new(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        // Pad wide inputs with zero rows so the decomposition yields a full
        // right basis; padding never changes the right singular vectors.
        let padded = if rows < cols {
            let mut p = CMatrix::zeros(cols, cols);
            p.view_mut((0, 0), (rows, cols)).copy_from(m);
            p
        } else {
            m.clone()
        };
        let svd = SVD::new(padded, true, true);
        let u = svd.u.expect("left vectors requested");
        let vt = svd.v_t.expect("right vectors requested");
        let sv = svd.singular_values;
        let n = sv.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

        let values: Vec<f64> = order.iter().take(k).map(|&i| sv[i]).collect();
        let left = CMatrix::from_fn(rows, k, |r, c| u[(r, order[c])]);
        // For tall inputs the thin V is already square (cols x cols).
        let right = CMatrix::from_fn(cols, cols, |r, c| vt[(order[c], r)].conj());
        Self { values, left, right }
    }
}

/// `log2 |det(m)|` via LU; `None` when the matrix is singular.
pub fn log2_abs_det(m: &CMatrix) -> Option<f64> {
    let det = m.clone().lu().determinant();
    let mag = det.norm();
    if mag == 0.0 || !mag.is_finite() {
        None
    } else {
        Some(mag.log2())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut s = seed;
        CMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            Complex64::new(a, b)
        })
    }

    #[test]
    fn eigen_reconstructs_and_sorts() {
        let a = sample(6, 6, 3);
        let h = &a * a.adjoint();
        let eig = HermitianEigen::new(&h);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let err = fro2(&(eig.reconstruct() - &h)).sqrt() / fro2(&h).sqrt();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn svd_wide_gives_null_space() {
        let a = sample(3, 5, 9);
        let svd = SortedSvd::new(&a);
        assert_eq!(svd.values.len(), 3);
        assert_eq!(svd.right.shape(), (5, 5));
        assert!(svd.values.windows(2).all(|w| w[0] >= w[1]));
        let gram = svd.right.adjoint() * &svd.right;
        assert!(fro2(&(gram - CMatrix::identity(5, 5))).sqrt() < 1e-12);
        let tail = svd.right.columns(3, 2).into_owned();
        assert!(fro2(&(&a * tail)).sqrt() < 1e-12);
    }

    #[test]
    fn svd_tall_matches_input() {
        let a = sample(5, 3, 17);
        let svd = SortedSvd::new(&a);
        let s = CMatrix::from_fn(3, 3, |i, j| if i == j { Complex64::new(svd.values[i], 0.0) } else { ZERO });
        let rebuilt = &svd.left * s * svd.right.adjoint();
        assert!(fro2(&(rebuilt - &a)).sqrt() < 1e-12);
    }

    #[test]
    fn hermitian_defect_detects_asymmetry() {
        let mut h = CMatrix::identity(3, 3);
        assert_eq!(hermitian_defect(&h), 0.0);
        h[(0, 1)] = Complex64::new(0.0, 1.0);
        assert!(hermitian_defect(&h) > 0.1);
    }
}
