//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes and clips eigenvalues from below at `floor`.
pub fn clip_psd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order. Each eigenvector is signed so that its largest-magnitude
/// entry is nonnegative (first such entry on ties).
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub(crate) fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if !col.is_empty() && col[best] < 0.0 {
        col.neg_mut();
    }
}

/// Builds the `kP x kP` companion matrix of a VAR(P) with lag matrices
/// `phi[0..P]`, each `k x k`.
pub fn companion(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phi.len();
    assert!(p > 0, "companion of an empty lag list");
    let k = phi[0].nrows();
    let mut a = DMatrix::zeros(k * p, k * p);
    for (l, m) in phi.iter().enumerate() {
        a.view_mut((0, l * k), (k, k)).copy_from(m);
    }
    for l in 1..p {
        a.view_mut((l * k, (l - 1) * k), (k, k))
            .fill_with_identity();
    }
    a
}

/// Spectral radius of an arbitrary square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves `a x = b` for a symmetric positive (semi)definite `a`, adding a
/// growing diagonal jitter when the Cholesky factorization fails.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = (a.trace().abs() / a.nrows().max(1) as f64).max(1e-300);
    let mut jitter = scale * 1e-12;
    for _ in 0..8 {
        let mut aj = a.clone();
        for i in 0..aj.nrows() {
            aj[(i, i)] += jitter;
        }
        if let Some(ch) = aj.cholesky() {
            return Some(ch.solve(b));
        }
        jitter *= 100.0;
    }
    None
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_layout() {
        let phi = vec![
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::from_element(2, 2, 2.0),
            DMatrix::from_element(2, 2, 3.0),
        ];
        let a = companion(&phi);
        assert_eq!(a.shape(), (6, 6));
        assert_eq!(a[(0, 4)], 3.0);
        assert_eq!(a[(2, 0)], 1.0);
        assert_eq!(a[(2, 1)], 0.0);
        assert_eq!(a[(5, 3)], 1.0);
        assert_eq!(a[(5, 5)], 0.0);
        assert_eq!(a[(4, 4)], 0.0);
    }

    #[test]
    fn spectral_radius_of_rotation_and_ar2() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&rot) - 0.5).abs() < 1e-12);
        // x_t = 0.5 x_{t-1} + 0.3 x_{t-2}: roots of z^2 - 0.5 z - 0.3
        let a = companion(&[
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.3),
        ]);
        let expected = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
        assert!((spectral_radius(&a) - expected).abs() < 1e-12);
    }

    #[test]
    fn clip_psd_removes_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let c = clip_psd(&m, 1e-10);
        let eig = SymmetricEigen::new(c);
        assert!(eig.eigenvalues.min() >= 1e-10 - 1e-15);
        assert!((eig.eigenvalues.max() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sorted_eigen_is_descending_with_sign_fix() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sorted_symmetric_eigen(m);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(vecs[(1, 0)], 1.0);
        assert_eq!(vecs[(2, 1)], 1.0);
        assert_eq!(vecs[(0, 2)], 1.0);
    }
}
