//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let n = sym.nrows();
    // Work at unit scale so tiny or huge inputs stay away from under- and overflow.
    let scale = max_abs(&sym);
    if scale == 0.0 || !scale.is_finite() {
        let eig = sym.symmetric_eigen();
        return (eig.eigenvalues, eig.eigenvectors);
    }
    let unit = sym / scale;
    let eig = unit.clone().symmetric_eigen();
    let (mut values, vectors) = if eig.eigenvalues.iter().all(|v| v.is_finite()) {
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        // The symmetric QR iteration occasionally returns non-finite values on matrices
        // with exactly decoupled blocks; the Schur form of a symmetric matrix is diagonal.
        let (q, t) = unit.schur().unpack();
        (t.diagonal(), q)
    };
    values *= scale;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
    let mut sorted_vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        sorted_vectors.set_column(k, &vectors.column(i));
    }
    (sorted, sorted_vectors)
}

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with a relative singular-value threshold.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&smax) if smax == 0.0 => 0,
        Some(&smax) => s.iter().filter(|&&v| v > rel_tol * smax).count(),
    }
}

/// Orthonormal basis of the null space, one vector per column.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to a square matrix so the SVD returns a complete right basis.
    let size = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(size, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let picked: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= rel_tol * smax)
        .collect();
    let mut basis = DMatrix::zeros(cols, picked.len());
    for (k, &i) in picked.iter().enumerate() {
        basis.set_column(k, &v_t.row(i).transpose());
    }
    basis
}

/// Orthonormal basis of the column space.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let picked: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > rel_tol * smax)
        .collect();
    let mut basis = DMatrix::zeros(m.nrows(), picked.len());
    for (k, &i) in picked.iter().enumerate() {
        basis.set_column(k, &u.column(i));
    }
    basis
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

/// `max |m_ij|`, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Symmetric square root of a symmetric positive definite matrix, and its inverse.
pub fn spd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (values, vectors) = sym_eigen(m);
    let sqrt = DMatrix::from_diagonal(&values.map(f64::sqrt));
    let inv_sqrt = DMatrix::from_diagonal(&values.map(|v| 1.0 / v.sqrt()));
    (
        &vectors * sqrt * vectors.transpose(),
        &vectors * inv_sqrt * vectors.transpose(),
    )
}

/// Matrix sign `V sign(Lambda) V^T` of a symmetric invertible matrix.
pub fn sym_sign(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let signs = DMatrix::from_diagonal(&values.map(f64::signum));
    &vectors * signs * vectors.transpose()
}

/// Flip eigenvector signs so that the first entry above `eps` in magnitude is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>, eps: f64) {
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > eps * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}
