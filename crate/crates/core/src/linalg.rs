use nalgebra::{DMatrix, DVector};

/// Orthonormalizes `vectors` with two passes of modified Gram-Schmidt,
/// dropping vectors that are numerically dependent on earlier ones.
pub(crate) fn orthonormalize(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let scale = v.norm();
        if scale == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let n = w.norm();
        if n > 1e-10 * scale {
            basis.push(w / n);
        }
    }
    basis
}

/// Orthonormal basis (as matrix columns) of the orthogonal complement of
/// `span(constraints)` in `R^dim`.
pub(crate) fn complement_basis(constraints: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut basis = orthonormalize(constraints);
    let fixed = basis.len();
    for k in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut w = DVector::zeros(dim);
        w[k] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let n = w.norm();
        if n > 1e-8 {
            basis.push(w / n);
        }
    }
    let cols: Vec<DVector<f64>> = basis.split_off(fixed);
    DMatrix::from_columns(&cols)
}

/// Least-squares solution of a full-column-rank system via Householder QR.
pub(crate) fn lstsq_qr(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    qr.r().solve_upper_triangular(&qtb)
}

/// Singular values in descending order together with the matching right
/// singular vectors (as columns).
pub(crate) fn svd_sorted(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&k| svd.singular_values[k]).collect();
    let cols: Vec<DVector<f64>> = order
        .iter()
        .map(|&k| v_t.row(k).transpose().into_owned())
        .collect();
    (values, DMatrix::from_columns(&cols))
}

/// Largest singular value of `a` (spectral norm); 0 for an empty matrix.
pub(crate) fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
