//! Small dense linear-algebra helpers shared by the realization and
//! filtering code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

type Svd = SVD<f64, Dyn, Dyn>;

fn recompose_error(m: &DMatrix<f64>, svd: &Svd) -> f64 {
    match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u * DMatrix::from_diagonal(&svd.singular_values) * v_t - m).norm(),
        _ => f64::INFINITY,
    }
}

/// Full SVD whose factors are checked against `m`. If `U Σ Vᵀ` misses `m`,
/// it is recomputed with a tighter threshold, on `mᵀ` and with faer; the
/// most accurate candidate is kept.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let tol = 1e-12 * m.norm().max(f64::MIN_POSITIVE) * (m.nrows().max(m.ncols()) as f64);
    let first = m.clone().svd(true, true);
    let first_err = recompose_error(m, &first);
    if first_err <= tol {
        return first;
    }
    let mut best = (first_err, first);
    if let Some(tight) = m.clone().try_svd(true, true, 1e-20, 0) {
        let err = recompose_error(m, &tight);
        if err <= tol {
            return tight;
        }
        if err < best.0 {
            best = (err, tight);
        }
    }
    let t = m.transpose().svd(true, true);
    let flipped = Svd {
        u: t.v_t.map(|v| v.transpose()),
        v_t: t.u.map(|u| u.transpose()),
        singular_values: t.singular_values,
    };
    let err = recompose_error(m, &flipped);
    if err <= tol {
        return flipped;
    }
    if err < best.0 {
        best = (err, flipped);
    }
    if let Some(other) = faer_svd(m) {
        let err = recompose_error(m, &other);
        if err < best.0 {
            best = (err, other);
        }
    }
    best.1
}

fn faer_svd(m: &DMatrix<f64>) -> Option<Svd> {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = f.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    Some(Svd {
        u: Some(DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)])),
        v_t: Some(DMatrix::from_fn(k, m.ncols(), |i, j| v[(j, i)])),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
    })
}

/// Largest singular value; zero for empty or all-zero matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    svd(m).singular_values.max()
}

/// Spectral radius via the (real Schur based) complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorisation, retried once with a diagonal jitter of
/// `1e-9 · max(1, mean diagonal)`.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let n = m.nrows();
    let scale = (m.trace() / n.max(1) as f64).abs().max(1.0);
    let jittered = m + DMatrix::identity(n, n) * (1e-9 * scale);
    Cholesky::new(jittered)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rel_cutoff · σ_max` treated as zero.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = svd(m);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = rel_cutoff * smax;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (v_t.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reproduces_rank_deficient_hankel() {
        // g_j = C A^{j-1} B for a 2-state, 3-output, 3-input system,
        // arranged as a 9×9 block Hankel matrix of rank 2.
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.5, -0.5, 0.3]);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -0.4, 0.7, 0.2, 1.3, -0.9]);
        let c = DMatrix::from_row_slice(3, 2, &[0.8, -1.1, 0.5, 0.6, -0.3, 1.7]);
        let mut blocks = Vec::new();
        let mut ak = DMatrix::<f64>::identity(2, 2);
        for _ in 0..5 {
            blocks.push(&c * &ak * &b);
            ak = &a * ak;
        }
        let mut h = DMatrix::zeros(9, 9);
        for r in 0..3 {
            for col in 0..3 {
                h.view_mut((3 * r, 3 * col), (3, 3)).copy_from(&blocks[r + col]);
            }
        }
        let s = svd(&h);
        assert!(recompose_error(&h, &s) < 1e-10 * h.norm());
        let rank = s
            .singular_values
            .iter()
            .filter(|&&v| v > 1e-10 * s.singular_values.max())
            .count();
        assert_eq!(rank, 2);
    }

    #[test]
    fn svd_reproduces_wide_hankel() {
        // 1 output, 2 inputs, 2 states; every nalgebra variant misses this one
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.5781644069785242,
                0.797738103075309,
                -0.7416313555212459,
                -0.3755989111696793,
            ],
        );
        let b = DMatrix::from_row_slice(
            2,
            2,
            &[
                -1.5414610639715867,
                -1.5809749190125373,
                -1.690056555567277,
                -0.6654695823938916,
            ],
        );
        let c = DMatrix::from_row_slice(1, 2, &[0.9745424793014396, -1.572214323408505]);
        let mut blocks = Vec::new();
        let mut ak = DMatrix::<f64>::identity(2, 2);
        for _ in 0..5 {
            blocks.push(&c * &ak * &b);
            ak = &a * ak;
        }
        let mut h = DMatrix::zeros(3, 6);
        for r in 0..3 {
            for col in 0..3 {
                h.view_mut((r, 2 * col), (1, 2)).copy_from(&blocks[r + col]);
            }
        }
        let s = svd(&h);
        assert!(recompose_error(&h, &s) < 1e-12 * h.norm());
    }

    #[test]
    fn pinv_of_full_rank_is_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = pinv(&m, 1e-10);
        let id = &m * &p;
        assert!((id - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, 1e-10);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_scalar_is_abs() {
        assert_eq!(spectral_norm(&DMatrix::from_element(1, 1, -0.5)), 0.5);
        assert_eq!(spectral_norm(&DMatrix::zeros(2, 3)), 0.0);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_jitter(&m).is_some());
    }
}
