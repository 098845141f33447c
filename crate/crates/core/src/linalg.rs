//! Dense linear-algebra helpers shared by the identification and control code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold on the pivoted-QR diagonal used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `A X ≈ B` produced by [`lstsq`].
#[derive(Debug, Clone)]
pub struct Lstsq {
    /// `ncols(A) × ncols(B)` coefficient matrix; rows of dropped columns are zero.
    pub coeffs: DMatrix<f64>,
    pub rank: usize,
    /// Columns of `A` judged linearly dependent on the others (zeroed in `coeffs`).
    pub dropped: Vec<usize>,
}

/// Solves `min ‖A X − B‖_F` with a column-pivoted Householder QR.
///
/// Columns whose pivoted diagonal falls below `rel_tol · |R₀₀|` are treated as
/// dependent and receive zero coefficients.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Lstsq {
    let (m, n) = a.shape();
    assert_eq!(b.nrows(), m, "lstsq: row mismatch");
    let nrhs = b.ncols();
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // pivot on the largest remaining column norm
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let s = r.view((k, j), (m - k, 1)).norm_squared();
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }

        let alpha = r.view((k, k), (m - k, 1)).norm();
        if alpha == 0.0 {
            diag.push(0.0);
            continue;
        }
        let x0 = r[(k, k)];
        let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
        let mut v = r.view((k, k), (m - k, 1)).clone_owned();
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            let beta = 2.0 / vnorm2;
            for j in k..n {
                let mut col = r.view_mut((k, j), (m - k, 1));
                let d = v.dot(&col) * beta;
                col.iter_mut().zip(v.iter()).for_each(|(c, vi)| *c -= d * vi);
            }
            for j in 0..nrhs {
                let mut col = qtb.view_mut((k, j), (m - k, 1));
                let d = v.dot(&col) * beta;
                col.iter_mut().zip(v.iter()).for_each(|(c, vi)| *c -= d * vi);
            }
        }
        diag.push(r[(k, k)]);
    }

    let scale = diag.first().map(|d| d.abs()).unwrap_or(0.0);
    let rank = if scale == 0.0 {
        0
    } else {
        diag.iter().take_while(|d| d.abs() > rel_tol * scale).count()
    };

    let mut coeffs = DMatrix::zeros(n, nrhs);
    for c in 0..nrhs {
        let mut z = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut s = qtb[(i, c)];
            for j in (i + 1)..rank {
                s -= r[(i, j)] * z[j];
            }
            z[i] = s / r[(i, i)];
        }
        for (k, zk) in z.into_iter().enumerate() {
            coeffs[(perm[k], c)] = zk;
        }
    }
    let mut dropped: Vec<usize> = perm[rank..].to_vec();
    dropped.sort_unstable();
    Lstsq { coeffs, rank, dropped }
}

/// Like [`lstsq`] but fails unless `A` has full column rank.
pub fn lstsq_full_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::RankDeficient(format!(
            "{what}: {} equations for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    let sol = lstsq(a, b, RANK_TOL);
    if sol.rank < a.ncols() {
        return Err(Error::RankDeficient(format!(
            "{what}: rank {} < {} (dependent columns {:?})",
            sol.rank,
            a.ncols(),
            sol.dropped
        )));
    }
    Ok(sol.coeffs)
}

/// Thin SVD with singular values sorted descending and a deterministic sign
/// convention: the largest-magnitude entry of each left singular vector is positive.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd_sorted(a: &DMatrix<f64>) -> Result<SortedSvd> {
    let svd = nalgebra::linalg::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD failed to converge".into()))?;
    let mut u = svd.u.ok_or_else(|| Error::Numeric("SVD returned no U".into()))?;
    let mut v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD returned no Vᵀ".into()))?;
    let s = svd.singular_values;
    for k in 0..s.len() {
        let col = u.column(k);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if col[imax] < 0.0 {
            u.column_mut(k).neg_mut();
            v_t.row_mut(k).neg_mut();
        }
    }
    Ok(SortedSvd { u, s, v_t })
}

/// Moore–Penrose pseudo-inverse dropping singular values below `rel_tol · σ₁`.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let svd = svd_sorted(a)?;
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for k in 0..svd.s.len() {
        let sk = svd.s[k];
        if sk > rel_tol * smax && sk > 0.0 {
            out += svd.v_t.row(k).transpose() * svd.u.column(k).transpose() / sk;
        }
    }
    Ok(out)
}

/// Numerical rank from singular values relative to the largest one.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if a.is_empty() {
        return Ok(0);
    }
    let svd = svd_sorted(a)?;
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(svd.s.iter().filter(|&&s| s > rel_tol * smax).count())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `[B, AB, …, Aⁿ⁻¹B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.ncols();
    let mut out = DMatrix::zeros(n, n * p);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * p), (n, p)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// `[C; CA; …; CAᵏ⁻¹]` with `k` block rows.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let q = c.nrows();
    let mut out = DMatrix::zeros(k * q, n);
    let mut blk = c.clone();
    for i in 0..k {
        out.view_mut((i * q, 0), (q, n)).copy_from(&blk);
        blk = &blk * a;
    }
    out
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lstsq_matches_normal_equations_on_full_rank() {
        let a = DMatrix::from_row_slice(5, 3, &[
            1.0, 2.0, 0.5, //
            0.0, 1.0, -1.0, //
            3.0, -1.0, 2.0, //
            1.0, 1.0, 1.0, //
            -2.0, 0.5, 4.0,
        ]);
        let b = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let sol = lstsq(&a, &b, RANK_TOL);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let x = ata.lu().solve(&atb).unwrap();
        assert_eq!(sol.rank, 3);
        assert_relative_eq!(sol.coeffs, x, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_flags_duplicated_column() {
        let a = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => i as f64,
            1 => (i as f64).sin(),
            _ => i as f64,
        });
        let b = DMatrix::from_fn(10, 1, |i, _| 2.0 * i as f64 + (i as f64).sin());
        let sol = lstsq(&a, &b, RANK_TOL);
        assert_eq!(sol.rank, 2);
        assert_eq!(sol.dropped.len(), 1);
        let resid = &a * &sol.coeffs - &b;
        assert!(resid.norm() < 1e-10);
        assert!(lstsq_full_rank(&a, &b, "dup").is_err());
    }

    #[test]
    fn svd_sign_convention_is_deterministic() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, -4.0, 1.0]);
        let s1 = svd_sorted(&a).unwrap();
        let s2 = svd_sorted(&(-&a)).unwrap();
        for k in 0..2 {
            let col = s1.u.column(k);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
            assert_relative_eq!(s1.u.column(k), s2.u.column(k), epsilon = 1e-12);
        }
        let recon = &s1.u * DMatrix::from_diagonal(&s1.s) * &s1.v_t;
        assert_relative_eq!(recon, a, epsilon = 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = pinv(&a, 1e-12).unwrap();
        assert_relative_eq!(&a * &p * &a, a, epsilon = 1e-12);
    }
}
