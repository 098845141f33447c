//! Subspace identification (unweighted N4SID).
//!
//! The block-Hankel data matrix `[Uf; Up; Yp; Yf]` is compressed with an
//! LQ factorization. The oblique projection of future outputs onto past
//! data along future inputs is `Oᵢ = L₃₂ L₂₂⁺ Wp`; its SVD yields the
//! extended observability matrix `Γᵢ = U₁ S₁^½` and the state sequence
//! `Xᵢ = Γᵢ⁺ Oᵢ`. `(A, B, C, D)` then come from a single stacked least
//! squares fit of `[X'; Y] = [A B; C D] [X; U]` over consecutive states.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::StateSpaceModel;

/// Model order used for the robot data.
pub const DEFAULT_ORDER: usize = 8;
pub const DEFAULT_SV_THRESHOLD: f64 = 1e-4;
/// Relative singular-value tolerance for the input persistent-excitation check.
const PE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderSelection {
    Fixed(usize),
    /// Count of singular values above `sv_threshold · σ₁`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct N4sidConfig {
    /// `None` selects `max(2·order, 20)` (or 20 for automatic order).
    pub block_rows_i: Option<usize>,
    pub order: OrderSelection,
    pub sv_threshold: f64,
}

impl Default for N4sidConfig {
    fn default() -> Self {
        N4sidConfig {
            block_rows_i: None,
            order: OrderSelection::Fixed(DEFAULT_ORDER),
            sv_threshold: DEFAULT_SV_THRESHOLD,
        }
    }
}

impl N4sidConfig {
    pub fn block_rows(&self) -> usize {
        self.block_rows_i.unwrap_or(match self.order {
            OrderSelection::Fixed(n) => (2 * n).max(20),
            OrderSelection::Auto => 20,
        })
    }

    fn validate(&self) -> Result<()> {
        let i = self.block_rows();
        if i == 0 {
            return Err(Error::Config("block_rows_i must be at least 1".into()));
        }
        if let OrderSelection::Fixed(n) = self.order {
            if n == 0 {
                return Err(Error::Config("model order must be at least 1".into()));
            }
            if i < n + 1 {
                return Err(Error::Config(format!("block_rows_i = {i} must be at least order + 1 = {}", n + 1)));
            }
        }
        if !(self.sv_threshold > 0.0 && self.sv_threshold < 1.0) {
            return Err(Error::Config(format!("sv_threshold must lie in (0, 1), got {}", self.sv_threshold)));
        }
        Ok(())
    }
}

/// Identified model plus the singular values used for order selection.
#[derive(Debug, Clone)]
pub struct N4sidResult {
    pub model: StateSpaceModel,
    pub singular_values: Vec<f64>,
    pub block_rows: usize,
}

/// Hankel matrix with `rows` block rows and `cols` columns starting at
/// sample `start`; block row `r` of column `j` holds sample `start + j + r`.
fn hankel(series: &DMatrix<f64>, start: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let c = series.ncols();
    DMatrix::from_fn(rows * c, cols, |r, j| series[(start + j + r / c, r % c)])
}

/// `(i·c) × (m − 2i + 1)` block Hankel matrix of an `m × c` series: column
/// `j` stacks samples `j, …, j+i−1`, each sample's `c` channels contiguous.
pub fn block_hankel(series: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
    let m = series.nrows();
    if i == 0 {
        return Err(Error::Config("block rows must be at least 1".into()));
    }
    if m < 2 * i {
        return Err(Error::Data(format!("block Hankel with {i} block rows needs at least {} samples, got {m}", 2 * i)));
    }
    Ok(hankel(series, 0, i, m - 2 * i + 1))
}

/// Smallest `n ≥ 1` with `σ_{n+1} / σ₁ < threshold`; the full length when no gap exists.
pub fn estimate_order(singular_values: &[f64], threshold: f64) -> Result<usize> {
    let first = *singular_values
        .first()
        .ok_or_else(|| Error::Data("no singular values to select an order from".into()))?;
    if first <= 0.0 {
        return Ok(1);
    }
    for n in 1..singular_values.len() {
        if singular_values[n] / first < threshold {
            return Ok(n);
        }
    }
    Ok(singular_values.len())
}

pub fn identify_n4sid(ds: &Dataset, cfg: &N4sidConfig) -> Result<StateSpaceModel> {
    identify_n4sid_with_info(ds, cfg).map(|r| r.model)
}

pub fn identify_n4sid_with_info(ds: &Dataset, cfg: &N4sidConfig) -> Result<N4sidResult> {
    cfg.validate()?;
    let i = cfg.block_rows();
    let m = ds.len();
    let p = ds.num_inputs();
    let q = ds.num_outputs();
    if m < 4 * i {
        return Err(Error::Data(format!("N4SID with {i} block rows needs at least {} samples, got {m}", 4 * i)));
    }
    let j = m - 2 * i + 1;
    let u = ds.u();
    let y = ds.y();

    // [Uf; Up; Yp; Yf], scaled by 1/√j so L stays O(1)
    let ip = i * p;
    let iq = i * q;
    let rows = 2 * ip + 2 * iq;
    let mut h = DMatrix::zeros(rows, j);
    h.rows_mut(0, ip).copy_from(&hankel(u, i, i, j));
    h.rows_mut(ip, ip).copy_from(&hankel(u, 0, i, j));
    h.rows_mut(2 * ip, iq).copy_from(&hankel(y, 0, i, j));
    h.rows_mut(2 * ip + iq, iq).copy_from(&hankel(y, i, i, j));
    h /= (j as f64).sqrt();

    let l = h.transpose().qr().r().transpose();

    let input_block = l.view((0, 0), (2 * ip, 2 * ip)).clone_owned();
    let u_rank = linalg::numerical_rank(&input_block, PE_TOL)?;
    if u_rank < 2 * ip {
        return Err(Error::RankDeficient(format!(
            "input is not persistently exciting of order {}: input Hankel rank {u_rank} < {}",
            2 * i,
            2 * ip
        )));
    }

    let wp_rows = ip + iq;
    let l21 = l.view((ip, 0), (wp_rows, ip));
    let l22 = l.view((ip, ip), (wp_rows, wp_rows)).clone_owned();
    let l32 = l.view((ip + wp_rows, ip), (iq, wp_rows));

    let proj = l32 * linalg::pinv(&l22, 1e-10)?;
    let mut m_mat = DMatrix::zeros(iq, ip + wp_rows);
    m_mat.view_mut((0, 0), (iq, ip)).copy_from(&(&proj * l21));
    m_mat.view_mut((0, ip), (iq, wp_rows)).copy_from(&(&proj * &l22));
    let svd = linalg::svd_sorted(&m_mat)?;
    let sv: Vec<f64> = svd.s.iter().copied().collect();

    let n = match cfg.order {
        OrderSelection::Fixed(n) => n,
        OrderSelection::Auto => estimate_order(&sv, cfg.sv_threshold)?,
    };
    if n > sv.len() || n >= j {
        return Err(Error::Config(format!("order {n} exceeds what {i} block rows can resolve")));
    }
    if sv[n - 1] <= 0.0 {
        return Err(Error::RankDeficient(format!("projection has rank below the requested order {n}")));
    }

    // Xᵢ = S₁^{-½} U₁ᵀ Oᵢ with Oᵢ = L₃₂ L₂₂⁺ Wp (unscaled data)
    let u1 = svd.u.columns(0, n);
    let s_inv_half = DMatrix::from_diagonal(&svd.s.rows(0, n).map(|s| 1.0 / s.sqrt()));
    let wp = {
        let mut w = DMatrix::zeros(wp_rows, j);
        w.rows_mut(0, ip).copy_from(&hankel(u, 0, i, j));
        w.rows_mut(ip, iq).copy_from(&hankel(y, 0, i, j));
        w
    };
    let xi = s_inv_half * u1.transpose() * &proj * wp;

    // [x_{k+1}; y_k] = [A B; C D] [x_k; u_k] for k = i … i+j−2
    let cols = j - 1;
    let mut regress = DMatrix::zeros(cols, n + p);
    let mut target = DMatrix::zeros(cols, n + q);
    for c in 0..cols {
        let k = i + c;
        for r in 0..n {
            regress[(c, r)] = xi[(r, c)];
            target[(c, r)] = xi[(r, c + 1)];
        }
        for r in 0..p {
            regress[(c, n + r)] = u[(k, r)];
        }
        for r in 0..q {
            target[(c, n + r)] = y[(k, r)];
        }
    }
    let theta = linalg::lstsq_full_rank(&regress, &target, "N4SID state/input regressor")?.transpose();
    let a = theta.view((0, 0), (n, n)).clone_owned();
    let b = theta.view((0, n), (n, p)).clone_owned();
    let c = theta.view((n, 0), (q, n)).clone_owned();
    let d = theta.view((n, n), (q, p)).clone_owned();
    let model = StateSpaceModel::new(a, b, c, d, ds.sample_time_s())?;
    Ok(N4sidResult { model, singular_values: sv, block_rows: i })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hankel_small_cases() {
        let s = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let h = block_hankel(&s, 2).unwrap();
        assert_eq!(h, DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
        let h1 = block_hankel(&s, 1).unwrap();
        assert_eq!(h1.shape(), (1, 3));
        assert_eq!(h1.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        assert!(block_hankel(&s.rows(0, 3).clone_owned(), 2).is_err());
    }

    #[test]
    fn multichannel_hankel_layout() {
        let s = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let h = hankel(&s, 0, 2, 3);
        assert_eq!(h.column(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn order_from_gap() {
        assert_eq!(estimate_order(&[10.0, 9.0, 1e-8, 1e-9], 1e-4).unwrap(), 2);
        assert_eq!(estimate_order(&[1.0, 1.0, 1.0], 1e-4).unwrap(), 3);
        assert_eq!(estimate_order(&[1.0, 1e-9], 0.5).unwrap(), 1);
        assert!(estimate_order(&[], 1e-4).is_err());
    }

    #[test]
    fn constant_input_fails_excitation_check() {
        let m = 200;
        let u = DMatrix::from_element(m, 1, 1.0);
        let y = DMatrix::from_fn(m, 1, |k, _| 1.0 - 0.5f64.powi(k as i32));
        let ds = Dataset::from_matrices(0.1, u, y).unwrap();
        let cfg = N4sidConfig { block_rows_i: Some(5), order: OrderSelection::Fixed(1), sv_threshold: 1e-4 };
        let err = identify_n4sid(&ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
    }
}
