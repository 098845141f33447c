//! MIMO ARX models and their least-squares identification.
//!
//! Output `i` obeys
//!
//! ```text
//! y_i(k) + Σ_j Σ_{l=1..na[i][j]} a[i][j][l] y_j(k−l)
//!        = Σ_j Σ_{l=0..nb[i][j]−1} b[i][j][l] u_j(k−nk[i][j]−l)
//! ```
//!
//! so `na` is q×q while `nb` and `nk` are q×p. Each output row is an
//! independent linear regression.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::check_bounded;

/// Default polynomial orders for the robot case: na = nb = 8, nk = 1.
pub const DEFAULT_ORDER: usize = 8;
pub const DEFAULT_DELAY: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    na: Vec<Vec<usize>>,
    nb: Vec<Vec<usize>>,
    nk: Vec<Vec<usize>>,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<Vec<f64>>>,
    sample_time_s: f64,
}

/// Uniform order matrices: every entry of `na` is `na`, etc.
pub fn uniform_orders(
    q: usize,
    p: usize,
    na: usize,
    nb: usize,
    nk: usize,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    (vec![vec![na; q]; q], vec![vec![nb; p]; q], vec![vec![nk; p]; q])
}

impl ArxModel {
    pub fn new(
        na: Vec<Vec<usize>>,
        nb: Vec<Vec<usize>>,
        nk: Vec<Vec<usize>>,
        a: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<Vec<f64>>>,
        sample_time_s: f64,
    ) -> Result<Self> {
        let q = na.len();
        if q == 0 {
            return Err(Error::Dimension("ARX model needs at least one output".into()));
        }
        let p = nb.first().map(|r| r.len()).unwrap_or(0);
        if p == 0 {
            return Err(Error::Dimension("ARX model needs at least one input".into()));
        }
        let shape_ok = na.iter().all(|r| r.len() == q)
            && nb.len() == q
            && nk.len() == q
            && nb.iter().all(|r| r.len() == p)
            && nk.iter().all(|r| r.len() == p)
            && a.len() == q
            && b.len() == q
            && a.iter().all(|r| r.len() == q)
            && b.iter().all(|r| r.len() == p);
        if !shape_ok {
            return Err(Error::Dimension("ARX order/coefficient arrays have inconsistent shapes".into()));
        }
        for i in 0..q {
            for j in 0..q {
                if a[i][j].len() != na[i][j] {
                    return Err(Error::Dimension(format!(
                        "a[{i}][{j}] has {} coefficients, na = {}",
                        a[i][j].len(),
                        na[i][j]
                    )));
                }
            }
            for j in 0..p {
                if b[i][j].len() != nb[i][j] {
                    return Err(Error::Dimension(format!(
                        "b[{i}][{j}] has {} coefficients, nb = {}",
                        b[i][j].len(),
                        nb[i][j]
                    )));
                }
                if nk[i][j] < 1 {
                    return Err(Error::Config(format!("nk[{i}][{j}] must be at least 1")));
                }
            }
        }
        let finite = a.iter().flatten().flatten().chain(b.iter().flatten().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("ARX coefficients must be finite".into()));
        }
        if !(sample_time_s > 0.0) {
            return Err(Error::Data(format!("sample time must be positive, got {sample_time_s}")));
        }
        Ok(ArxModel { na, nb, nk, a, b, sample_time_s })
    }

    pub fn num_outputs(&self) -> usize {
        self.na.len()
    }
    pub fn num_inputs(&self) -> usize {
        self.nb[0].len()
    }
    pub fn sample_time_s(&self) -> f64 {
        self.sample_time_s
    }
    pub fn na(&self) -> &[Vec<usize>] {
        &self.na
    }
    pub fn nb(&self) -> &[Vec<usize>] {
        &self.nb
    }
    pub fn nk(&self) -> &[Vec<usize>] {
        &self.nk
    }
    /// `a[i][j][l]` multiplies `y_j(k−1−l)` in the equation for output `i`.
    pub fn a_coeffs(&self) -> &[Vec<Vec<f64>>] {
        &self.a
    }
    /// `b[i][j][l]` multiplies `u_j(k−nk[i][j]−l)` in the equation for output `i`.
    pub fn b_coeffs(&self) -> &[Vec<Vec<f64>>] {
        &self.b
    }

    /// Length of history needed to evaluate one step.
    pub fn max_lag(&self) -> usize {
        let out_lag = self.na.iter().flatten().copied().max().unwrap_or(0);
        let in_lag = self
            .nb
            .iter()
            .flatten()
            .zip(self.nk.iter().flatten())
            .filter(|(&nb, _)| nb > 0)
            .map(|(&nb, &nk)| nk + nb - 1)
            .max()
            .unwrap_or(0);
        out_lag.max(in_lag).max(1)
    }

    /// Flattened parameter vector of output row `i`, in regressor order.
    pub fn row_parameters(&self, i: usize) -> Vec<f64> {
        self.a[i].iter().flatten().chain(self.b[i].iter().flatten()).copied().collect()
    }

    /// One-step output from past outputs and inputs (rows oldest → newest,
    /// the last row being time k−1). Noise term is zero.
    pub fn one_step(&self, y_past: &DMatrix<f64>, u_past: &DMatrix<f64>) -> Result<DVector<f64>> {
        let lag = self.max_lag();
        if y_past.nrows() < lag || u_past.nrows() < lag {
            return Err(Error::Data(format!(
                "ARX step needs {lag} past samples, got {} outputs / {} inputs",
                y_past.nrows(),
                u_past.nrows()
            )));
        }
        if y_past.ncols() != self.num_outputs() || u_past.ncols() != self.num_inputs() {
            return Err(Error::Dimension("ARX history has the wrong channel count".into()));
        }
        let ylast = y_past.nrows();
        let ulast = u_past.nrows();
        let q = self.num_outputs();
        let mut out = DVector::zeros(q);
        for i in 0..q {
            out[i] = self.eval_row(i, |j, lag| y_past[(ylast - lag, j)], |j, lag| u_past[(ulast - lag, j)]);
        }
        Ok(out)
    }

    fn eval_row(&self, i: usize, y_at: impl Fn(usize, usize) -> f64, u_at: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (j, coeffs) in self.a[i].iter().enumerate() {
            for (l, c) in coeffs.iter().enumerate() {
                acc -= c * y_at(j, l + 1);
            }
        }
        for (j, coeffs) in self.b[i].iter().enumerate() {
            let nk = self.nk[i][j];
            for (l, c) in coeffs.iter().enumerate() {
                acc += c * u_at(j, nk + l);
            }
        }
        acc
    }

    /// Free-run simulation; the first `window.nrows()` outputs are copied
    /// from `window` (at least [`ArxModel::max_lag`] rows).
    pub fn simulate(&self, u: &DMatrix<f64>, window: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let lag = self.max_lag();
        let q = self.num_outputs();
        if u.ncols() != self.num_inputs() {
            return Err(Error::Dimension(format!(
                "input has {} channels, model expects {}",
                u.ncols(),
                self.num_inputs()
            )));
        }
        if window.ncols() != q || window.nrows() < lag {
            return Err(Error::Dimension(format!(
                "ARX lag window must be at least {lag}×{q}, got {}×{}",
                window.nrows(),
                window.ncols()
            )));
        }
        let m = u.nrows();
        let seed = window.nrows().min(m);
        let mut y = DMatrix::zeros(m, q);
        y.rows_mut(0, seed).copy_from(&window.rows(0, seed));
        for k in seed..m {
            for i in 0..q {
                let v = self.eval_row(
                    i,
                    |j, l| y[(k - l, j)],
                    |j, l| if k >= l { u[(k - l, j)] } else { 0.0 },
                );
                y[(k, i)] = v;
            }
            check_bounded(k, y.row(k).iter())?;
        }
        Ok(y)
    }
}

/// Regressor matrix for output row `i` over samples `lag..m`.
fn regressors(
    y: &DMatrix<f64>,
    u: &DMatrix<f64>,
    na_row: &[usize],
    nb_row: &[usize],
    nk_row: &[usize],
    lag: usize,
) -> DMatrix<f64> {
    let m = y.nrows();
    let cols: usize = na_row.iter().sum::<usize>() + nb_row.iter().sum::<usize>();
    let rows = m - lag;
    let mut phi = DMatrix::zeros(rows, cols);
    for (r, k) in (lag..m).enumerate() {
        let mut c = 0;
        for (j, &na) in na_row.iter().enumerate() {
            for l in 1..=na {
                phi[(r, c)] = -y[(k - l, j)];
                c += 1;
            }
        }
        for (j, (&nb, &nk)) in nb_row.iter().zip(nk_row).enumerate() {
            for l in 0..nb {
                phi[(r, c)] = u[(k - nk - l, j)];
                c += 1;
            }
        }
    }
    phi
}

/// Least-squares ARX fit minimizing the one-step equation error of each output.
pub fn identify_arx(
    ds: &Dataset,
    na: &[Vec<usize>],
    nb: &[Vec<usize>],
    nk: &[Vec<usize>],
) -> Result<ArxModel> {
    let q = ds.num_outputs();
    let p = ds.num_inputs();
    if na.len() != q || na.iter().any(|r| r.len() != q) {
        return Err(Error::Dimension(format!("na must be {q}×{q}")));
    }
    if nb.len() != q || nk.len() != q || nb.iter().chain(nk).any(|r| r.len() != p) {
        return Err(Error::Dimension(format!("nb and nk must be {q}×{p}")));
    }
    if nk.iter().flatten().any(|&d| d < 1) {
        return Err(Error::Config("input delays nk must be at least 1".into()));
    }
    // template model only for max_lag
    let zeros_a = na.iter().map(|r| r.iter().map(|&n| vec![0.0; n]).collect()).collect();
    let zeros_b = nb.iter().map(|r| r.iter().map(|&n| vec![0.0; n]).collect()).collect();
    let template = ArxModel::new(na.to_vec(), nb.to_vec(), nk.to_vec(), zeros_a, zeros_b, ds.sample_time_s())?;
    let lag = template.max_lag();
    let m = ds.len();
    if m <= lag + 10 {
        return Err(Error::Data(format!("{m} samples is too few for ARX with maximum lag {lag}")));
    }

    let mut a = Vec::with_capacity(q);
    let mut b = Vec::with_capacity(q);
    for i in 0..q {
        let phi = regressors(ds.y(), ds.u(), &na[i], &nb[i], &nk[i], lag);
        let target = ds.y().view((lag, i), (m - lag, 1)).clone_owned();
        let theta = linalg::lstsq_full_rank(&phi, &target, &format!("ARX regressor for output {}", i + 1))?;
        let coeffs: Vec<f64> = theta.column(0).iter().copied().collect();
        let mut it = coeffs.into_iter();
        let a_row: Vec<Vec<f64>> = na[i].iter().map(|&n| it.by_ref().take(n).collect()).collect();
        let b_row: Vec<Vec<f64>> = nb[i].iter().map(|&n| it.by_ref().take(n).collect()).collect();
        a.push(a_row);
        b.push(b_row);
    }
    ArxModel::new(na.to_vec(), nb.to_vec(), nk.to_vec(), a, b, ds.sample_time_s())
}

/// One-step-ahead residuals of `model` on `ds` together with the regressors
/// of output `i` (used to check normal-equation optimality).
pub fn one_step_residuals(model: &ArxModel, ds: &Dataset, i: usize) -> (DMatrix<f64>, DVector<f64>) {
    let lag = model.max_lag();
    let phi = regressors(ds.y(), ds.u(), &model.na[i], &model.nb[i], &model.nk[i], lag);
    let theta = DVector::from_vec(model.row_parameters(i));
    let target = ds.y().view((lag, i), (ds.len() - lag, 1)).column(0).into_owned();
    let resid = target - &phi * theta;
    (phi, resid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siso(a: Vec<f64>, b: Vec<f64>) -> ArxModel {
        ArxModel::new(vec![vec![a.len()]], vec![vec![b.len()]], vec![vec![1]], vec![vec![a]], vec![vec![b]], 0.03)
            .unwrap()
    }

    #[test]
    fn pure_delay_gain_is_recovered() {
        let u = DMatrix::from_fn(60, 1, |i, _| ((i * 37 % 11) as f64) - 5.0);
        let y = DMatrix::from_fn(60, 1, |i, _| if i == 0 { 0.0 } else { 2.0 * u[(i - 1, 0)] });
        let ds = Dataset::from_matrices(0.03, u, y).unwrap();
        let m = identify_arx(&ds, &[vec![0]], &[vec![1]], &[vec![1]]).unwrap();
        assert!((m.b_coeffs()[0][0][0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_input_is_rank_error() {
        let u = DMatrix::zeros(80, 1);
        let y = DMatrix::from_fn(80, 1, |i, _| (i as f64 * 0.3).sin());
        let ds = Dataset::from_matrices(0.03, u, y).unwrap();
        let err = identify_arx(&ds, &[vec![2]], &[vec![2]], &[vec![1]]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn one_step_is_linear_and_zero_at_rest() {
        let m = siso(vec![-0.5, 0.1], vec![1.0, 0.3]);
        let z = m.one_step(&DMatrix::zeros(2, 1), &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(z[0], 0.0);
        let yp = DMatrix::from_column_slice(2, 1, &[0.2, -0.4]);
        let up = DMatrix::from_column_slice(2, 1, &[1.5, 0.7]);
        let one = m.one_step(&yp, &up).unwrap();
        let two = m.one_step(&(yp * 2.0), &(up * 2.0)).unwrap();
        assert!((two[0] - 2.0 * one[0]).abs() < 1e-15);
        assert!(m.one_step(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn rejects_zero_delay() {
        let err = ArxModel::new(vec![vec![0]], vec![vec![1]], vec![vec![0]], vec![vec![vec![]]], vec![vec![vec![1.0]]], 0.1);
        assert!(err.is_err());
    }
}
