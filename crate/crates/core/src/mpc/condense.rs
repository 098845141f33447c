//! Condensed horizon QP in the input increments `Δu₀ … Δu_{N−1}`.
//!
//! Predictions follow an affine, possibly time-varying model
//! `x_{k+1} = A_k x_k + B_k u_k + c_k`, `y_k = C x_k + D u_k`, with
//! `u_k = u_prev + Δu₀ + … + Δu_k`. The terminal output `y_N` reuses `u_{N−1}`
//! for the feedthrough. The cost is
//! `Σ_{k<N} ‖y_k − r_k‖²_Q + ‖y_N − r_N‖²_{Qf} + Σ ‖Δu_k‖²_R`
//! plus an exact penalty on one slack per output that softens the output
//! bounds on `y₁ … y_N`.

use nalgebra::{DMatrix, DVector};

use super::qp::Qp;
use super::MpcConfig;
use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// `x_{k+1} = A x_k + B u_k + c`
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// The QP together with the affine output prediction `Y = S z + s` (stacked
/// `y₀ … y_N`) needed to evaluate the result.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub qp: Qp,
    pub horizon: usize,
    pub num_inputs: usize,
    pub num_outputs: usize,
    pub u_prev: DVector<f64>,
    pred_gain: DMatrix<f64>,
    pred_free: DVector<f64>,
    cost_const: f64,
}

impl MpcQp {
    /// Number of `Δu` entries; slacks follow them in the decision vector.
    pub fn num_increments(&self) -> usize {
        self.horizon * self.num_inputs
    }

    /// `(N+1) × q` predicted outputs for the increments in `z`.
    pub fn predicted_outputs(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let du = z.rows(0, self.num_increments());
        let y = &self.pred_gain * du + &self.pred_free;
        DMatrix::from_fn(self.horizon + 1, self.num_outputs, |k, i| y[k * self.num_outputs + i])
    }

    /// `N × p` absolute inputs for the increments in `z`.
    pub fn inputs(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let p = self.num_inputs;
        let mut out = DMatrix::zeros(self.horizon, p);
        let mut u = self.u_prev.clone();
        for k in 0..self.horizon {
            u += z.rows(k * p, p);
            out.row_mut(k).copy_from(&u.transpose());
        }
        out
    }

    /// Tracking plus rate cost, slack penalty excluded.
    pub fn tracking_cost(&self, z: &DVector<f64>) -> f64 {
        let nz = self.num_increments();
        let zs = z.rows(0, nz).clone_owned();
        let mut qp0 = self.qp.clone();
        // objective restricted to the increment block, slack part removed
        qp0.h = self.qp.h.view((0, 0), (nz, nz)).clone_owned();
        qp0.g = self.qp.g.rows(0, nz).clone_owned();
        qp0.objective(&zs) + self.cost_const
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!("{what} is {:?}, expected {n}×{n}", m.shape())));
    }
    Ok(())
}

/// Condenses a horizon of affine steps into a QP.
pub fn build_qp_affine(
    steps: &[AffineStep],
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
) -> Result<MpcQp> {
    cfg.validate()?;
    let n_h = cfg.horizon;
    let (q, nx) = c.shape();
    let p = d.ncols();
    if steps.len() != n_h {
        return Err(Error::Dimension(format!("{} prediction steps for horizon {n_h}", steps.len())));
    }
    if d.nrows() != q || x0.len() != nx || u_prev.len() != p {
        return Err(Error::Dimension(format!(
            "C {:?}, D {:?}, x0 {}, u_prev {}",
            c.shape(),
            d.shape(),
            x0.len(),
            u_prev.len()
        )));
    }
    if cfg.q.nrows() != q || cfg.r.nrows() != p {
        return Err(Error::Dimension(format!(
            "weights are for {} outputs and {} inputs, model has {q} and {p}",
            cfg.q.nrows(),
            cfg.r.nrows()
        )));
    }
    if reference.shape() != (n_h + 1, q) {
        return Err(Error::Dimension(format!("reference is {:?}, expected {}×{q}", reference.shape(), n_h + 1)));
    }
    for s in steps {
        check_square(&s.a, nx, "A")?;
        if s.b.shape() != (nx, p) || s.c.len() != nx {
            return Err(Error::Dimension(format!("step B {:?} / offset {}", s.b.shape(), s.c.len())));
        }
    }

    let nz = n_h * p;
    // x_k = Sx z + sx, u_k = u_prev + T_k z
    let mut sx = DMatrix::zeros(nx, nz);
    let mut fx = x0.clone();
    let mut pred_gain = DMatrix::zeros((n_h + 1) * q, nz);
    let mut pred_free = DVector::zeros((n_h + 1) * q);
    let t_block = |k: usize| {
        let mut t = DMatrix::zeros(p, nz);
        for j in 0..=k {
            for i in 0..p {
                t[(i, j * p + i)] = 1.0;
            }
        }
        t
    };
    let du_free = d * u_prev;
    for k in 0..=n_h {
        let tk = t_block(k.min(n_h - 1));
        let gain = c * &sx + d * &tk;
        let free = c * &fx + &du_free;
        pred_gain.rows_mut(k * q, q).copy_from(&gain);
        pred_free.rows_mut(k * q, q).copy_from(&free);
        if k < n_h {
            let st = &steps[k];
            sx = &st.a * &sx + &st.b * &tk;
            fx = &st.a * &fx + &st.b * u_prev + &st.c;
        }
    }

    let nv = nz + q;
    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    let mut cost_const = 0.0;
    for k in 0..=n_h {
        let w = if k == n_h { &cfg.qf } else { &cfg.q };
        let gk = pred_gain.rows(k * q, q);
        let ek = pred_free.rows(k * q, q) - reference.row(k).transpose();
        let wg = w * gk;
        h.view_mut((0, 0), (nz, nz)).gemm_tr(2.0, &gk, &wg, 1.0);
        g.rows_mut(0, nz).gemv_tr(2.0, &wg, &ek, 1.0);
        cost_const += ek.dot(&(w * &ek));
    }
    for k in 0..n_h {
        let mut blk = h.view_mut((k * p, k * p), (p, p));
        blk += &cfg.r * 2.0;
    }
    for i in 0..q {
        h[(nz + i, nz + i)] = 2.0 * cfg.slack_weight;
        g[nz + i] = cfg.slack_weight;
    }
    // symmetrize against round-off
    let h = (&h + h.transpose()) * 0.5;

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |row: DVector<f64>, b: f64| {
        rows.push(row);
        rhs.push(b);
    };
    for k in 0..n_h {
        for i in 0..p {
            let mut row = DVector::zeros(nv);
            for j in 0..=k {
                row[j * p + i] = 1.0;
            }
            push(row.clone(), cfg.u_max[i] - u_prev[i]);
            push(-row, u_prev[i] - cfg.u_min[i]);
        }
    }
    for k in 1..=n_h {
        for i in 0..q {
            let r = k * q + i;
            let mut row = DVector::zeros(nv);
            row.rows_mut(0, nz).copy_from(&pred_gain.row(r).transpose());
            row[nz + i] = -1.0;
            push(row.clone(), cfg.x_max[i] - pred_free[r]);
            let mut low = -row;
            low[nz + i] = -1.0;
            push(low, pred_free[r] - cfg.x_min[i]);
        }
    }
    for i in 0..q {
        let mut row = DVector::zeros(nv);
        row[nz + i] = -1.0;
        push(row, 0.0);
    }
    let a = DMatrix::from_fn(rows.len(), nv, |r, c| rows[r][c]);
    let qp = Qp { h, g, a, b: DVector::from_vec(rhs) };
    Ok(MpcQp {
        qp,
        horizon: n_h,
        num_inputs: p,
        num_outputs: q,
        u_prev: u_prev.clone(),
        pred_gain,
        pred_free,
        cost_const,
    })
}

/// Condensed QP for a linear state-space model.
pub fn build_qp(
    model: &StateSpaceModel,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
) -> Result<MpcQp> {
    let step = AffineStep { a: model.a().clone(), b: model.b().clone(), c: DVector::zeros(model.order()) };
    let steps = vec![step; cfg.horizon];
    build_qp_affine(&steps, model.c(), model.d(), cfg, x0, u_prev, reference)
}
