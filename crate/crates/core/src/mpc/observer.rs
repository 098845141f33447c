//! State estimation for the internal state of an identified state-space model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::StateSpaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObserverKind {
    /// Predict/update recursion with isotropic noise covariances.
    Kalman { process_noise: f64, measurement_noise: f64 },
    /// Least-squares fit of the state to the last `window` samples
    /// (`0` means the model order).
    Direct { window: usize },
}

impl Default for ObserverKind {
    fn default() -> Self {
        ObserverKind::Kalman { process_noise: 1e-4, measurement_noise: 1e-4 }
    }
}

impl ObserverKind {
    pub fn validate(&self) -> Result<()> {
        if let ObserverKind::Kalman { process_noise, measurement_noise } = *self {
            if !(process_noise >= 0.0 && measurement_noise > 0.0) {
                return Err(Error::Config(
                    "kalman process noise must be ≥ 0 and measurement noise > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanFilter {
    /// Prior mean `x̂_{k|k−1}`.
    x: DVector<f64>,
    p: DMatrix<f64>,
    qn: DMatrix<f64>,
    rn: DMatrix<f64>,
}

impl KalmanFilter {
    /// Starts from `x0` with unit prior covariance.
    pub fn new(model: &StateSpaceModel, process_noise: f64, measurement_noise: f64, x0: DVector<f64>) -> Result<Self> {
        ObserverKind::Kalman { process_noise, measurement_noise }.validate()?;
        let n = model.order();
        if x0.len() != n {
            return Err(Error::Dimension(format!("initial state has {} entries, model order is {n}", x0.len())));
        }
        let q = model.num_outputs();
        Ok(KalmanFilter {
            x: x0,
            p: DMatrix::identity(n, n),
            qn: DMatrix::identity(n, n) * process_noise,
            rn: DMatrix::identity(q, q) * measurement_noise,
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Measurement update with `y = Cx + Du`; returns the posterior mean.
    pub fn update(&mut self, model: &StateSpaceModel, y: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let c = model.c();
        let innov = y - c * &self.x - model.d() * u;
        let pct = &self.p * c.transpose();
        let s = c * &pct + &self.rn;
        let s_inv = s.cholesky().ok_or_else(|| Error::Numeric("innovation covariance not positive definite".into()))?;
        let k = s_inv.solve(&pct.transpose()).transpose();
        self.x += &k * innov;
        // Joseph form keeps P symmetric positive semidefinite
        let n = self.x.len();
        let ikc = DMatrix::identity(n, n) - &k * c;
        self.p = &ikc * &self.p * ikc.transpose() + &k * &self.rn * k.transpose();
        Ok(self.x.clone())
    }

    pub fn predict(&mut self, model: &StateSpaceModel, u: &DVector<f64>) {
        self.x = model.a() * &self.x + model.b() * u;
        let p = model.a() * &self.p * model.a().transpose() + &self.qn;
        self.p = (&p + p.transpose()) * 0.5;
    }
}

/// State at the time of the last row of `y_hist`, fitted by least squares to
/// the whole window. Row `k` of `u_hist` is the input applied with `y_k`.
pub fn estimate_state_direct(
    model: &StateSpaceModel,
    u_hist: &DMatrix<f64>,
    y_hist: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = model.order();
    let w = y_hist.nrows();
    let q = model.num_outputs();
    let p = model.num_inputs();
    if u_hist.nrows() != w || u_hist.ncols() != p || y_hist.ncols() != q {
        return Err(Error::Dimension(format!(
            "history u {:?} / y {:?} for a model with {p} inputs and {q} outputs",
            u_hist.shape(),
            y_hist.shape()
        )));
    }
    if w * q < n {
        return Err(Error::Data(format!("direct estimation of {n} states from {q} outputs needs more than {w} samples")));
    }
    let obs = linalg::observability_matrix(model.a(), model.c(), w);
    if linalg::numerical_rank(&obs, 1e-10)? < n {
        return Err(Error::RankDeficient("model is not observable over the estimation window".into()));
    }
    // forced response from a zero initial state
    let mut xf = DVector::zeros(n);
    let mut resid = DMatrix::zeros(w * q, 1);
    for k in 0..w {
        let uk = u_hist.row(k).transpose();
        let yk = model.c() * &xf + model.d() * &uk;
        for i in 0..q {
            resid[(k * q + i, 0)] = y_hist[(k, i)] - yk[i];
        }
        if k + 1 < w {
            xf = model.a() * xf + model.b() * uk;
        }
    }
    let x_first = linalg::lstsq_full_rank(&obs, &resid, "direct state estimate")?;
    let mut x = x_first.column(0).clone_owned();
    for k in 0..w - 1 {
        x = model.a() * x + model.b() * u_hist.row(k).transpose();
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::{make_random_lti, prbs_signal};

    #[test]
    fn direct_estimate_predicts_future_outputs() {
        let model = make_random_lti(5, 4, 2, 2).unwrap();
        let u = prbs_signal(1, 30, 2, 1.0, 1);
        let x0 = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0]);
        let y = model.simulate(&u, &x0).unwrap();
        let w = 8;
        let xhat = estimate_state_direct(&model, &u.rows(0, w).clone_owned(), &y.rows(0, w).clone_owned()).unwrap();
        // continue from the last window sample
        let rest = model.simulate(&u.rows(w - 1, 30 - w + 1).clone_owned(), &xhat).unwrap();
        assert!((rest - y.rows(w - 1, 30 - w + 1)).amax() < 1e-8);
    }

    #[test]
    fn unobservable_model_is_rejected() {
        let base = make_random_lti(5, 3, 1, 1).unwrap();
        let model = StateSpaceModel::new(
            base.a().clone(),
            base.b().clone(),
            DMatrix::zeros(1, 3),
            base.d().clone(),
            1.0,
        )
        .unwrap();
        let err = estimate_state_direct(&model, &DMatrix::zeros(5, 1), &DMatrix::zeros(5, 1)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn short_history_is_rejected() {
        let model = make_random_lti(5, 4, 1, 1).unwrap();
        assert!(estimate_state_direct(&model, &DMatrix::zeros(3, 1), &DMatrix::zeros(3, 1)).is_err());
    }
}
