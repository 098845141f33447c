//! Discrete-time model abstraction shared by the three identification methods.

mod io;

pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_SCHEMA};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arx::ArxModel;
use crate::dataset::{Dataset, TimeSeries};
use crate::error::{Error, Result};
use crate::linalg;
use crate::sindyc::SindyModel;

/// Free-run simulations abort once any state or output exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Number of leading output samples used to estimate a state-space initial state.
pub const X0_WINDOW: usize = 20;

/// `x_{k+1} = A x_k + B u_k`, `y_k = C x_k + D u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    sample_time_s: f64,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        sample_time_s: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}×{}, must be square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}×{}, expected {}×{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if !(sample_time_s > 0.0) {
            return Err(Error::Data(format!("sample time must be positive, got {sample_time_s}")));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !linalg::all_finite(m) {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
        }
        Ok(StateSpaceModel { a, b, c, d, sample_time_s })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn sample_time_s(&self) -> f64 {
        self.sample_time_s
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Impulse-response matrices `D, CB, CAB, …` (`count` of them).
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut cak = self.c.clone();
        for _ in 1..count {
            out.push(&cak * &self.b);
            cak = &cak * &self.a;
        }
        out
    }

    /// Free-run output for inputs `u` (m×p) from `x0`.
    pub fn simulate(&self, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.ncols() != self.num_inputs() {
            return Err(Error::Dimension(format!(
                "input has {} channels, model expects {}",
                u.ncols(),
                self.num_inputs()
            )));
        }
        if x0.len() != self.order() {
            return Err(Error::Dimension(format!(
                "initial state has {} entries, model order is {}",
                x0.len(),
                self.order()
            )));
        }
        let m = u.nrows();
        let mut y = DMatrix::zeros(m, self.num_outputs());
        let mut x = x0.clone();
        for k in 0..m {
            let uk = u.row(k).transpose();
            let yk = &self.c * &x + &self.d * &uk;
            check_bounded(k, yk.iter().chain(x.iter()))?;
            y.row_mut(k).copy_from(&yk.transpose());
            x = &self.a * &x + &self.b * &uk;
        }
        Ok(y)
    }

    /// Least-squares initial state from the first `window` samples of (u, y).
    pub fn estimate_initial_state(
        &self,
        u: &DMatrix<f64>,
        y: &DMatrix<f64>,
        window: usize,
    ) -> Result<DVector<f64>> {
        let n = self.order();
        let q = self.num_outputs();
        let w = window.min(u.nrows()).min(y.nrows());
        let zero = DVector::zeros(n);
        let forced = self.simulate(&u.rows(0, w).clone_owned(), &zero)?;
        let obs = linalg::observability_matrix(&self.a, &self.c, w);
        let mut rhs = DMatrix::zeros(w * q, 1);
        for k in 0..w {
            for i in 0..q {
                rhs[(k * q + i, 0)] = y[(k, i)] - forced[(k, i)];
            }
        }
        let sol = linalg::lstsq(&obs, &rhs, 1e-12);
        Ok(sol.coeffs.column(0).into_owned())
    }
}

pub(crate) fn check_bounded<'a>(step: usize, vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    for &v in vals {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step, value: v.abs() });
        }
    }
    Ok(())
}

/// Any identified model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    StateSpace(StateSpaceModel),
    Arx(ArxModel),
    Sindy(SindyModel),
}

impl ModelKind {
    pub fn num_inputs(&self) -> usize {
        match self {
            ModelKind::StateSpace(m) => m.num_inputs(),
            ModelKind::Arx(m) => m.num_inputs(),
            ModelKind::Sindy(m) => m.num_inputs(),
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            ModelKind::StateSpace(m) => m.num_outputs(),
            ModelKind::Arx(m) => m.num_outputs(),
            ModelKind::Sindy(m) => m.num_outputs(),
        }
    }

    pub fn sample_time_s(&self) -> f64 {
        match self {
            ModelKind::StateSpace(m) => m.sample_time_s(),
            ModelKind::Arx(m) => m.sample_time_s(),
            ModelKind::Sindy(m) => m.sample_time_s(),
        }
    }

    /// Tag used in model files and reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelKind::StateSpace(_) => "state_space",
            ModelKind::Arx(_) => "arx",
            ModelKind::Sindy(_) => "sindy",
        }
    }
}

impl From<StateSpaceModel> for ModelKind {
    fn from(m: StateSpaceModel) -> Self {
        ModelKind::StateSpace(m)
    }
}
impl From<ArxModel> for ModelKind {
    fn from(m: ArxModel) -> Self {
        ModelKind::Arx(m)
    }
}
impl From<SindyModel> for ModelKind {
    fn from(m: SindyModel) -> Self {
        ModelKind::Sindy(m)
    }
}

/// Starting point of a free-run simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// State vector (state-space order `n`, or `q` for SINDy models).
    State(DVector<f64>),
    /// Leading measured outputs (rows) that seed an ARX lag window.
    OutputWindow(DMatrix<f64>),
}

/// Free-run simulation of `model` driven by `u`; measured outputs are never fed back.
pub fn simulate(model: &ModelKind, u: &TimeSeries, init: &InitialCondition) -> Result<TimeSeries> {
    if u.channels() != model.num_inputs() {
        return Err(Error::Dimension(format!(
            "input has {} channels, model expects {}",
            u.channels(),
            model.num_inputs()
        )));
    }
    let y = simulate_matrix(model, u.values(), init)?;
    TimeSeries::with_prefix(u.sample_time_s(), y, "y")
}

pub fn simulate_matrix(
    model: &ModelKind,
    u: &DMatrix<f64>,
    init: &InitialCondition,
) -> Result<DMatrix<f64>> {
    match (model, init) {
        (ModelKind::StateSpace(m), InitialCondition::State(x0)) => m.simulate(u, x0),
        (ModelKind::Arx(m), InitialCondition::OutputWindow(w)) => m.simulate(u, w),
        (ModelKind::Sindy(m), InitialCondition::State(x0)) => m.simulate(u, x0),
        (m, _) => Err(Error::Dimension(format!(
            "initial condition variant does not match a {} model",
            m.kind_name()
        ))),
    }
}

/// Validation initial condition: least-squares state from the first
/// [`X0_WINDOW`] samples (state-space), measured lag window (ARX), or the
/// first measured output (SINDy).
pub fn initial_condition_from_data(model: &ModelKind, ds: &Dataset) -> Result<InitialCondition> {
    if ds.num_inputs() != model.num_inputs() || ds.num_outputs() != model.num_outputs() {
        return Err(Error::Dimension(format!(
            "dataset is {}-in/{}-out, model is {}-in/{}-out",
            ds.num_inputs(),
            ds.num_outputs(),
            model.num_inputs(),
            model.num_outputs()
        )));
    }
    match model {
        ModelKind::StateSpace(m) => Ok(InitialCondition::State(m.estimate_initial_state(
            ds.u(),
            ds.y(),
            X0_WINDOW,
        )?)),
        ModelKind::Arx(m) => {
            let lag = m.max_lag();
            if ds.len() <= lag {
                return Err(Error::Data(format!(
                    "{} samples cannot seed an ARX lag window of {lag}",
                    ds.len()
                )));
            }
            Ok(InitialCondition::OutputWindow(ds.y().rows(0, lag).clone_owned()))
        }
        ModelKind::Sindy(_) => Ok(InitialCondition::State(ds.y().row(0).transpose())),
    }
}

/// Normalized fit `100 (1 − ‖y − ŷ‖ / ‖y − ȳ‖)` per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub per_channel_fit: Vec<f64>,
    pub mean_fit: f64,
}

pub fn fit_percent(measured: &DMatrix<f64>, simulated: &DMatrix<f64>) -> Result<FitReport> {
    if measured.shape() != simulated.shape() {
        return Err(Error::Dimension(format!(
            "measured is {:?}, simulated is {:?}",
            measured.shape(),
            simulated.shape()
        )));
    }
    if measured.nrows() == 0 {
        return Err(Error::Data("empty trajectories".into()));
    }
    let mut per_channel_fit = Vec::with_capacity(measured.ncols());
    for c in 0..measured.ncols() {
        let y = measured.column(c);
        let mean = y.mean();
        let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        if spread == 0.0 {
            return Err(Error::Data(format!("fit undefined: measured channel {} is constant", c + 1)));
        }
        let err = (y - simulated.column(c)).norm();
        per_channel_fit.push(100.0 * (1.0 - err / spread));
    }
    let mean_fit = per_channel_fit.iter().sum::<f64>() / per_channel_fit.len() as f64;
    Ok(FitReport { per_channel_fit, mean_fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpaceModel {
        let m = |v| DMatrix::from_element(1, 1, v);
        StateSpaceModel::new(m(a), m(b), m(c), m(d), 0.1).unwrap()
    }

    #[test]
    fn geometric_decay() {
        let model = scalar(0.5, 0.0, 1.0, 0.0);
        let y = model.simulate(&DMatrix::zeros(5, 1), &DVector::from_element(1, 1.0)).unwrap();
        for k in 0..5 {
            assert_eq!(y[(k, 0)], 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn pure_feedthrough() {
        let model = scalar(0.0, 0.0, 0.0, 1.0);
        let u = DMatrix::from_fn(6, 1, |i, _| (i as f64).cos());
        let y = model.simulate(&u, &DVector::zeros(1)).unwrap();
        assert_eq!(y, u);
    }

    #[test]
    fn divergence_guard_trips() {
        let model = scalar(2.0, 0.0, 1.0, 0.0);
        let err = model.simulate(&DMatrix::zeros(100, 1), &DVector::from_element(1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn dimension_checks() {
        let m = |r, c| DMatrix::<f64>::zeros(r, c);
        assert!(StateSpaceModel::new(m(2, 2), m(3, 1), m(1, 2), m(1, 1), 0.1).is_err());
        assert!(StateSpaceModel::new(m(2, 2), m(2, 1), m(1, 3), m(1, 1), 0.1).is_err());
        let model = scalar(0.5, 1.0, 1.0, 0.0);
        assert!(model.simulate(&DMatrix::zeros(3, 2), &DVector::zeros(1)).is_err());
        let arx_init = InitialCondition::OutputWindow(DMatrix::zeros(1, 1));
        assert!(simulate_matrix(&model.into(), &DMatrix::zeros(3, 1), &arx_init).is_err());
    }

    #[test]
    fn fit_identities() {
        let y = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let yhat = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let r = fit_percent(&y, &yhat).unwrap();
        assert_relative_eq!(r.per_channel_fit[0], 100.0 * (1.0 - 1.0 / 2f64.sqrt()), epsilon = 1e-12);
        assert_eq!(fit_percent(&y, &y).unwrap().mean_fit, 100.0);
        let mean = DMatrix::from_element(3, 1, 1.0);
        assert_eq!(fit_percent(&y, &mean).unwrap().mean_fit, 0.0);
        let flat = DMatrix::from_element(3, 1, 4.0);
        assert!(matches!(fit_percent(&flat, &y), Err(Error::Data(_))));
    }

    #[test]
    fn x0_estimate_recovers_state() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let d = DMatrix::from_element(1, 1, 0.1);
        let model = StateSpaceModel::new(a, b, c, d, 0.1).unwrap();
        let x0 = DVector::from_column_slice(&[0.3, -0.8]);
        let u = DMatrix::from_fn(30, 1, |i, _| ((i * 7) % 5) as f64 - 2.0);
        let y = model.simulate(&u, &x0).unwrap();
        let est = model.estimate_initial_state(&u, &y, X0_WINDOW).unwrap();
        assert_relative_eq!(est, x0, epsilon = 1e-10);
    }
}
