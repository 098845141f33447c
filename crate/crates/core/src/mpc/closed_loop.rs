//! Closed-loop harness: MPC driving the snake plant at a fixed sample rate.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::nmpc::{nmpc_solve, NmpcOptions};
use super::observer::{estimate_state_direct, KalmanFilter, ObserverKind};
use super::reference::Reference;
use super::{mpc_step, MpcConfig, MpcStep, StepStatus};
use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::plantsim::{PlantState, SnakePlant, SnakePlantConfig, NUM_TENDONS};
use crate::sindyc::SindyModel;

#[derive(Debug, Clone)]
pub enum Controller {
    Linear { model: StateSpaceModel, observer: ObserverKind },
    Nonlinear { model: SindyModel, options: NmpcOptions },
}

impl Controller {
    fn dims(&self) -> (usize, usize, f64) {
        match self {
            Controller::Linear { model, .. } => (model.num_inputs(), model.num_outputs(), model.sample_time_s()),
            Controller::Nonlinear { model, .. } => (model.num_inputs(), model.num_outputs(), model.sample_time_s()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub reference: [f64; 2],
    pub q: [f64; 2],
    pub forces: [f64; NUM_TENDONS],
    pub status: StepStatus,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClosedLoopLog {
    pub records: Vec<LogRecord>,
    /// Steps whose input had to be clipped to the bounds after the solve.
    pub clip_events: usize,
}

pub const LOG_HEADER: &str = "t,ref1,ref2,q1,q2,f1,f2,f3,f4,status,solve_ms";

impl ClosedLoopLog {
    /// Root mean square of the joint tracking error over both joints and all samples.
    pub fn rms_error(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let ss: f64 = self
            .records
            .iter()
            .map(|r| (r.q[0] - r.reference[0]).powi(2) + (r.q[1] - r.reference[1]).powi(2))
            .sum();
        (ss / (2 * self.records.len()) as f64).sqrt()
    }

    pub fn rms_error_per_joint(&self) -> [f64; 2] {
        let m = self.records.len().max(1) as f64;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.records.iter().map(|r| (r.q[i] - r.reference[i]).powi(2)).sum::<f64>() / m).sqrt();
        }
        out
    }

    pub fn max_solve_ms(&self) -> f64 {
        self.records.iter().map(|r| r.solve_ms).fold(0.0, f64::max)
    }

    pub fn max_abs_q(&self) -> f64 {
        self.records.iter().flat_map(|r| r.q.iter()).fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn force_range(&self) -> (f64, f64) {
        self.records
            .iter()
            .flat_map(|r| r.forces.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    pub fn count_status(&self, status: StepStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            write!(w, "{},{},{},{},{}", fmt_f64(r.t), fmt_f64(r.reference[0]), fmt_f64(r.reference[1]), fmt_f64(r.q[0]), fmt_f64(r.q[1]))?;
            for f in &r.forces {
                write!(w, ",{}", fmt_f64(*f))?;
            }
            writeln!(w, ",{},{:.3}", r.status, r.solve_ms)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// State consistent with the model resting under a constant input `u`.
fn steady_state(model: &StateSpaceModel, u: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.order();
    let lhs = DMatrix::identity(n, n) - model.a();
    let rhs = model.b() * u;
    let sol = linalg::lstsq(&lhs, &DMatrix::from_column_slice(n, 1, rhs.as_slice()), linalg::RANK_TOL);
    Ok(sol.coeffs.column(0).clone_owned())
}

enum Estimator {
    Kalman(KalmanFilter),
    Direct { window: usize, u_hist: Vec<DVector<f64>>, y_hist: Vec<DVector<f64>> },
    Measured,
}

fn held(u: &DVector<f64>, horizon: usize) -> DMatrix<f64> {
    DMatrix::from_fn(horizon, u.len(), |_, j| u[j])
}

/// Runs the plant from rest at the straight pose under balanced pretension
/// for `duration_s`, one controller step per sample.
pub fn run_closed_loop(
    plant_cfg: &SnakePlantConfig,
    controller: &Controller,
    cfg: &MpcConfig,
    reference: &Reference,
    duration_s: f64,
) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    reference.validate()?;
    let (p, q, model_dt) = controller.dims();
    if p != NUM_TENDONS || q != 2 {
        return Err(Error::Dimension(format!("controller model has {p} inputs and {q} outputs, plant has 4 and 2")));
    }
    if cfg.num_inputs() != p || cfg.num_outputs() != q {
        return Err(Error::Dimension("MPC weights do not match the plant dimensions".into()));
    }
    let dt = cfg.sample_time_s;
    if (model_dt - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::Config(format!("model sample time {model_dt} s differs from controller sample time {dt} s")));
    }
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("duration must be positive, got {duration_s}")));
    }
    let steps = (duration_s / dt).round() as usize;
    let mut plant = SnakePlant::new(*plant_cfg, PlantState::default())?;
    let mut u_prev = DVector::from_column_slice(&plant_cfg.bias_forces());

    let mut estimator = match controller {
        Controller::Linear { model, observer } => {
            observer.validate()?;
            let x_ss = steady_state(model, &u_prev)?;
            match *observer {
                ObserverKind::Kalman { process_noise, measurement_noise } => {
                    Estimator::Kalman(KalmanFilter::new(model, process_noise, measurement_noise, x_ss)?)
                }
                ObserverKind::Direct { window } => {
                    let window = if window == 0 { model.order() } else { window };
                    Estimator::Direct { window, u_hist: Vec::new(), y_hist: Vec::new() }
                }
            }
        }
        Controller::Nonlinear { .. } => Estimator::Measured,
    };

    let mut log = ClosedLoopLog::default();
    let mut warm: Option<DMatrix<f64>> = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        let y = DVector::from_column_slice(&plant.joint_angles());
        let ref_win = reference.window(t, dt, cfg.horizon);
        let start = Instant::now();
        let result: Result<MpcStep> = match (controller, &mut estimator) {
            (Controller::Linear { model, .. }, Estimator::Kalman(kf)) => {
                // the input for this sample is not known yet; the previous
                // one stands in for the feedthrough term
                kf.update(model, &y, &u_prev).and_then(|x| mpc_step(model, cfg, &x, &u_prev, &ref_win))
            }
            (Controller::Linear { model, .. }, Estimator::Direct { window, u_hist, y_hist }) => {
                if y_hist.is_empty() {
                    // the plant has been resting at this pose under u_prev
                    u_hist.extend(std::iter::repeat_n(u_prev.clone(), *window - 1));
                    y_hist.extend(std::iter::repeat_n(y.clone(), *window - 1));
                }
                u_hist.push(u_prev.clone());
                y_hist.push(y.clone());
                let w = y_hist.len();
                let uh = DMatrix::from_fn(w, p, |r, c| u_hist[r][c]);
                let yh = DMatrix::from_fn(w, q, |r, c| y_hist[r][c]);
                estimate_state_direct(model, &uh, &yh).and_then(|x| mpc_step(model, cfg, &x, &u_prev, &ref_win))
            }
            (Controller::Nonlinear { model, options }, Estimator::Measured) => {
                nmpc_solve(model, cfg, &y, &u_prev, &ref_win, warm.as_ref(), options)
            }
            _ => unreachable!("estimator is built from the controller kind"),
        };
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;

        let (mut u, status) = match result {
            Ok(step) => {
                let mut next = step.inputs.clone();
                if cfg.horizon > 1 {
                    for r in 0..cfg.horizon - 1 {
                        let row = step.inputs.row(r + 1).clone_owned();
                        next.row_mut(r).copy_from(&row);
                    }
                }
                warm = Some(next);
                (step.u0, step.status)
            }
            Err(e @ (Error::Infeasible(_) | Error::Numeric(_) | Error::Divergence { .. } | Error::RankDeficient(_))) => {
                warn!("t = {t:.3} s: controller failed ({e}); holding previous input");
                warm = Some(held(&u_prev, cfg.horizon));
                (u_prev.clone(), StepStatus::Infeasible)
            }
            Err(e) => return Err(e),
        };

        let mut clipped = false;
        for i in 0..p {
            let c = u[i].clamp(cfg.u_min[i], cfg.u_max[i]);
            if c != u[i] {
                clipped = true;
                u[i] = c;
            }
        }
        if clipped {
            log.clip_events += 1;
            warn!("t = {t:.3} s: input clipped to bounds");
        }

        match (controller, &mut estimator) {
            (Controller::Linear { model, .. }, Estimator::Kalman(kf)) => kf.predict(model, &u),
            (_, Estimator::Direct { window, u_hist, y_hist }) => {
                // the newest entry used u_prev as a stand-in; store the applied input
                if let Some(last) = u_hist.last_mut() {
                    *last = u.clone();
                }
                while y_hist.len() >= *window {
                    y_hist.remove(0);
                    u_hist.remove(0);
                }
            }
            _ => {}
        }

        let mut forces = [0.0; NUM_TENDONS];
        forces.iter_mut().zip(u.iter()).for_each(|(d, s)| *d = *s);
        log.records.push(LogRecord {
            t,
            reference: [ref_win[(0, 0)], ref_win[(0, 1)]],
            q: [y[0], y[1]],
            forces,
            status,
            solve_ms,
        });
        plant.step(&forces, dt)?;
        u_prev = u;
    }
    Ok(log)
}
