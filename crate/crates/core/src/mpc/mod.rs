//! Receding-horizon tracking control with identified models.
//!
//! Linear MPC condenses a state-space model into a QP over input increments;
//! nonlinear MPC relinearizes a SINDy model about the predicted trajectory and
//! reuses the same QP. [`closed_loop`] runs either against the snake plant.

pub mod closed_loop;
pub mod condense;
pub mod nmpc;
pub mod observer;
pub mod qp;
pub mod reference;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use closed_loop::{run_closed_loop, ClosedLoopLog, Controller, LogRecord};
pub use condense::{build_qp, build_qp_affine, AffineStep, MpcQp};
pub use nmpc::{nmpc_step, nmpc_solve, NmpcOptions};
pub use observer::{estimate_state_direct, KalmanFilter, ObserverKind};
pub use qp::{solve_qp, KktResiduals, Qp, QpSolution};
pub use reference::Reference;

use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_SAMPLE_TIME_S: f64 = 0.03;
pub const DEFAULT_SLACK_WEIGHT: f64 = 1e4;
/// Slack above this counts as a soft-bound violation in the step status.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Output-error weight, `q × q`.
    pub q: DMatrix<f64>,
    /// Terminal output-error weight.
    pub qf: DMatrix<f64>,
    /// Input-increment weight, `p × p`.
    pub r: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub sample_time_s: f64,
    pub slack_weight: f64,
}

impl Default for MpcConfig {
    /// Two joint angles, four tendons.
    fn default() -> Self {
        MpcConfig {
            horizon: DEFAULT_HORIZON,
            q: DMatrix::identity(2, 2),
            qf: DMatrix::identity(2, 2),
            r: DMatrix::identity(4, 4) * 0.1,
            u_min: DVector::from_element(4, 20.0),
            u_max: DVector::from_element(4, 190.0),
            x_min: DVector::from_element(2, -1.0),
            x_max: DVector::from_element(2, 1.0),
            sample_time_s: DEFAULT_SAMPLE_TIME_S,
            slack_weight: DEFAULT_SLACK_WEIGHT,
        }
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

impl MpcConfig {
    pub fn num_inputs(&self) -> usize {
        self.r.nrows()
    }

    pub fn num_outputs(&self) -> usize {
        self.q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.num_outputs();
        let p = self.num_inputs();
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.q.shape() != (q, q) || self.qf.shape() != (q, q) || self.r.shape() != (p, p) {
            return Err(Error::Config("Q, Qf and R must be square with matching sizes".into()));
        }
        if self.u_min.len() != p || self.u_max.len() != p || self.x_min.len() != q || self.x_max.len() != q {
            return Err(Error::Config("bound vectors do not match the weight sizes".into()));
        }
        if min_eigenvalue(&self.q) < -1e-12 || min_eigenvalue(&self.qf) < -1e-12 {
            return Err(Error::Config("Q and Qf must be positive semidefinite".into()));
        }
        if min_eigenvalue(&self.r) <= 0.0 {
            return Err(Error::Config("R must be positive definite".into()));
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("u_min must be below u_max".into()));
        }
        if self.x_min.iter().zip(self.x_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("x_min must be below x_max".into()));
        }
        if !(self.sample_time_s > 0.0) || !(self.slack_weight > 0.0) {
            return Err(Error::Config("sample time and slack weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    /// Solved, but an output bound needed slack.
    SoftViolation,
    /// Successive linearization hit its iteration cap.
    IterationCap,
    /// No solution; the previous input was held.
    Infeasible,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::SoftViolation => "slack",
            StepStatus::IterationCap => "max_iter",
            StepStatus::Infeasible => "infeasible",
        }
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct MpcStep {
    /// Input to apply now.
    pub u0: DVector<f64>,
    /// `N × p` planned inputs.
    pub inputs: DMatrix<f64>,
    /// `(N+1) × q` predicted outputs.
    pub predicted: DMatrix<f64>,
    pub status: StepStatus,
    pub solution: QpSolution,
    /// Tracking plus rate cost of the plan.
    pub cost: f64,
}

pub(crate) fn finish_step(mqp: &MpcQp, solution: QpSolution, status: StepStatus) -> MpcStep {
    let inputs = mqp.inputs(&solution.z);
    let predicted = mqp.predicted_outputs(&solution.z);
    let nz = mqp.num_increments();
    let max_slack = solution.z.rows(nz, mqp.num_outputs).iter().copied().fold(0.0, f64::max);
    let status = if status == StepStatus::Optimal && max_slack > SLACK_TOL { StepStatus::SoftViolation } else { status };
    let cost = mqp.tracking_cost(&solution.z);
    MpcStep { u0: inputs.row(0).transpose(), inputs, predicted, status, solution, cost }
}

/// One linear MPC solve from state `x0`.
pub fn mpc_step(
    model: &StateSpaceModel,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
) -> Result<MpcStep> {
    let mqp = build_qp(model, cfg, x0, u_prev, reference)?;
    let sol = solve_qp(&mqp.qp)?;
    Ok(finish_step(&mqp, sol, StepStatus::Optimal))
}

/// Serializable controller settings with diagonal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub horizon: usize,
    pub q_diag: Vec<f64>,
    pub qf_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    #[serde(rename = "u_min_N")]
    pub u_min_n: f64,
    #[serde(rename = "u_max_N")]
    pub u_max_n: f64,
    pub x_min_rad: f64,
    pub x_max_rad: f64,
    pub sample_time_s: f64,
    pub slack_weight: f64,
    pub observer: ObserverKind,
    pub duration_s: f64,
}

impl Default for MpcSettings {
    fn default() -> Self {
        MpcSettings {
            horizon: DEFAULT_HORIZON,
            q_diag: vec![1.0, 1.0],
            qf_diag: vec![1.0, 1.0],
            r_diag: vec![0.1; 4],
            u_min_n: 20.0,
            u_max_n: 190.0,
            x_min_rad: -1.0,
            x_max_rad: 1.0,
            sample_time_s: DEFAULT_SAMPLE_TIME_S,
            slack_weight: DEFAULT_SLACK_WEIGHT,
            observer: ObserverKind::default(),
            duration_s: 30.0,
        }
    }
}

impl MpcSettings {
    pub fn to_config(&self) -> Result<MpcConfig> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let p = self.r_diag.len();
        let q = self.q_diag.len();
        let cfg = MpcConfig {
            horizon: self.horizon,
            q: diag(&self.q_diag),
            qf: diag(&self.qf_diag),
            r: diag(&self.r_diag),
            u_min: DVector::from_element(p, self.u_min_n),
            u_max: DVector::from_element(p, self.u_max_n),
            x_min: DVector::from_element(q, self.x_min_rad),
            x_max: DVector::from_element(q, self.x_max_rad),
            sample_time_s: self.sample_time_s,
            slack_weight: self.slack_weight,
        };
        cfg.validate()?;
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("mpc duration must be positive".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        MpcConfig::default().validate().unwrap();
        assert_eq!(MpcSettings::default().to_config().unwrap(), MpcConfig::default());
    }

    #[test]
    fn rejects_bad_weights() {
        let mut cfg = MpcConfig::default();
        cfg.r[(0, 0)] = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = MpcConfig::default();
        cfg.u_min[1] = 200.0;
        assert!(cfg.validate().is_err());
        let cfg = MpcConfig { horizon: 0, ..MpcConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
