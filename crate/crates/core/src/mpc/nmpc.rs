//! Nonlinear MPC on a SINDy model by successive linearization: roll the model
//! out along the current input plan, linearize each step, solve the condensed
//! QP, and repeat until the plan stops moving.

use nalgebra::{DMatrix, DVector};

use super::condense::{build_qp_affine, AffineStep, MpcQp};
use super::qp::{solve_qp, QpSolution};
use super::{finish_step, MpcConfig, MpcStep, StepStatus};
use crate::error::{Error, Result};
use crate::model::DIVERGENCE_LIMIT;
use crate::sindyc::SindyModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcOptions {
    pub max_iterations: usize,
    /// Stop once the largest change of any planned input is below this.
    pub tolerance: f64,
}

impl Default for NmpcOptions {
    fn default() -> Self {
        NmpcOptions { max_iterations: 5, tolerance: 1e-6 }
    }
}

fn linearize(model: &SindyModel, x0: &DVector<f64>, plan: &DMatrix<f64>) -> Result<Vec<AffineStep>> {
    let mut steps = Vec::with_capacity(plan.nrows());
    let mut x: Vec<f64> = x0.iter().copied().collect();
    for k in 0..plan.nrows() {
        let u: Vec<f64> = plan.row(k).iter().copied().collect();
        let next = model.step(&x, &u);
        if let Some(v) = next.iter().find(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Divergence { step: k + 1, value: v.abs() });
        }
        let (a, b) = model.jacobians(&x, &u);
        let xv = DVector::from_column_slice(&x);
        let uv = DVector::from_column_slice(&u);
        let c = &next - &a * xv - &b * uv;
        steps.push(AffineStep { a, b, c });
        x = next.iter().copied().collect();
    }
    Ok(steps)
}

/// Full solve; `warm` is an optional `N × p` initial input plan.
pub fn nmpc_solve(
    model: &SindyModel,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
    opts: &NmpcOptions,
) -> Result<MpcStep> {
    let q = model.num_outputs();
    let p = model.num_inputs();
    if x0.len() != q || u_prev.len() != p {
        return Err(Error::Dimension(format!(
            "state {} / input {} for a SINDy model with {q} states and {p} inputs",
            x0.len(),
            u_prev.len()
        )));
    }
    let mut plan = match warm {
        Some(w) if w.shape() == (cfg.horizon, p) => w.clone(),
        Some(w) => return Err(Error::Dimension(format!("warm start is {:?}, expected {}×{p}", w.shape(), cfg.horizon))),
        None => DMatrix::from_fn(cfg.horizon, p, |_, j| u_prev[j]),
    };
    let eye = DMatrix::identity(q, q);
    let zero_d = DMatrix::zeros(q, p);
    let mut last: Option<(MpcQp, QpSolution)> = None;
    let mut converged = false;
    for _ in 0..opts.max_iterations.max(1) {
        let steps = match linearize(model, x0, &plan) {
            Ok(s) => s,
            // keep the last feasible iterate if a later plan blows up the model
            Err(e) if last.is_none() => return Err(e),
            Err(_) => break,
        };
        let mqp = build_qp_affine(&steps, &eye, &zero_d, cfg, x0, u_prev, reference)?;
        let sol = solve_qp(&mqp.qp)?;
        let next = mqp.inputs(&sol.z);
        let change = (&next - &plan).amax();
        plan = next;
        last = Some((mqp, sol));
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    let (mqp, sol) = last.expect("at least one iteration ran");
    let status = if converged { StepStatus::Optimal } else { StepStatus::IterationCap };
    Ok(finish_step(&mqp, sol, status))
}

/// First input of the converged plan, starting from `u_prev` held.
pub fn nmpc_step(
    model: &SindyModel,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    Ok(nmpc_solve(model, cfg, x0, u_prev, reference, None, &NmpcOptions::default())?.u0)
}
