//! End-to-end stages shared by the CLI and the FFI layer: data generation,
//! identification, validation, reconstruction and closed-loop control.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arx::{identify_arx, uniform_orders};
use crate::config::{IdentificationConfig, KinematicsConfig, RunConfig};
use crate::dataset::{lowpass_filter, split, Dataset, TimeSeries};
use crate::error::{Error, Result};
use crate::kinematics::{end_effector_trajectory, mean_euclidean_error, reconstruct_trajectory};
use crate::model::{fit_percent, initial_condition_from_data, simulate_matrix, FitReport, ModelKind};
use crate::mpc::reference::Reference;
use crate::mpc::{run_closed_loop, ClosedLoopLog, Controller, MpcSettings, NmpcOptions};
use crate::n4sid::identify_n4sid;
use crate::plantsim::{add_output_noise, generate_excitation, simulate_plant, ExcitationSpec, NUM_TENDONS};
use crate::sindyc::identify_sindyc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    N4sid,
    Arx,
    Sindyc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::N4sid, Method::Arx, Method::Sindyc];

    pub fn name(&self) -> &'static str {
        match self {
            Method::N4sid => "n4sid",
            Method::Arx => "arx",
            Method::Sindyc => "sindyc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected n4sid, arx or sindyc)")))
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    /// Whole record after noise and filtering.
    pub full: Dataset,
    pub train: Dataset,
    pub val: Dataset,
}

/// Seed of excitation segment `index` under the global seed.
pub fn segment_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(index as u64 + 1)
}

fn noise_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(999)
}

fn filter_outputs(ds: &Dataset, cutoff: f64) -> Result<Dataset> {
    ds.with_outputs(lowpass_filter(ds.outputs(), cutoff)?)
}

/// Builds the excitation record, drives the plant, corrupts the angles with
/// measurement noise, optionally filters, and splits.
pub fn generate_data(cfg: &RunConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let ex = &cfg.excitation;
    let dt = ex.sample_time_s;
    let mut parts = Vec::with_capacity(ex.segments.len());
    for (i, seg) in ex.segments.iter().enumerate() {
        let spec = ExcitationSpec {
            kind: seg.kind,
            duration_s: seg.duration_s,
            amplitude_n: ex.amplitude_n,
            seed: segment_seed(cfg.seed, i),
            bias_n: cfg.plant.force_bias_n,
        };
        parts.push(generate_excitation(&spec, dt)?);
    }
    let m: usize = parts.iter().map(|p| p.len()).sum();
    let mut forces = DMatrix::zeros(m, NUM_TENDONS);
    let mut row = 0;
    for p in &parts {
        forces.rows_mut(row, p.len()).copy_from(p.values());
        row += p.len();
    }
    let u = TimeSeries::with_prefix(dt, forces, "u")?;
    let clean = simulate_plant(&cfg.plant, &u)?;
    let mut full = add_output_noise(&clean, ex.noise_std_rad, noise_seed(cfg.seed))?;
    let cutoff = ex.filter_cutoff_rad_per_sample;
    if let (Some(c), false) = (cutoff, ex.filter_after_split) {
        full = filter_outputs(&full, c)?;
    }
    let (mut train, mut val) = split(&full, ex.train_fraction)?;
    if let (Some(c), true) = (cutoff, ex.filter_after_split) {
        train = filter_outputs(&train, c)?;
        val = filter_outputs(&val, c)?;
    }
    Ok(GeneratedData { full, train, val })
}

pub fn identify(method: Method, train: &Dataset, cfg: &IdentificationConfig) -> Result<ModelKind> {
    Ok(match method {
        Method::N4sid => identify_n4sid(train, &cfg.n4sid.to_config())?.into(),
        Method::Arx => {
            let a = cfg.arx;
            let (na, nb, nk) = uniform_orders(train.num_outputs(), train.num_inputs(), a.na, a.nb, a.nk);
            identify_arx(train, &na, &nb, &nk)?.into()
        }
        Method::Sindyc => identify_sindyc(train, &cfg.sindyc.library, cfg.sindyc.lambda)?.into(),
    })
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub report: FitReport,
    /// Validation inputs paired with the free-run simulated outputs.
    pub simulated: Dataset,
}

/// Free-run simulation on `val` from the data-derived initial condition.
pub fn validate(model: &ModelKind, val: &Dataset) -> Result<Validation> {
    let init = initial_condition_from_data(model, val)?;
    let y = simulate_matrix(model, val.u(), &init)?;
    let report = fit_percent(val.y(), &y)?;
    let simulated = val.with_outputs(TimeSeries::with_prefix(val.sample_time_s(), y, "y")?)?;
    Ok(Validation { report, simulated })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// `m × 6` joint angles.
    pub joints: DMatrix<f64>,
    /// `m × 3` end-effector positions.
    pub end_effector: DMatrix<f64>,
}

pub fn reconstruct(q12: &DMatrix<f64>, kin: &KinematicsConfig) -> Result<Reconstruction> {
    let joints = reconstruct_trajectory(q12, &kin.ratios())?;
    let end_effector = end_effector_trajectory(&joints, &kin.geometry()?)?;
    Ok(Reconstruction { joints, end_effector })
}

/// Mean end-effector distance between two joint-angle records.
pub fn end_effector_error(q_a: &DMatrix<f64>, q_b: &DMatrix<f64>, kin: &KinematicsConfig) -> Result<f64> {
    let a = reconstruct(q_a, kin)?;
    let b = reconstruct(q_b, kin)?;
    mean_euclidean_error(&a.end_effector, &b.end_effector)
}

pub fn controller_for(model: &ModelKind, settings: &MpcSettings) -> Result<Controller> {
    match model {
        ModelKind::StateSpace(m) => Ok(Controller::Linear { model: m.clone(), observer: settings.observer }),
        ModelKind::Sindy(m) => Ok(Controller::Nonlinear { model: m.clone(), options: NmpcOptions::default() }),
        ModelKind::Arx(_) => Err(Error::Config(
            "MPC needs a state-space (n4sid) or SINDy (sindyc) model, not an ARX model".into(),
        )),
    }
}

pub fn run_mpc(model: &ModelKind, cfg: &RunConfig, reference: &Reference) -> Result<ClosedLoopLog> {
    let controller = controller_for(model, &cfg.mpc)?;
    let mpc_cfg = cfg.mpc.to_config()?;
    run_closed_loop(&cfg.plant, &controller, &mpc_cfg, reference, cfg.mpc.duration_s)
}

/// Summary of one closed-loop run, as written next to the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSummary {
    pub model: String,
    pub steps: usize,
    pub rms_error_rad: f64,
    pub rms_error_per_joint_rad: [f64; 2],
    pub max_abs_q_rad: f64,
    #[serde(rename = "min_force_N")]
    pub min_force_n: f64,
    #[serde(rename = "max_force_N")]
    pub max_force_n: f64,
    pub max_solve_ms: f64,
    pub clip_events: usize,
    pub infeasible_steps: usize,
    pub soft_violation_steps: usize,
    pub iteration_cap_steps: usize,
}

impl MpcSummary {
    pub fn from_log(model: &str, log: &ClosedLoopLog) -> Self {
        use crate::mpc::StepStatus;
        let (lo, hi) = log.force_range();
        MpcSummary {
            model: model.to_string(),
            steps: log.records.len(),
            rms_error_rad: log.rms_error(),
            rms_error_per_joint_rad: log.rms_error_per_joint(),
            max_abs_q_rad: log.max_abs_q(),
            min_force_n: lo,
            max_force_n: hi,
            max_solve_ms: log.max_solve_ms(),
            clip_events: log.clip_events,
            infeasible_steps: log.count_status(StepStatus::Infeasible),
            soft_violation_steps: log.count_status(StepStatus::SoftViolation),
            iteration_cap_steps: log.count_status(StepStatus::IterationCap),
        }
    }
}
