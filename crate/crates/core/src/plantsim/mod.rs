//! Synthetic ground truth: a reduced two-joint tendon-driven snake and
//! seeded random systems used as identification oracles.
//!
//! The snake obeys `B q̈ = τ − g(q) − F(q̇)` with constant inertia
//! `B = [[b₁, ε√(b₁b₂)], [ε√(b₁b₂), b₂]]`, restoring term `g = G ⊙ sin q`
//! (or `G ⊙ q` for the linear-spring variant), friction
//! `F(v) = c_v v + c_c tanh(v / 1e-3)` and tendon torque
//! `τ = r (f₁ − f₃, f₂ − f₄)`.
//!
//! Integration uses an implicit midpoint step with a discrete gradient of
//! the potential, substepped to at most 1 ms. With zero torque the total
//! energy `½ q̇ᵀBq̇ + V(q)` can only decrease, whatever the step size.

mod excitation;
mod generators;

pub use excitation::{generate_excitation, ExcitationKind, ExcitationSpec};
pub use generators::{
    make_random_arx, make_random_lti, make_sparse_nonlinear_truth, prbs_signal, truth_library_spec,
};

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TimeSeries};
use crate::error::{Error, Result};

/// Velocity scale of the smoothed Coulomb term, rad/s.
pub const COULOMB_SMOOTHING: f64 = 1e-3;
/// Longest internal integration step, s.
pub const MAX_SUBSTEP_S: f64 = 1e-3;
pub const MAX_STEP_S: f64 = 0.05;
pub const JOINT_LIMIT: f64 = FRAC_PI_2;
pub const NUM_TENDONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakePlantConfig {
    /// Diagonal of the inertia matrix, kg·m².
    pub inertia_diag: [f64; 2],
    /// Restoring strength `G`, N·m.
    pub gravity_gain: [f64; 2],
    /// N·m·s/rad
    pub viscous_coeff: [f64; 2],
    /// N·m
    pub coulomb_coeff: [f64; 2],
    pub moment_arm_m: f64,
    /// Off-diagonal inertia coupling, in [0, 0.5).
    pub coupling_eps: f64,
    /// Nominal tendon pretension, N.
    #[serde(rename = "force_bias_N")]
    pub force_bias_n: f64,
    /// Replace `G sin q` by the linear spring `G q`.
    pub linear_spring: bool,
}

impl Default for SnakePlantConfig {
    fn default() -> Self {
        SnakePlantConfig {
            inertia_diag: [5e-4, 5e-4],
            gravity_gain: [0.33, 0.33],
            viscous_coeff: [0.08, 0.08],
            coulomb_coeff: [0.003, 0.003],
            moment_arm_m: 0.01,
            coupling_eps: 0.2,
            force_bias_n: 105.0,
            linear_spring: false,
        }
    }
}

impl SnakePlantConfig {
    pub fn validate(&self) -> Result<()> {
        let all = |v: &[f64; 2], ok: fn(f64) -> bool| v.iter().all(|&x| x.is_finite() && ok(x));
        if !all(&self.inertia_diag, |x| x > 0.0) {
            return Err(Error::Config("inertia_diag must be positive".into()));
        }
        if !all(&self.gravity_gain, |x| x >= 0.0) {
            return Err(Error::Config("gravity_gain must be non-negative".into()));
        }
        if !all(&self.viscous_coeff, |x| x >= 0.0) || !all(&self.coulomb_coeff, |x| x >= 0.0) {
            return Err(Error::Config("friction coefficients must be non-negative".into()));
        }
        if !(self.moment_arm_m > 0.0 && self.moment_arm_m.is_finite()) {
            return Err(Error::Config("moment_arm_m must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.coupling_eps) {
            return Err(Error::Config("coupling_eps must lie in [0, 0.5)".into()));
        }
        if !(self.force_bias_n >= 0.0 && self.force_bias_n.is_finite()) {
            return Err(Error::Config("force_bias_N must be non-negative".into()));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix2<f64> {
        let [b1, b2] = self.inertia_diag;
        let off = self.coupling_eps * (b1 * b2).sqrt();
        Matrix2::new(b1, off, off, b2)
    }

    /// Restoring torque `g(q)`.
    pub fn restoring(&self, q: &Vector2<f64>) -> Vector2<f64> {
        Vector2::from_fn(|i, _| {
            let g = self.gravity_gain[i];
            if self.linear_spring { g * q[i] } else { g * q[i].sin() }
        })
    }

    pub fn potential(&self, q: &Vector2<f64>) -> f64 {
        (0..2)
            .map(|i| {
                let g = self.gravity_gain[i];
                if self.linear_spring { 0.5 * g * q[i] * q[i] } else { g * (1.0 - q[i].cos()) }
            })
            .sum()
    }

    pub fn friction(&self, v: &Vector2<f64>) -> Vector2<f64> {
        Vector2::from_fn(|i, _| {
            self.viscous_coeff[i] * v[i] + self.coulomb_coeff[i] * (v[i] / COULOMB_SMOOTHING).tanh()
        })
    }

    fn friction_slope(&self, v: f64, i: usize) -> f64 {
        let s = 1.0 / (v / COULOMB_SMOOTHING).cosh();
        self.viscous_coeff[i] + self.coulomb_coeff[i] / COULOMB_SMOOTHING * s * s
    }

    /// Balanced pretension on all four tendons.
    pub fn bias_forces(&self) -> [f64; NUM_TENDONS] {
        [self.force_bias_n; NUM_TENDONS]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
}

impl PlantState {
    pub fn at_rest(q: [f64; 2]) -> Self {
        PlantState { q: Vector2::new(q[0], q[1]), qdot: Vector2::zeros() }
    }

    pub fn energy(&self, cfg: &SnakePlantConfig) -> f64 {
        0.5 * self.qdot.dot(&(cfg.inertia() * self.qdot)) + cfg.potential(&self.q)
    }
}

/// `τ = r (f₁ − f₃, f₂ − f₄)`
pub fn tendon_to_torque(forces: &[f64], cfg: &SnakePlantConfig) -> Result<Vector2<f64>> {
    if forces.len() != NUM_TENDONS {
        return Err(Error::Dimension(format!("expected {NUM_TENDONS} tendon forces, got {}", forces.len())));
    }
    if let Some(f) = forces.iter().find(|f| !(**f >= 0.0)) {
        return Err(Error::Data(format!("tendon forces must be non-negative and finite, got {f}")));
    }
    let r = cfg.moment_arm_m;
    Ok(Vector2::new(r * (forces[0] - forces[2]), r * (forces[1] - forces[3])))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x }
}

fn dsinc(x: f64) -> f64 {
    if x.abs() < 1e-4 { -x / 3.0 } else { (x * x.cos() - x.sin()) / (x * x) }
}

/// Discrete gradient of the potential between `q` and `q1` and its
/// derivative with respect to `q1`.
fn discrete_gradient(cfg: &SnakePlantConfig, q: f64, q1: f64, i: usize) -> (f64, f64) {
    let g = cfg.gravity_gain[i];
    if cfg.linear_spring {
        return (g * 0.5 * (q + q1), 0.5 * g);
    }
    let m = 0.5 * (q + q1);
    let d = 0.5 * (q1 - q);
    let val = g * m.sin() * sinc(d);
    let der = 0.5 * g * (m.cos() * sinc(d) + m.sin() * dsinc(d));
    (val, der)
}

fn substep(state: &PlantState, tau: &Vector2<f64>, h: f64, cfg: &SnakePlantConfig, b: &Matrix2<f64>) -> Result<PlantState> {
    let q = state.q;
    let v = state.qdot;
    let residual = |w: &Vector2<f64>| -> (Vector2<f64>, Matrix2<f64>) {
        let vm = 0.5 * (v + w);
        let q1 = q + h * vm;
        let mut r = b * (w - v) - h * (tau - cfg.friction(&vm));
        let mut jac = *b;
        for i in 0..2 {
            let (g, dg) = discrete_gradient(cfg, q[i], q1[i], i);
            r[i] += h * g;
            jac[(i, i)] += h * (0.5 * h * dg + 0.5 * cfg.friction_slope(vm[i], i));
        }
        (r, jac)
    };

    let scale = b.norm() * (1.0 + v.norm()) + h * (1.0 + tau.norm());
    let mut w = v;
    let (mut r, mut jac) = residual(&w);
    for _ in 0..60 {
        if r.norm() <= 1e-14 * scale {
            break;
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Numeric("singular Newton matrix in plant step".into()))?;
        // backtrack on the residual norm; the tanh friction makes full steps overshoot
        let mut t = 1.0;
        loop {
            let cand = w - t * step;
            let (rc, jc) = residual(&cand);
            if rc.norm() < r.norm() || t < 1e-6 {
                w = cand;
                r = rc;
                jac = jc;
                break;
            }
            t *= 0.5;
        }
    }
    let mut q1 = q + h * 0.5 * (v + w);
    for i in 0..2 {
        if q1[i].abs() > JOINT_LIMIT {
            q1[i] = JOINT_LIMIT.copysign(q1[i]);
            w[i] = 0.0;
        }
    }
    if !(q1.iter().chain(w.iter()).all(|x| x.is_finite())) {
        return Err(Error::Numeric("plant state became non-finite".into()));
    }
    Ok(PlantState { q: q1, qdot: w })
}

/// Advances the plant by `dt` seconds under constant tendon forces.
pub fn plant_step(state: &PlantState, forces: &[f64], dt: f64, cfg: &SnakePlantConfig) -> Result<PlantState> {
    if !(dt > 0.0 && dt <= MAX_STEP_S) {
        return Err(Error::Config(format!("plant step must lie in (0, {MAX_STEP_S}] s, got {dt}")));
    }
    let tau = tendon_to_torque(forces, cfg)?;
    let n = (dt / MAX_SUBSTEP_S).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let b = cfg.inertia();
    let mut s = *state;
    for _ in 0..n {
        s = substep(&s, &tau, h, cfg, &b)?;
    }
    Ok(s)
}

/// Stateful wrapper used by the closed-loop harness.
#[derive(Debug, Clone)]
pub struct SnakePlant {
    cfg: SnakePlantConfig,
    state: PlantState,
}

impl SnakePlant {
    pub fn new(cfg: SnakePlantConfig, state: PlantState) -> Result<Self> {
        cfg.validate()?;
        Ok(SnakePlant { cfg, state })
    }
    pub fn config(&self) -> &SnakePlantConfig {
        &self.cfg
    }
    pub fn state(&self) -> &PlantState {
        &self.state
    }
    pub fn joint_angles(&self) -> [f64; 2] {
        [self.state.q[0], self.state.q[1]]
    }
    pub fn step(&mut self, forces: &[f64], dt: f64) -> Result<()> {
        self.state = plant_step(&self.state, forces, dt, &self.cfg)?;
        Ok(())
    }
}

/// Drives the plant from `initial` with the force series `u`; `y_k` is the
/// joint angle measured just before `u_k` is applied.
pub fn simulate_plant_from(cfg: &SnakePlantConfig, u: &TimeSeries, initial: PlantState) -> Result<Dataset> {
    cfg.validate()?;
    if u.channels() != NUM_TENDONS {
        return Err(Error::Dimension(format!("plant input needs {NUM_TENDONS} channels, got {}", u.channels())));
    }
    let dt = u.sample_time_s();
    let m = u.len();
    let mut y = DMatrix::zeros(m, 2);
    let mut s = initial;
    let mut f = [0.0; NUM_TENDONS];
    for k in 0..m {
        y[(k, 0)] = s.q[0];
        y[(k, 1)] = s.q[1];
        f.iter_mut().zip(u.values().row(k).iter()).for_each(|(d, v)| *d = *v);
        s = plant_step(&s, &f, dt, cfg)?;
    }
    let outputs = TimeSeries::with_prefix(dt, y, "y")?;
    Dataset::new(u.clone(), outputs)
}

pub fn simulate_plant(cfg: &SnakePlantConfig, u: &TimeSeries) -> Result<Dataset> {
    simulate_plant_from(cfg, u, PlantState::default())
}

/// Adds seeded white Gaussian noise of standard deviation `std_rad` to the outputs.
pub fn add_output_noise(ds: &Dataset, std_rad: f64, seed: u64) -> Result<Dataset> {
    if std_rad == 0.0 {
        return Ok(ds.clone());
    }
    let normal = Normal::new(0.0, std_rad).map_err(|e| Error::Config(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = ds.y().clone();
    // column-major walk keeps the draw order independent of matrix layout changes
    for c in 0..y.ncols() {
        for r in 0..y.nrows() {
            y[(r, c)] += normal.sample(&mut rng);
        }
    }
    let names = ds.outputs().channel_names().to_vec();
    ds.with_outputs(TimeSeries::new(ds.sample_time_s(), y, names)?)
}
