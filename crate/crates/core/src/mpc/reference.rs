//! Joint-space reference trajectories for the first pan and tilt joints.

use std::f64::consts::{FRAC_PI_4, TAU};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kinematics::{small_angle_gains, ChainGeometry, JointRatios};

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Four-leaf rose `r = R_p |cos 2θ|` traced by the end effector in the
    /// x–y plane, one full turn of `θ` per `period_s` starting at `θ = π/4`
    /// (the origin). Joint references come from the small-angle FK gains;
    /// `R_p` is chosen so neither joint exceeds `max_joint_rad`.
    Petal { max_joint_rad: f64, period_s: f64, ratios: JointRatios, geometry: ChainGeometry },
    /// Zero until `at_s`, then `target`.
    Step { target: [f64; 2], at_s: f64 },
    /// Straight arm.
    Equilibrium,
    /// Tabulated `m × 2` samples, zero-order hold, last row held past the end.
    Samples { sample_time_s: f64, values: DMatrix<f64> },
}

pub const DEFAULT_PETAL_MAX_JOINT_RAD: f64 = 0.6;
pub const DEFAULT_PETAL_PERIOD_S: f64 = 30.0;

impl Reference {
    pub fn petal() -> Self {
        Reference::Petal {
            max_joint_rad: DEFAULT_PETAL_MAX_JOINT_RAD,
            period_s: DEFAULT_PETAL_PERIOD_S,
            ratios: JointRatios::default(),
            geometry: ChainGeometry::default(),
        }
    }

    pub fn samples(sample_time_s: f64, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != 2 || values.nrows() == 0 {
            return Err(Error::Data(format!("reference samples must be m×2 with m ≥ 1, got {:?}", values.shape())));
        }
        if !(sample_time_s > 0.0) {
            return Err(Error::Config(format!("reference sample time must be positive, got {sample_time_s}")));
        }
        Ok(Reference::Samples { sample_time_s, values })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Reference::Petal { max_joint_rad, period_s, .. } => {
                if !(*max_joint_rad > 0.0 && *max_joint_rad < std::f64::consts::FRAC_PI_2) || !(*period_s > 0.0) {
                    return Err(Error::Config("petal needs 0 < max_joint_rad < π/2 and a positive period".into()));
                }
            }
            Reference::Step { target, at_s } => {
                if !target.iter().all(|v| v.is_finite()) || !at_s.is_finite() {
                    return Err(Error::Config("step reference must be finite".into()));
                }
            }
            Reference::Equilibrium | Reference::Samples { .. } => {}
        }
        Ok(())
    }

    /// Rose radius `R_p` in metres for a petal reference.
    pub fn petal_radius_m(max_joint_rad: f64, ratios: &JointRatios, geometry: &ChainGeometry) -> f64 {
        let (kx, ky) = small_angle_gains(ratios, geometry);
        max_joint_rad * kx.abs().min(ky.abs())
    }

    /// `(q₁, q₂)` at time `t`.
    pub fn at(&self, t: f64) -> [f64; 2] {
        match self {
            Reference::Petal { max_joint_rad, period_s, ratios, geometry } => {
                let (kx, ky) = small_angle_gains(ratios, geometry);
                let rp = Self::petal_radius_m(*max_joint_rad, ratios, geometry);
                let theta = FRAC_PI_4 + TAU * t / period_s;
                let r = rp * (2.0 * theta).cos().abs();
                [r * theta.cos() / kx, r * theta.sin() / ky]
            }
            Reference::Step { target, at_s } => {
                if t >= *at_s {
                    *target
                } else {
                    [0.0, 0.0]
                }
            }
            Reference::Equilibrium => [0.0, 0.0],
            Reference::Samples { sample_time_s, values } => {
                let idx = ((t / sample_time_s + 1e-9).floor().max(0.0) as usize).min(values.nrows() - 1);
                [values[(idx, 0)], values[(idx, 1)]]
            }
        }
    }

    /// `(n + 1) × 2` samples at `t0, t0 + dt, …, t0 + n·dt`.
    pub fn window(&self, t0: f64, dt: f64, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n + 1, 2);
        for k in 0..=n {
            let r = self.at(t0 + k as f64 * dt);
            out[(k, 0)] = r[0];
            out[(k, 1)] = r[1];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn petal_starts_at_origin_and_respects_limit() {
        let r = Reference::petal();
        let q0 = r.at(0.0);
        assert!(q0[0].abs() < 1e-15 && q0[1].abs() < 1e-15);
        let w = r.window(0.0, 0.03, 1000);
        assert!(w.amax() <= DEFAULT_PETAL_MAX_JOINT_RAD + 1e-12);
        assert!(w.amax() > 0.4);
    }

    #[test]
    fn samples_hold_last_value() {
        let r = Reference::samples(0.1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.2, -0.1])).unwrap();
        assert_eq!(r.at(0.05), [0.0, 0.0]);
        assert_eq!(r.at(0.1), [0.2, -0.1]);
        assert_eq!(r.at(5.0), [0.2, -0.1]);
    }

    #[test]
    fn step_switches_at_time() {
        let r = Reference::Step { target: [0.3, -0.2], at_s: 1.0 };
        assert_eq!(r.at(0.99), [0.0, 0.0]);
        assert_eq!(r.at(1.0), [0.3, -0.2]);
    }
}
