//! Tendon-force excitation signals: bias plus a seeded perturbation on each
//! antagonistic pair.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NUM_TENDONS;
use crate::dataset::TimeSeries;
use crate::error::{Error, Result};

/// Number of circles in a sweep, with amplitude rising linearly to the maximum.
pub const CIRCLE_COUNT: usize = 12;
pub const CIRCLE_PERIOD_S: f64 = 8.0;
/// Hold time of each random PRBS level.
pub const PRBS_CLOCK_S: f64 = 1.0;
const MULTISINE_COMPONENTS: usize = 12;
const MULTISINE_MAX_HZ: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationKind {
    /// Random phases, frequencies up to 1 Hz, scaled to peak `amplitude_N`.
    Multisine,
    /// Independent random ±`amplitude_N` levels per channel, held for `PRBS_CLOCK_S` seconds.
    Prbs,
    /// Circles of growing amplitude in the two torque planes:
    /// `f₁ = b + a cos ωt`, `f₃ = b − a cos ωt`, `f₂ = b + a sin ωt`, `f₄ = b − a sin ωt`.
    CircleSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    pub duration_s: f64,
    #[serde(rename = "amplitude_N")]
    pub amplitude_n: f64,
    pub seed: u64,
    /// Pretension added to every channel, N.
    #[serde(rename = "bias_N")]
    pub bias_n: f64,
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("excitation duration must be positive, got {}", self.duration_s)));
        }
        if !(self.amplitude_n >= 0.0 && self.amplitude_n.is_finite()) {
            return Err(Error::Config(format!("excitation amplitude must be non-negative, got {}", self.amplitude_n)));
        }
        if self.amplitude_n > self.bias_n {
            return Err(Error::Config(format!(
                "amplitude {} N exceeds bias {} N; forces would go negative",
                self.amplitude_n, self.bias_n
            )));
        }
        Ok(())
    }
}

/// Four-channel force series `f1..f4` (N) sampled every `sample_time_s`.
pub fn generate_excitation(spec: &ExcitationSpec, sample_time_s: f64) -> Result<TimeSeries> {
    spec.validate()?;
    if !(sample_time_s > 0.0) {
        return Err(Error::Config(format!("sample time must be positive, got {sample_time_s}")));
    }
    let m = (spec.duration_s / sample_time_s).round() as usize;
    if m < 2 {
        return Err(Error::Config("excitation shorter than two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = spec.amplitude_n;
    let dev = match spec.kind {
        ExcitationKind::Prbs => {
            let hold = ((PRBS_CLOCK_S / sample_time_s).round() as usize).max(1);
            let mut out = DMatrix::zeros(m, NUM_TENDONS);
            let mut level = [0.0; NUM_TENDONS];
            for k in 0..m {
                if k % hold == 0 {
                    for l in level.iter_mut() {
                        *l = if rng.random::<bool>() { a } else { -a };
                    }
                }
                for (c, l) in level.iter().enumerate() {
                    out[(k, c)] = *l;
                }
            }
            out
        }
        ExcitationKind::Multisine => {
            let duration = m as f64 * sample_time_s;
            let f0 = 1.0 / duration;
            let mut out = DMatrix::zeros(m, NUM_TENDONS);
            for c in 0..NUM_TENDONS {
                let comps: Vec<(f64, f64)> = (0..MULTISINE_COMPONENTS)
                    .map(|_| {
                        let harmonic = rng.random_range(1..=((MULTISINE_MAX_HZ / f0) as usize).max(1));
                        (harmonic as f64 * f0, rng.random_range(0.0..TAU))
                    })
                    .collect();
                let mut peak: f64 = 0.0;
                for k in 0..m {
                    let t = k as f64 * sample_time_s;
                    let v: f64 = comps.iter().map(|(f, ph)| (TAU * f * t + ph).sin()).sum();
                    out[(k, c)] = v;
                    peak = peak.max(v.abs());
                }
                if peak > 0.0 {
                    out.column_mut(c).scale_mut(a / peak);
                }
            }
            out
        }
        ExcitationKind::CircleSweep => {
            let phase0 = rng.random_range(0.0..TAU);
            let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let omega = direction * TAU / CIRCLE_PERIOD_S;
            let circle_len = spec.duration_s / CIRCLE_COUNT as f64;
            DMatrix::from_fn(m, NUM_TENDONS, |k, c| {
                let t = k as f64 * sample_time_s;
                let idx = ((t / circle_len) as usize).min(CIRCLE_COUNT - 1);
                let amp = a * (idx + 1) as f64 / CIRCLE_COUNT as f64;
                let ang = omega * t + phase0;
                match c {
                    0 => amp * ang.cos(),
                    1 => amp * ang.sin(),
                    2 => -amp * ang.cos(),
                    _ => -amp * ang.sin(),
                }
            })
        }
    };
    let forces = dev.map(|d| (spec.bias_n + d).max(0.0));
    TimeSeries::with_prefix(sample_time_s, forces, "u")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ExcitationKind, amp: f64) -> ExcitationSpec {
        ExcitationSpec { kind, duration_s: 30.0, amplitude_n: amp, seed: 7, bias_n: 100.0 }
    }

    #[test]
    fn zero_amplitude_is_bias() {
        for kind in [ExcitationKind::Prbs, ExcitationKind::Multisine, ExcitationKind::CircleSweep] {
            let ts = generate_excitation(&spec(kind, 0.0), 0.03).unwrap();
            assert!(ts.values().iter().all(|&v| v == 100.0));
        }
    }

    #[test]
    fn prbs_bounds_and_determinism() {
        let s = spec(ExcitationKind::Prbs, 30.0);
        let a = generate_excitation(&s, 0.03).unwrap();
        let b = generate_excitation(&s, 0.03).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| (70.0..=130.0).contains(&v)));
        assert_eq!(a.len(), 1000);
    }

    #[test]
    fn circle_pairs_are_antagonistic() {
        let ts = generate_excitation(&spec(ExcitationKind::CircleSweep, 40.0), 0.03).unwrap();
        for row in ts.values().row_iter() {
            assert!((row[0] + row[2] - 200.0).abs() < 1e-9);
            assert!((row[1] + row[3] - 200.0).abs() < 1e-9);
        }
        let max = ts.values().iter().cloned().fold(0.0, f64::max);
        assert!(max <= 140.0 + 1e-9 && max > 139.0);
    }

    #[test]
    fn amplitude_above_bias_is_rejected() {
        assert!(generate_excitation(&spec(ExcitationKind::Multisine, 150.0), 0.03).is_err());
    }
}
