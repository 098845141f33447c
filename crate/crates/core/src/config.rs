//! Declarative run configuration (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [plant]
//! gravity_gain = [0.33, 0.33]
//!
//! [excitation]
//! amplitude_N = 16.4
//! segments = [
//!   { kind = "circle_sweep", duration_s = 96.0 },
//!   { kind = "prbs", duration_s = 64.0 },
//! ]
//!
//! [identification.sindyc]
//! lambda = 0.0035
//!
//! [mpc]
//! horizon = 10
//!
//! [reference]
//! kind = "petal"
//! ```
//!
//! `seed` and the `[plant]` table are required (the table may be empty to take
//! every plant default); everything else has defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arx;
use crate::error::{Error, Result};
use crate::kinematics::{ChainGeometry, JointRatios, DEFAULT_LINK_LENGTH_M};
use crate::mpc::reference::{Reference, DEFAULT_PETAL_MAX_JOINT_RAD, DEFAULT_PETAL_PERIOD_S};
use crate::mpc::MpcSettings;
use crate::n4sid::{self, N4sidConfig, OrderSelection};
use crate::plantsim::{ExcitationKind, SnakePlantConfig};
use crate::sindyc::{self, LibrarySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub plant: SnakePlantConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub identification: IdentificationConfig,
    #[serde(default)]
    pub mpc: MpcSettings,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub kinematics: KinematicsConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub kind: ExcitationKind,
    pub duration_s: f64,
}

/// One continuous force record built from consecutive segments, then split
/// into identification and validation parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub sample_time_s: f64,
    #[serde(rename = "amplitude_N")]
    pub amplitude_n: f64,
    pub segments: Vec<SegmentSpec>,
    pub train_fraction: f64,
    /// Standard deviation of white noise added to the measured angles.
    pub noise_std_rad: f64,
    /// Zero-phase low-pass applied to the measured angles; off when absent.
    pub filter_cutoff_rad_per_sample: Option<f64>,
    /// Filter train and validation parts separately instead of the whole record.
    pub filter_after_split: bool,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        let seg = |kind, duration_s| SegmentSpec { kind, duration_s };
        ExcitationConfig {
            sample_time_s: 0.03,
            amplitude_n: 16.4,
            segments: vec![
                seg(ExcitationKind::CircleSweep, 96.0),
                seg(ExcitationKind::Prbs, 64.0),
                seg(ExcitationKind::CircleSweep, 96.0),
                seg(ExcitationKind::Multisine, 64.0),
            ],
            train_fraction: 0.5,
            noise_std_rad: 0.002,
            filter_cutoff_rad_per_sample: None,
            filter_after_split: false,
        }
    }
}

impl ExcitationConfig {
    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }
}

/// N4SID order: an integer or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderSetting {
    Fixed(usize),
    Named(AutoOrder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoOrder {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N4sidSettings {
    pub order: OrderSetting,
    pub block_rows: Option<usize>,
    pub sv_threshold: f64,
}

impl Default for N4sidSettings {
    fn default() -> Self {
        N4sidSettings {
            order: OrderSetting::Fixed(n4sid::DEFAULT_ORDER),
            block_rows: None,
            sv_threshold: n4sid::DEFAULT_SV_THRESHOLD,
        }
    }
}

impl N4sidSettings {
    pub fn to_config(&self) -> N4sidConfig {
        N4sidConfig {
            block_rows_i: self.block_rows,
            order: match self.order {
                OrderSetting::Fixed(n) => OrderSelection::Fixed(n),
                OrderSetting::Named(AutoOrder::Auto) => OrderSelection::Auto,
            },
            sv_threshold: self.sv_threshold,
        }
    }
}

/// Uniform ARX orders for every output/input pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArxSettings {
    pub na: usize,
    pub nb: usize,
    pub nk: usize,
}

impl Default for ArxSettings {
    fn default() -> Self {
        ArxSettings { na: arx::DEFAULT_ORDER, nb: arx::DEFAULT_ORDER, nk: arx::DEFAULT_DELAY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindySettings {
    pub lambda: f64,
    pub library: LibrarySpec,
}

impl Default for SindySettings {
    fn default() -> Self {
        SindySettings { lambda: sindyc::DEFAULT_LAMBDA, library: LibrarySpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    pub n4sid: N4sidSettings,
    pub arx: ArxSettings,
    pub sindyc: SindySettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Petal {
        #[serde(default = "default_petal_max")]
        max_joint_rad: f64,
        #[serde(default = "default_petal_period")]
        period_s: f64,
    },
    Step {
        q1: f64,
        q2: f64,
        #[serde(default)]
        at_s: f64,
    },
    Equilibrium,
    /// CSV with columns `t,q1,q2` on a uniform grid.
    File { path: PathBuf },
}

fn default_petal_max() -> f64 {
    DEFAULT_PETAL_MAX_JOINT_RAD
}

fn default_petal_period() -> f64 {
    DEFAULT_PETAL_PERIOD_S
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Petal { max_joint_rad: DEFAULT_PETAL_MAX_JOINT_RAD, period_s: DEFAULT_PETAL_PERIOD_S }
    }
}

impl ReferenceSpec {
    /// `base` resolves relative file paths.
    pub fn build(&self, kin: &KinematicsConfig, base: &Path) -> Result<Reference> {
        let r = match self {
            ReferenceSpec::Petal { max_joint_rad, period_s } => Reference::Petal {
                max_joint_rad: *max_joint_rad,
                period_s: *period_s,
                ratios: kin.ratios(),
                geometry: kin.geometry()?,
            },
            ReferenceSpec::Step { q1, q2, at_s } => Reference::Step { target: [*q1, *q2], at_s: *at_s },
            ReferenceSpec::Equilibrium => Reference::Equilibrium,
            ReferenceSpec::File { path } => {
                let path = if path.is_relative() { base.join(path) } else { path.clone() };
                load_reference_csv(&path)?
            }
        };
        r.validate()?;
        Ok(r)
    }
}

/// Reads a `t,q1,q2` reference table.
pub fn load_reference_csv(path: &Path) -> Result<Reference> {
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&shown, io),
            other => Error::Data(format!("{shown}: {other:?}")),
        })?;
    let headers = rdr.headers().map_err(|e| Error::Data(format!("{shown}: {e}")))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["t", "q1", "q2"] {
        return Err(Error::Data(format!("{shown}: expected header t,q1,q2, got {}", names.join(","))));
    }
    let mut t = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{shown}: {e}")))?;
        let mut row = [0.0; 3];
        for (k, v) in row.iter_mut().enumerate() {
            let s = rec.get(k).unwrap_or("");
            *v = s.parse().map_err(|_| Error::Data(format!("{shown}: non-numeric cell '{s}'")))?;
        }
        t.push(row[0]);
        vals.extend_from_slice(&row[1..]);
    }
    if t.len() < 2 {
        return Err(Error::Data(format!("{shown}: need at least 2 reference rows")));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    Reference::samples(dt, nalgebra::DMatrix::from_row_slice(t.len(), 2, &vals))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsConfig {
    pub link_length_m: f64,
    pub pan_ratios: [f64; 2],
    pub tilt_ratios: [f64; 2],
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        let r = JointRatios::default();
        KinematicsConfig {
            link_length_m: DEFAULT_LINK_LENGTH_M,
            pan_ratios: [r.pan.0, r.pan.1],
            tilt_ratios: [r.tilt.0, r.tilt.1],
        }
    }
}

impl KinematicsConfig {
    pub fn ratios(&self) -> JointRatios {
        JointRatios { pan: (self.pan_ratios[0], self.pan_ratios[1]), tilt: (self.tilt_ratios[0], self.tilt_ratios[1]) }
    }

    pub fn geometry(&self) -> Result<ChainGeometry> {
        ChainGeometry::new(self.link_length_m)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        let ex = &self.excitation;
        if ex.segments.is_empty() {
            return Err(Error::Config("excitation needs at least one segment".into()));
        }
        if !(ex.sample_time_s > 0.0) || ex.sample_time_s > crate::plantsim::MAX_STEP_S {
            return Err(Error::Config(format!(
                "excitation sample time must lie in (0, {}] s",
                crate::plantsim::MAX_STEP_S
            )));
        }
        if !(ex.train_fraction > 0.0 && ex.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(ex.noise_std_rad >= 0.0 && ex.noise_std_rad.is_finite()) {
            return Err(Error::Config("noise_std_rad must be non-negative".into()));
        }
        if !(self.identification.sindyc.lambda >= 0.0) {
            return Err(Error::Config("sindyc lambda must be non-negative".into()));
        }
        let a = &self.identification.arx;
        if a.na == 0 && a.nb == 0 {
            return Err(Error::Config("arx orders are all zero".into()));
        }
        self.mpc.to_config()?;
        self.mpc.observer.validate()?;
        if (self.mpc.sample_time_s - ex.sample_time_s).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mpc sample time {} s differs from the data sample time {} s",
                self.mpc.sample_time_s, ex.sample_time_s
            )));
        }
        let ratios = [self.kinematics.pan_ratios, self.kinematics.tilt_ratios].concat();
        if !ratios.iter().all(|r| *r > 0.0 && *r < 1.0) {
            return Err(Error::Config("joint ratios must lie in (0, 1)".into()));
        }
        self.kinematics.geometry()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 3\n[plant]\n").unwrap();
        assert_eq!(cfg.plant, SnakePlantConfig::default());
        assert_eq!(cfg.excitation, ExcitationConfig::default());
        assert_eq!(cfg.identification.sindyc.lambda, 0.0035);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn missing_plant_section_is_config_error() {
        assert!(matches!(RunConfig::from_toml_str("seed = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(RunConfig::from_toml_str("seed = 3\n[plant]\nmass = 2.0\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::from_toml_str("seed = 3\n[plant]\n").unwrap();
        cfg.identification.n4sid.order = OrderSetting::Named(AutoOrder::Auto);
        cfg.reference = ReferenceSpec::Step { q1: 0.2, q2: -0.1, at_s: 1.0 };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
seed = 1
[plant]
viscous_coeff = [0.1, 0.1]
[identification.n4sid]
order = "auto"
[identification.arx]
na = 2
[mpc]
horizon = 12
[mpc.observer]
kind = "direct"
window = 0
[reference]
kind = "step"
q1 = 0.3
q2 = 0.0
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.identification.n4sid.to_config().order, OrderSelection::Auto);
        assert_eq!(cfg.identification.arx.na, 2);
        assert_eq!(cfg.mpc.horizon, 12);
        assert_eq!(cfg.reference, ReferenceSpec::Step { q1: 0.3, q2: 0.0, at_s: 0.0 });
    }
}
