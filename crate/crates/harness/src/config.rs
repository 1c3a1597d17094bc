use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sixdma_core::channel::{ScenarioConfig, UserDistribution};
use sixdma_core::cssca::{CsscaConfig, Scheme};

use crate::error::{HarnessError, Result};

/// Scenario parameter varied across an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Side length of each movable region, in wavelengths.
    MovableRegion,
    /// Symmetric rotation range, in degrees.
    RotationRange,
    /// Rician factor, in dB.
    RicianDb,
    None,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::MovableRegion => "movable_region",
            SweepAxis::RotationRange => "rotation_range",
            SweepAxis::RicianDb => "rician_db",
            SweepAxis::None => "none",
        }
    }

    /// Scenario with the swept parameter set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::MovableRegion => cfg.movable_region_wavelengths = value,
            SweepAxis::RotationRange => cfg.rotatable_range_deg = value,
            SweepAxis::RicianDb => cfg.rician_factor_db = value,
            SweepAxis::None => {}
        }
        cfg
    }

    fn check(self, value: f64) -> Result<()> {
        let ok = match self {
            SweepAxis::MovableRegion => value >= 0.0,
            SweepAxis::RotationRange => (0.0..=180.0).contains(&value),
            SweepAxis::RicianDb | SweepAxis::None => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(HarnessError::InvalidExperiment(format!(
                "sweep value {value} out of range for {}",
                self.as_str()
            )))
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::MovableRegion,
            SweepAxis::RotationRange,
            SweepAxis::RicianDb,
            SweepAxis::None,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
        .ok_or_else(|| HarnessError::InvalidExperiment(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn none() -> Self {
        Self {
            axis: SweepAxis::None,
            values: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub schemes: Vec<Scheme>,
    pub num_realizations: usize,
    pub optimizer: CsscaConfig,
    /// Fading draws per realization used to score the final design.
    pub eval_samples: usize,
    pub sweep: Sweep,
    pub master_seed: u64,
    pub user_distribution: UserDistribution,
    /// Record per-scheme wall time; off by default so outputs are
    /// byte-reproducible.
    pub record_timings: bool,
    pub output_path: Option<PathBuf>,
}

/// Transmit power used by the default experiments. With the nominal 20 dBm
/// and 3GPP UMi path loss at 20 GHz the per-user SNR sits around −40 dB and
/// every scheme's rate is close to zero.
pub const DEFAULT_TX_POWER_DBM: f64 = 50.0;

impl ExperimentConfig {
    /// Full-size network with 200 realizations.
    pub fn paper_scale() -> Self {
        Self {
            scenario: ScenarioConfig {
                tx_power_dbm: DEFAULT_TX_POWER_DBM,
                ..ScenarioConfig::default()
            },
            schemes: Scheme::ALL.to_vec(),
            num_realizations: 200,
            optimizer: CsscaConfig::default(),
            eval_samples: 200,
            sweep: Sweep::none(),
            master_seed: 0,
            user_distribution: UserDistribution::Uniform,
            record_timings: false,
            output_path: None,
        }
    }

    /// Reduced network (M = N = K = L = 4) with 20 realizations.
    pub fn desk() -> Self {
        Self {
            scenario: ScenarioConfig {
                tx_power_dbm: DEFAULT_TX_POWER_DBM,
                ..ScenarioConfig::desk()
            },
            num_realizations: 20,
            ..Self::paper_scale()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(HarnessError::InvalidExperiment(
                "no schemes selected".into(),
            ));
        }
        if self.num_realizations == 0 || self.eval_samples == 0 {
            return Err(HarnessError::InvalidExperiment(
                "realizations and eval_samples must be positive".into(),
            ));
        }
        if self.sweep.values.is_empty() {
            return Err(HarnessError::InvalidExperiment(
                "sweep has no values".into(),
            ));
        }
        for &v in &self.sweep.values {
            self.sweep.axis.check(v)?;
            sixdma_core::channel::Scenario::from_config(&self.sweep.axis.apply(&self.scenario, v))?;
        }
        Ok(())
    }
}
