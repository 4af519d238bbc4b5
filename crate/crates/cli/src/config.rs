//! Experiment configuration files.
//!
//! ```toml
//! [experiment]
//! env = "cartpole"
//! method = "upnhb-r"
//! trials = 10
//! seed = 7
//!
//! [schedule]
//! m = 27
//! eta = 3
//! mode = "table"
//! steps_per_unit = 2000
//!
//! [design]
//! pole_length = [0.5, 2.5]
//!
//! [ppo]
//! minibatch_size = 500
//! ```
//!
//! Every section and key is optional; missing values take the defaults of
//! [`ExperimentConfig::default`]. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use codesign_core::envs::{DesignSpace, EnvKind};
use codesign_core::policy::PpoConfig;
use codesign_core::schedule::{total_units, HyperbandParams, ScheduleMode};
use codesign_core::search::Method;
use codesign_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub env: EnvKind,
    pub method: Method,
    pub trials: u64,
    pub seed: u64,
    /// Output directory. Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Fill `wall_ms` in records (makes record files run-dependent).
    pub record_timing: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            env: EnvKind::Cartpole,
            method: Method::UpnReversed,
            trials: 1,
            seed: 0,
            out: None,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub m: u64,
    pub eta: u64,
    pub mode: ScheduleMode,
    pub steps_per_unit: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            m: 27,
            eta: 3,
            mode: ScheduleMode::Table,
            steps_per_unit: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSection {
    pub n_configs: u64,
    /// Total units to share; defaults to the full-accounting HyperBand total
    /// of the `[schedule]` section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_units: Option<u64>,
}

impl Default for RandomSection {
    fn default() -> Self {
        Self {
            n_configs: 40,
            budget_units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub dim: usize,
    pub sigma0: f64,
    pub kappa: f64,
    /// Seed of the benchmark's coefficients (not of the search).
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            dim: 2,
            sigma0: 0.3,
            kappa: 1.0,
            seed: codesign_core::envs::SYNTHETIC_DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Deterministic episodes per scoring event during the search.
    pub search_episodes: usize,
    /// Deterministic episodes for the final report of the chosen design.
    pub report_episodes: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            search_episodes: 5,
            report_episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub schedule: ScheduleSection,
    pub random: RandomSection,
    pub synthetic: SyntheticSection,
    pub evaluation: EvaluationSection,
    /// Bound overrides, `name = [lower, upper]`.
    pub design: BTreeMap<String, [f64; 2]>,
    pub ppo: PpoConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parameter(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.trials == 0 {
            return Err(Error::Parameter("trials must be >= 1".into()));
        }
        if self.schedule.steps_per_unit == 0 {
            return Err(Error::Parameter("steps_per_unit must be >= 1".into()));
        }
        if self.experiment.method == Method::Random {
            let budget = self.random_budget()?;
            if self.random.n_configs == 0 || budget / self.random.n_configs == 0 {
                return Err(Error::Parameter(format!(
                    "random search cannot share {budget} units among {} configurations",
                    self.random.n_configs
                )));
            }
        } else {
            self.hyperband()?;
        }
        if self.evaluation.search_episodes == 0 || self.evaluation.report_episodes == 0 {
            return Err(Error::Parameter("evaluation episode counts must be >= 1".into()));
        }
        self.design_space()?;
        if self.experiment.env != EnvKind::Synthetic {
            self.ppo.validate()?;
        }
        Ok(())
    }

    pub fn hyperband(&self) -> Result<HyperbandParams> {
        HyperbandParams::new(self.schedule.m, self.schedule.eta, self.schedule.mode)
    }

    /// Units random search shares among its configurations.
    pub fn random_budget(&self) -> Result<u64> {
        match self.random.budget_units {
            Some(b) => Ok(b),
            None => Ok(total_units(&self.hyperband()?)?.full),
        }
    }

    /// The environment's design space with `[design]` overrides applied.
    pub fn design_space(&self) -> Result<DesignSpace> {
        let base = match self.experiment.env {
            EnvKind::Synthetic => {
                if self.synthetic.dim == 0 {
                    return Err(Error::Parameter("synthetic dim must be >= 1".into()));
                }
                if !self.design.is_empty() {
                    return Err(Error::Parameter(
                        "the synthetic benchmark is defined on the unit cube; [design] overrides are not allowed"
                            .into(),
                    ));
                }
                codesign_core::envs::SyntheticDesign::space(self.synthetic.dim)
            }
            kind => kind.default_space(),
        };
        let overrides: Vec<(String, f64, f64)> =
            self.design.iter().map(|(k, [lo, hi])| (k.clone(), *lo, *hi)).collect();
        base.with_overrides(&overrides)
    }

    /// Short SHA-256 digest of the config without its output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.experiment.out = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seeds of every trial, `seed .. seed + trials`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let start = self.experiment.seed;
        (0..self.experiment.trials).map(move |k| start + k)
    }
}
