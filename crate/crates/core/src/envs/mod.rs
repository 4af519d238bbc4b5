//! Design-parameterised environments.
//!
//! `cartpole` and `acrobot` are episodic control tasks whose dynamics depend
//! on a design vector. `synthetic` is a closed-form multi-fidelity evaluator
//! with a known optimum, used to check the schedulers without training.

mod acrobot;
mod cartpole;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use acrobot::{acrobot_integrate, acrobot_step, Acrobot, AcrobotDesign, AcrobotState};
pub use cartpole::{
    cartpole_step, CartPole, CartPoleDesign, CartPoleState, CARTPOLE_OPTIMAL_LENGTH,
    CARTPOLE_SHAPING_RANGE,
};
pub use synthetic::{SyntheticDesign, SYNTHETIC_DEFAULT_SEED};

/// One bounded design dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Box-shaped search domain over design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    dims: Vec<DesignDim>,
}

/// A point in a [`DesignSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignConfig(pub Vec<f64>);

impl DesignConfig {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for DesignConfig {
    fn from(v: Vec<f64>) -> Self {
        DesignConfig(v)
    }
}

impl DesignSpace {
    pub fn new(dims: Vec<DesignDim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Parameter("design space needs at least one dimension".into()));
        }
        for d in &dims {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                return Err(Error::Parameter(format!(
                    "dimension `{}` has invalid bounds [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
        }
        Ok(Self { dims })
    }

    /// Convenience constructor from `(name, lower, upper)` triples.
    pub fn from_bounds(bounds: &[(&str, f64, f64)]) -> Result<Self> {
        Self::new(
            bounds
                .iter()
                .map(|&(name, lower, upper)| DesignDim {
                    name: name.to_string(),
                    lower,
                    upper,
                })
                .collect(),
        )
    }

    pub fn dims(&self) -> &[DesignDim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Replace the bounds of the named dimensions.
    pub fn with_overrides(&self, overrides: &[(String, f64, f64)]) -> Result<Self> {
        let mut dims = self.dims.clone();
        for (name, lower, upper) in overrides {
            let dim = dims
                .iter_mut()
                .find(|d| &d.name == name)
                .ok_or_else(|| Error::Parameter(format!("unknown design dimension `{name}`")))?;
            dim.lower = *lower;
            dim.upper = *upper;
        }
        Self::new(dims)
    }

    pub fn contains(&self, theta: &DesignConfig) -> bool {
        theta.len() == self.len()
            && self
                .dims
                .iter()
                .zip(&theta.0)
                .all(|(d, &x)| x.is_finite() && x >= d.lower && x <= d.upper)
    }

    pub fn check(&self, theta: &DesignConfig) -> Result<()> {
        if theta.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: theta.len(),
                context: "design vector",
            });
        }
        if !self.contains(theta) {
            return Err(Error::Domain(format!("{:?} not in {}", theta.0, self)));
        }
        Ok(())
    }

    /// Independent uniform draw per dimension.
    pub fn sample(&self, rng: &mut Rng) -> DesignConfig {
        DesignConfig(
            self.dims
                .iter()
                .map(|d| rng.random_range(d.lower..=d.upper))
                .collect(),
        )
    }

    pub fn clamp(&self, theta: &DesignConfig) -> DesignConfig {
        DesignConfig(
            self.dims
                .iter()
                .zip(&theta.0)
                .map(|(d, &x)| x.clamp(d.lower, d.upper))
                .collect(),
        )
    }

    /// Affine map of each dimension onto `[-1, 1]`.
    pub fn normalize(&self, theta: &DesignConfig) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&theta.0)
            .map(|(d, &x)| 2.0 * (x - d.lower) / (d.upper - d.lower) - 1.0)
            .collect()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.upper - d.lower).collect()
    }
}

impl fmt::Display for DesignSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .dims
            .iter()
            .map(|d| format!("{}∈[{}, {}]", d.name, d.lower, d.upper))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Action space of a control task.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpec {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpec {
    /// Width of the policy head.
    pub fn head_width(&self) -> usize {
        match *self {
            ActionSpec::Discrete(n) => n,
            ActionSpec::Continuous { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Interface-level description of a control task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action: ActionSpec,
    pub episode_cap: u32,
    pub design_space: DesignSpace,
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The task ended (failure or success).
    pub terminated: bool,
    /// The episode hit its step cap.
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// An episodic, design-conditioned control task.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Start a new episode under `design`.
    fn reset(&mut self, design: &DesignConfig, rng: &mut Rng) -> Result<Vec<f64>>;

    fn step(&mut self, action: &Action) -> Result<Transition>;
}

/// Environment names accepted in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cartpole,
    Acrobot,
    Synthetic,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Cartpole => "cartpole",
            EnvKind::Acrobot => "acrobot",
            EnvKind::Synthetic => "synthetic",
        }
    }

    pub fn default_space(self) -> DesignSpace {
        match self {
            EnvKind::Cartpole => CartPoleDesign::space(),
            EnvKind::Acrobot => AcrobotDesign::space(),
            EnvKind::Synthetic => SyntheticDesign::space(2),
        }
    }

    /// Build a control environment. `synthetic` is not a control task.
    pub fn make(self, space: DesignSpace) -> Result<Box<dyn Environment>> {
        match self {
            EnvKind::Cartpole => Ok(Box::new(CartPole::with_space(space)?)),
            EnvKind::Acrobot => Ok(Box::new(Acrobot::with_space(space)?)),
            EnvKind::Synthetic => Err(Error::Parameter(
                "the synthetic evaluator has no control dynamics".into(),
            )),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::Cartpole),
            "acrobot" => Ok(EnvKind::Acrobot),
            "synthetic" => Ok(EnvKind::Synthetic),
            other => Err(Error::Parameter(format!("unknown environment `{other}`"))),
        }
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite {what}: {values:?}")))
    }
}
