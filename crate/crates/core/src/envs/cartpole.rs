//! Cart-pole balancing with the pole length as the design parameter.

use rand::Rng as _;

use super::{check_finite, Action, ActionSpec, DesignConfig, DesignSpace, EnvSpec, Environment, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Pole length whose `polemass_length` equals the ideal 0.2.
pub const CARTPOLE_OPTIMAL_LENGTH: f64 = 1.425;
/// Width of the pole-length range the reward shaping is normalised by.
pub const CARTPOLE_SHAPING_RANGE: f64 = 2.9;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const ANGLE_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const X_LIMIT: f64 = 2.4;
const EPISODE_CAP: u32 = 500;

/// `(x, x_dot, angle, angle_dot)`.
pub type CartPoleState = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleDesign {
    pub pole_length: f64,
}

impl CartPoleDesign {
    pub fn new(pole_length: f64) -> Result<Self> {
        let d = Self { pole_length };
        if !(pole_length.is_finite() && d.polemass_length() > 0.0) {
            return Err(Error::Domain(format!("pole length {pole_length} gives no pole mass moment")));
        }
        Ok(d)
    }

    pub fn space() -> DesignSpace {
        DesignSpace::from_bounds(&[("pole_length", 0.1, 3.0)]).expect("static bounds")
    }

    pub fn from_config(theta: &DesignConfig) -> Result<Self> {
        match theta.as_slice() {
            [l] => Self::new(*l),
            other => Err(Error::Shape {
                expected: 1,
                got: other.len(),
                context: "cartpole design",
            }),
        }
    }

    /// `m_pole * l^2`.
    pub fn polemass_length(&self) -> f64 {
        POLE_MASS * self.pole_length * self.pole_length
    }

    /// Reward for one upright step; 1.0 at the optimal length.
    pub fn step_reward(&self) -> f64 {
        1.0 - (self.pole_length - CARTPOLE_OPTIMAL_LENGTH).abs() / CARTPOLE_SHAPING_RANGE
    }

    /// Largest achievable episode return for this design.
    pub fn return_ceiling(&self) -> f64 {
        EPISODE_CAP as f64 * self.step_reward()
    }
}

/// Pure transition. `steps_taken` counts steps already completed in the
/// episode.
pub fn cartpole_step(
    state: &CartPoleState,
    action: usize,
    design: &CartPoleDesign,
    steps_taken: u32,
) -> Result<(CartPoleState, f64, bool, bool)> {
    check_finite(state, "cartpole state")?;
    let force = match action {
        0 => -FORCE_MAG,
        1 => FORCE_MAG,
        a => return Err(Error::Parameter(format!("cartpole action {a} not in {{0, 1}}"))),
    };
    let [x, x_dot, angle, angle_dot] = *state;
    let length = design.pole_length;
    let pml = design.polemass_length();
    let (sin, cos) = angle.sin_cos();

    let temp = (force + pml * angle_dot * angle_dot * sin) / TOTAL_MASS;
    let angle_acc =
        (GRAVITY * sin - cos * temp) / (length * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - pml * angle_acc * cos / TOTAL_MASS;

    // Semi-implicit Euler: velocities first, then positions.
    let x_dot = x_dot + TAU * x_acc;
    let x = x + TAU * x_dot;
    let angle_dot = angle_dot + TAU * angle_acc;
    let angle = angle + TAU * angle_dot;
    let next = [x, x_dot, angle, angle_dot];
    check_finite(&next, "cartpole state")?;

    let failed = x.abs() > X_LIMIT || angle.abs() > ANGLE_LIMIT;
    let reward = if failed { 0.0 } else { design.step_reward() };
    let truncated = !failed && steps_taken + 1 >= EPISODE_CAP;
    Ok((next, reward, failed, truncated))
}

/// Stateful wrapper around [`cartpole_step`].
#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    design: Option<CartPoleDesign>,
    state: CartPoleState,
    steps: u32,
}

impl CartPole {
    pub fn new() -> Self {
        Self::with_space(CartPoleDesign::space()).expect("default space")
    }

    pub fn with_space(space: DesignSpace) -> Result<Self> {
        if space.len() != 1 {
            return Err(Error::Shape {
                expected: 1,
                got: space.len(),
                context: "cartpole design space",
            });
        }
        Ok(Self {
            spec: EnvSpec {
                obs_dim: 4,
                action: ActionSpec::Discrete(2),
                episode_cap: EPISODE_CAP,
                design_space: space,
            },
            design: None,
            state: [0.0; 4],
            steps: 0,
        })
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, design: &DesignConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        self.spec.design_space.check(design)?;
        self.design = Some(CartPoleDesign::from_config(design)?);
        for v in self.state.iter_mut() {
            *v = rng.random_range(-0.05..0.05);
        }
        self.steps = 0;
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        let design = self
            .design
            .ok_or_else(|| Error::State("cartpole stepped before reset".into()))?;
        let a = match action {
            Action::Discrete(a) => *a,
            Action::Continuous(_) => {
                return Err(Error::Parameter("cartpole takes discrete actions".into()))
            }
        };
        let (next, reward, terminated, truncated) = cartpole_step(&self.state, a, &design, self.steps)?;
        self.state = next;
        self.steps += 1;
        Ok(Transition {
            obs: next.to_vec(),
            reward,
            terminated,
            truncated,
        })
    }
}
