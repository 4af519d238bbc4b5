//! Two-link underactuated swing-up with link lengths and masses as design
//! parameters.
//!
//! The dynamics are the classic "book" formulation, integrated with a single
//! RK4 step of 0.2 s. Each link's centre of mass sits at half its length and
//! its moment of inertia is `m * l^2`, which reduces to the classic constants
//! for the unit design.

use std::f64::consts::PI;

use rand::Rng as _;

use super::{check_finite, Action, ActionSpec, DesignConfig, DesignSpace, EnvSpec, Environment, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

const GRAVITY: f64 = 9.8;
const DT: f64 = 0.2;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
const EPISODE_CAP: u32 = 500;

/// `(q1, q2, q1_dot, q2_dot)`.
pub type AcrobotState = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrobotDesign {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
}

impl AcrobotDesign {
    pub const CLASSIC: AcrobotDesign = AcrobotDesign {
        l1: 1.0,
        l2: 1.0,
        m1: 1.0,
        m2: 1.0,
    };

    pub fn new(l1: f64, l2: f64, m1: f64, m2: f64) -> Result<Self> {
        let d = Self { l1, l2, m1, m2 };
        if [l1, l2, m1, m2].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(d)
        } else {
            Err(Error::Domain(format!("acrobot design {d:?} must be positive")))
        }
    }

    /// Ordering is `(l1, l2, m1, m2)`.
    pub fn space() -> DesignSpace {
        DesignSpace::from_bounds(&[
            ("l1", 0.1, 2.0),
            ("l2", 0.1, 2.0),
            ("m1", 0.1, 2.0),
            ("m2", 0.1, 2.0),
        ])
        .expect("static bounds")
    }

    pub fn from_config(theta: &DesignConfig) -> Result<Self> {
        match theta.as_slice() {
            [l1, l2, m1, m2] => Self::new(*l1, *l2, *m1, *m2),
            other => Err(Error::Shape {
                expected: 4,
                got: other.len(),
                context: "acrobot design",
            }),
        }
    }

    fn lc1(&self) -> f64 {
        self.l1 / 2.0
    }

    fn lc2(&self) -> f64 {
        self.l2 / 2.0
    }

    fn i1(&self) -> f64 {
        self.m1 * self.l1 * self.l1
    }

    fn i2(&self) -> f64 {
        self.m2 * self.l2 * self.l2
    }

    /// Tip height the swing-up must exceed, measured upward from the pivot.
    pub fn target_height(&self) -> f64 {
        self.l1 + self.l2 / 2.0
    }

    /// Height of the free tip above the pivot.
    pub fn tip_height(&self, s: &AcrobotState) -> f64 {
        -self.l1 * s[0].cos() - self.l2 * (s[0] + s[1]).cos()
    }

    /// Cartesian tip position (x right, y up) relative to the pivot.
    pub fn tip_position(&self, s: &AcrobotState) -> (f64, f64) {
        let x = self.l1 * s[0].sin() + self.l2 * (s[0] + s[1]).sin();
        (x, self.tip_height(s))
    }

    /// Total mechanical energy, zero potential at the pivot height.
    pub fn energy(&self, s: &AcrobotState) -> f64 {
        let [q1, q2, dq1, dq2] = *s;
        let (lc1, lc2) = (self.lc1(), self.lc2());
        let d11 = self.m1 * lc1 * lc1
            + self.m2 * (self.l1 * self.l1 + lc2 * lc2 + 2.0 * self.l1 * lc2 * q2.cos())
            + self.i1()
            + self.i2();
        let d12 = self.m2 * (lc2 * lc2 + self.l1 * lc2 * q2.cos()) + self.i2();
        let d22 = self.m2 * lc2 * lc2 + self.i2();
        let kinetic = 0.5 * (d11 * dq1 * dq1 + 2.0 * d12 * dq1 * dq2 + d22 * dq2 * dq2);
        let potential = -self.m1 * GRAVITY * lc1 * q1.cos()
            - self.m2 * GRAVITY * (self.l1 * q1.cos() + lc2 * (q1 + q2).cos());
        kinetic + potential
    }

    /// Time derivative of `(q1, q2, dq1, dq2)` under joint torque `torque`.
    pub fn derivatives(&self, s: &AcrobotState, torque: f64) -> AcrobotState {
        let [q1, q2, dq1, dq2] = *s;
        let (m1, m2, l1) = (self.m1, self.m2, self.l1);
        let (lc1, lc2, i1, i2) = (self.lc1(), self.lc2(), self.i1(), self.i2());
        let g = GRAVITY;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * q2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * q2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (q1 + q2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dq2 * dq2 * q2.sin()
            - 2.0 * m2 * l1 * lc2 * dq2 * dq1 * q2.sin()
            + (m1 * lc1 + m2 * l1) * g * (q1 - PI / 2.0).cos()
            + phi2;
        let ddq2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dq1 * dq1 * q2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddq1 = -(d2 * ddq2 + phi1) / d1;
        [dq1, dq2, ddq1, ddq2]
    }
}

fn axpy(s: &AcrobotState, k: &AcrobotState, h: f64) -> AcrobotState {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

fn rk4(design: &AcrobotDesign, s: &AcrobotState, torque: f64, h: f64) -> AcrobotState {
    let k1 = design.derivatives(s, torque);
    let k2 = design.derivatives(&axpy(s, &k1, h / 2.0), torque);
    let k3 = design.derivatives(&axpy(s, &k2, h / 2.0), torque);
    let k4 = design.derivatives(&axpy(s, &k3, h), torque);
    let mut out = *s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Wrap an angle into `[-pi, pi)`.
pub(crate) fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// One RK4 step of length `h`, without angle wrapping or velocity clamps.
pub fn acrobot_integrate(design: &AcrobotDesign, s: &AcrobotState, torque: f64, h: f64) -> AcrobotState {
    rk4(design, s, torque, h)
}

/// Pure transition returning `(state, reward, terminated, truncated)`.
pub fn acrobot_step(
    state: &AcrobotState,
    action: usize,
    design: &AcrobotDesign,
    steps_taken: u32,
) -> Result<(AcrobotState, f64, bool, bool)> {
    check_finite(state, "acrobot state")?;
    let torque = *TORQUES
        .get(action)
        .ok_or_else(|| Error::Parameter(format!("acrobot action {action} not in {{0, 1, 2}}")))?;
    let raw = rk4(design, state, torque, DT);
    let next = [
        wrap(raw[0]),
        wrap(raw[1]),
        raw[2].clamp(-MAX_VEL_1, MAX_VEL_1),
        raw[3].clamp(-MAX_VEL_2, MAX_VEL_2),
    ];
    check_finite(&next, "acrobot state")?;
    let terminated = design.tip_height(&next) > design.target_height();
    let reward = if terminated { 0.0 } else { -1.0 };
    let truncated = !terminated && steps_taken + 1 >= EPISODE_CAP;
    Ok((next, reward, terminated, truncated))
}

#[derive(Debug, Clone)]
pub struct Acrobot {
    spec: EnvSpec,
    design: Option<AcrobotDesign>,
    state: AcrobotState,
    steps: u32,
}

impl Acrobot {
    pub fn new() -> Self {
        Self::with_space(AcrobotDesign::space()).expect("default space")
    }

    pub fn with_space(space: DesignSpace) -> Result<Self> {
        if space.len() != 4 {
            return Err(Error::Shape {
                expected: 4,
                got: space.len(),
                context: "acrobot design space",
            });
        }
        Ok(Self {
            spec: EnvSpec {
                obs_dim: 4,
                action: ActionSpec::Discrete(3),
                episode_cap: EPISODE_CAP,
                design_space: space,
            },
            design: None,
            state: [0.0; 4],
            steps: 0,
        })
    }
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, design: &DesignConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        self.spec.design_space.check(design)?;
        self.design = Some(AcrobotDesign::from_config(design)?);
        for v in self.state.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        self.steps = 0;
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        let design = self
            .design
            .ok_or_else(|| Error::State("acrobot stepped before reset".into()))?;
        let a = match action {
            Action::Discrete(a) => *a,
            Action::Continuous(_) => {
                return Err(Error::Parameter("acrobot takes discrete actions".into()))
            }
        };
        let (next, reward, terminated, truncated) = acrobot_step(&self.state, a, &design, self.steps)?;
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
