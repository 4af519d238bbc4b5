//! The design-conditioned policy: one network over `[observation; design]`.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::net::Mlp;
use crate::envs::{Action, ActionSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Output distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Softmax over `n` logits.
    Categorical(usize),
    /// Diagonal Gaussian with a learnable state-independent log-std.
    Gaussian(usize),
}

impl Head {
    pub fn from_action_spec(spec: &ActionSpec) -> Self {
        match *spec {
            ActionSpec::Discrete(n) => Head::Categorical(n),
            ActionSpec::Continuous { dim, .. } => Head::Gaussian(dim),
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Head::Categorical(n) | Head::Gaussian(n) => n,
        }
    }
}

/// Concatenate an observation with a (normalised) design vector.
pub fn upn_state(obs: &[f64], theta: &[f64], obs_dim: usize, design_dim: usize) -> Result<Vec<f64>> {
    if obs.len() != obs_dim {
        return Err(Error::Shape {
            expected: obs_dim,
            got: obs.len(),
            context: "observation",
        });
    }
    if theta.len() != design_dim {
        return Err(Error::Shape {
            expected: design_dim,
            got: theta.len(),
            context: "design vector",
        });
    }
    let mut out = Vec::with_capacity(obs_dim + design_dim);
    out.extend_from_slice(obs);
    out.extend_from_slice(theta);
    Ok(out)
}

/// Policy and value networks sharing one flat parameter vector.
///
/// Layout: policy trunk+head, then log-std (Gaussian heads only), then the
/// value network.
#[derive(Debug, Clone, PartialEq)]
pub struct UniversalPolicy {
    obs_dim: usize,
    design_dim: usize,
    hidden: Vec<usize>,
    head: Head,
    policy_net: Mlp,
    value_net: Mlp,
    log_std_offset: Option<usize>,
    params: Vec<f64>,
}

impl UniversalPolicy {
    /// Zero-initialised network; see [`UniversalPolicy::init`].
    pub fn zeros(obs_dim: usize, design_dim: usize, hidden: &[usize], head: Head) -> Self {
        let input = obs_dim + design_dim;
        let policy_net = Mlp::new(input, hidden, head.width(), 0);
        let mut at = policy_net.end_offset();
        let log_std_offset = match head {
            Head::Gaussian(dim) => {
                let off = at;
                at += dim;
                Some(off)
            }
            Head::Categorical(_) => None,
        };
        let value_net = Mlp::new(input, hidden, 1, at);
        let total = value_net.end_offset();
        Self {
            obs_dim,
            design_dim,
            hidden: hidden.to_vec(),
            head,
            policy_net,
            value_net,
            log_std_offset,
            params: vec![0.0; total],
        }
    }

    /// Orthogonal init: hidden gain sqrt(2), policy output 0.01, value
    /// output 1.0, log-std 0.
    pub fn new(obs_dim: usize, design_dim: usize, hidden: &[usize], head: Head, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(obs_dim, design_dim, hidden, head);
        p.init(rng);
        p
    }

    pub fn init(&mut self, rng: &mut Rng) {
        let gain = std::f64::consts::SQRT_2;
        self.policy_net.init(&mut self.params, gain, 0.01, rng);
        self.value_net.init(&mut self.params, gain, 1.0, rng);
        if let (Some(off), Head::Gaussian(dim)) = (self.log_std_offset, self.head) {
            self.params[off..off + dim].fill(0.0);
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.design_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy_net
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value_net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: params.len(),
                context: "parameter vector",
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn log_std_range(&self) -> Option<std::ops::Range<usize>> {
        match (self.log_std_offset, self.head) {
            (Some(off), Head::Gaussian(dim)) => Some(off..off + dim),
            _ => None,
        }
    }

    pub fn log_std(&self) -> &[f64] {
        match self.log_std_range() {
            Some(r) => &self.params[r],
            None => &[],
        }
    }

    /// Project log-std back into its allowed interval.
    pub fn clamp_log_std(&mut self) {
        if let Some(r) = self.log_std_range() {
            for v in &mut self.params[r] {
                *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: input.len(),
                context: "policy input",
            });
        }
        Ok(())
    }

    /// Raw head output (logits or means) for a batch.
    pub fn head_output(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        self.policy_net.predict(&self.params, inputs)
    }

    pub fn values(&self, inputs: ArrayView2<f64>) -> Vec<f64> {
        self.value_net.predict(&self.params, inputs).into_raw_vec_and_offset().0
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        let v = self.values(x)[0];
        if !v.is_finite() {
            return Err(Error::numeric("value network produced a non-finite output"));
        }
        Ok(v)
    }

    /// Sample an action (or take the mode when `deterministic`) and return
    /// its exact log-probability under the current distribution.
    pub fn act(&self, input: &[f64], rng: &mut Rng, deterministic: bool) -> Result<(Action, f64)> {
        self.check_input(input)?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        let out = self.head_output(x);
        let row = out.row(0);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("policy head produced {row}")));
        }
        let row = row.as_slice().expect("contiguous");
        match self.head {
            Head::Categorical(_) => {
                let logp = log_softmax(row);
                let a = if deterministic {
                    argmax(row)
                } else {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = logp.len() - 1;
                    for (k, lp) in logp.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            chosen = k;
                            break;
                        }
                    }
                    chosen
                };
                Ok((Action::Discrete(a), logp[a]))
            }
            Head::Gaussian(_) => {
                let log_std = self.log_std();
                let a: Vec<f64> = if deterministic {
                    row.to_vec()
                } else {
                    row.iter()
                        .zip(log_std)
                        .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                };
                let lp = gaussian_log_prob(&a, row, log_std);
                Ok((Action::Continuous(a), lp))
            }
        }
    }

    /// Log-probability of `action` at `input`.
    pub fn log_prob(&self, input: &[f64], action: &Action) -> Result<f64> {
        self.check_input(input)?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        let out = self.head_output(x);
        let row = out.row(0);
        let row = row.as_slice().expect("contiguous");
        match (self.head, action) {
            (Head::Categorical(n), Action::Discrete(a)) if *a < n => Ok(log_softmax(row)[*a]),
            (Head::Gaussian(d), Action::Continuous(a)) if a.len() == d => {
                Ok(gaussian_log_prob(a, row, self.log_std()))
            }
            _ => Err(Error::Parameter(format!("action {action:?} does not match head {:?}", self.head))),
        }
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub(crate) fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

pub(crate) fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LOG_2PI)).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedTree, Stream};

    fn rng() -> Rng {
        SeedTree::new(11).stream(Stream::Init, 0)
    }

    #[test]
    fn upn_state_concatenates() {
        assert_eq!(
            upn_state(&[0.1, -0.2], &[1.425], 2, 1).unwrap(),
            vec![0.1, -0.2, 1.425]
        );
        assert_eq!(upn_state(&[0.1, -0.2], &[], 2, 0).unwrap(), vec![0.1, -0.2]);
        assert!(matches!(
            upn_state(&[0.1], &[1.0], 2, 1),
            Err(Error::Shape { .. })
        ));
        let policy = UniversalPolicy::new(4, 4, &[64, 64, 64], Head::Categorical(3), &mut rng());
        assert_eq!(policy.policy_net().input_dim(), 8);
        assert_eq!(policy.value_net().input_dim(), 8);
    }

    #[test]
    fn discrete_actions_in_range_and_deterministic_mode_is_stable() {
        let policy = UniversalPolicy::new(4, 1, &[64, 64, 64], Head::Categorical(2), &mut rng());
        let mut r = rng();
        let input = [0.01, 0.0, -0.02, 0.03, 0.5];
        for _ in 0..200 {
            let (a, lp) = policy.act(&input, &mut r, false).unwrap();
            assert!(matches!(a, Action::Discrete(0 | 1)));
            assert!((lp - policy.log_prob(&input, &a).unwrap()).abs() < 1e-12);
        }
        let first = policy.act(&input, &mut r, true).unwrap();
        for _ in 0..10 {
            assert_eq!(policy.act(&input, &mut r, true).unwrap(), first);
        }
    }

    #[test]
    fn gaussian_log_prob_matches_density() {
        let mut policy = UniversalPolicy::new(3, 2, &[8, 8], Head::Gaussian(2), &mut rng());
        let r = policy.log_std_range().unwrap();
        policy.params_mut()[r.clone()].copy_from_slice(&[-0.3, 0.4]);
        let input = [0.2, -0.1, 0.7, 0.0, 1.0];
        let x = ArrayView2::from_shape((1, 5), &input[..]).unwrap();
        let mean = policy.head_output(x);
        let mut g = rng();
        for _ in 0..50 {
            let (a, lp) = policy.act(&input, &mut g, false).unwrap();
            let Action::Continuous(a) = a else { panic!() };
            // Independent product of univariate normal densities.
            let mut density = 1.0;
            for k in 0..2 {
                let sigma = [-0.3f64, 0.4][k].exp();
                let z = (a[k] - mean[[0, k]]) / sigma;
                density *= (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            }
            assert!((lp - density.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let mut policy = UniversalPolicy::new(1, 1, &[4], Head::Gaussian(2), &mut rng());
        let r = policy.log_std_range().unwrap();
        policy.params_mut()[r].copy_from_slice(&[-9.0, 7.0]);
        policy.clamp_log_std();
        assert_eq!(policy.log_std(), &[LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn non_finite_output_is_a_numeric_error() {
        let mut policy = UniversalPolicy::new(2, 0, &[4], Head::Categorical(2), &mut rng());
        policy.params_mut()[0] = f64::NAN;
        assert!(matches!(
            policy.act(&[1.0, 1.0], &mut rng(), false),
            Err(Error::Numeric { .. })
        ));
    }
}
