//! Clipped-surrogate policy optimisation with exact backpropagation.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gae::normalize;
use super::universal::{gaussian_entropy, log_softmax, Head, UniversalPolicy};
use crate::envs::Action;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSchedule {
    #[default]
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Environment steps collected between updates.
    pub batch_size: usize,
    pub clip: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub minibatch_size: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coefficient: f64,
    pub value_coefficient: f64,
    pub schedule: StepSchedule,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            batch_size: 4000,
            clip: 0.2,
            epochs: 10,
            step_size: 3e-4,
            minibatch_size: 4000,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coefficient: 0.0,
            value_coefficient: 0.5,
            schedule: StepSchedule::Constant,
            hidden: vec![64, 64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.minibatch_size == 0 {
            return bad("epochs, batch_size and minibatch_size must be >= 1".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.entropy_coefficient.is_finite() && self.entropy_coefficient >= 0.0)
            || !(self.value_coefficient.is_finite() && self.value_coefficient >= 0.0)
        {
            return bad("loss coefficients must be finite and non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden layer sizes must be positive, got {:?}", self.hidden));
        }
        Ok(())
    }
}

/// Adaptive-moment optimiser over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchActions {
    Discrete(Vec<usize>),
    Continuous(Array2<f64>),
}

impl BatchActions {
    fn len(&self) -> usize {
        match self {
            BatchActions::Discrete(a) => a.len(),
            BatchActions::Continuous(a) => a.nrows(),
        }
    }

    fn select(&self, idx: &[usize]) -> BatchActions {
        match self {
            BatchActions::Discrete(a) => BatchActions::Discrete(idx.iter().map(|&i| a[i]).collect()),
            BatchActions::Continuous(a) => BatchActions::Continuous(a.select(ndarray::Axis(0), idx)),
        }
    }
}

/// One optimisation batch: augmented inputs, behaviour log-probabilities,
/// advantages and regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub actions: BatchActions,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_parts(
        inputs: Vec<Vec<f64>>,
        actions: &[Action],
        old_log_probs: Vec<f64>,
        advantages: Vec<f64>,
        returns: Vec<f64>,
    ) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Parameter("empty batch".into()));
        }
        let width = inputs[0].len();
        for (len, context) in [
            (actions.len(), "batch actions"),
            (old_log_probs.len(), "batch log-probs"),
            (advantages.len(), "batch advantages"),
            (returns.len(), "batch returns"),
        ] {
            if len != n {
                return Err(Error::Shape { expected: n, got: len, context });
            }
        }
        let flat: Vec<f64> = inputs.into_iter().flatten().collect();
        let inputs = Array2::from_shape_vec((n, width), flat)
            .map_err(|_| Error::Parameter("ragged batch inputs".into()))?;
        let actions = match &actions[0] {
            Action::Discrete(_) => BatchActions::Discrete(
                actions
                    .iter()
                    .map(|a| match a {
                        Action::Discrete(k) => Ok(*k),
                        _ => Err(Error::Parameter("mixed action kinds".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
            Action::Continuous(first) => {
                let dim = first.len();
                let mut flat = Vec::with_capacity(n * dim);
                for a in actions {
                    match a {
                        Action::Continuous(v) if v.len() == dim => flat.extend_from_slice(v),
                        _ => return Err(Error::Parameter("mixed action kinds".into())),
                    }
                }
                BatchActions::Continuous(Array2::from_shape_vec((n, dim), flat).expect("dims"))
            }
        };
        Ok(Self {
            inputs,
            actions,
            old_log_probs,
            advantages,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(ndarray::Axis(0), idx),
            actions: self.actions.select(idx),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Scalar pieces of the objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Negated clipped surrogate.
    pub policy: f64,
    /// Negated unclipped surrogate, for comparison.
    pub policy_unclipped: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Objective `L = -surrogate + c_v * mean((V - R)^2) - c_e * entropy`
/// evaluated on `batch`, with its gradient when `want_grad`.
pub fn loss(
    policy: &UniversalPolicy,
    batch: &Batch,
    cfg: &PpoConfig,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    let n = batch.len();
    if n == 0 || batch.actions.len() != n {
        return Err(Error::Parameter("empty or inconsistent batch".into()));
    }
    if batch.inputs.ncols() != policy.input_dim() {
        return Err(Error::Shape {
            expected: policy.input_dim(),
            got: batch.inputs.ncols(),
            context: "batch inputs",
        });
    }
    let params = policy.params();
    let inputs: ArrayView2<f64> = batch.inputs.view();
    let inv_n = 1.0 / n as f64;

    let pcache = policy.policy_net().forward(params, inputs);
    let vcache = policy.value_net().forward(params, inputs);
    let head = pcache.output();
    let values = vcache.output();

    let mut parts = LossParts::default();
    // dL/dlogp for each sample.
    let mut d_logp = vec![0.0; n];
    let mut new_logp = vec![0.0; n];
    let mut d_head = Array2::<f64>::zeros(head.raw_dim());
    let mut d_log_std = vec![0.0; policy.log_std().len()];

    match (policy.head(), &batch.actions) {
        (Head::Categorical(k), BatchActions::Discrete(actions)) => {
            for i in 0..n {
                let row = head.row(i);
                let logp = log_softmax(row.as_slice().expect("contiguous"));
                let a = actions[i];
                if a >= k {
                    return Err(Error::Parameter(format!("action {a} out of range for {k} logits")));
                }
                new_logp[i] = logp[a];
                let ent: f64 = -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
                parts.entropy += ent * inv_n;
                if want_grad {
                    for (c, lp) in logp.iter().enumerate() {
                        let p = lp.exp();
                        // entropy: dH/dz_c = -p_c (log p_c + H)
                        d_head[[i, c]] += cfg.entropy_coefficient * inv_n * p * (lp + ent);
                    }
                }
            }
        }
        (Head::Gaussian(d), BatchActions::Continuous(actions)) => {
            if actions.ncols() != d {
                return Err(Error::Shape { expected: d, got: actions.ncols(), context: "actions" });
            }
            let log_std = policy.log_std();
            parts.entropy = gaussian_entropy(log_std);
            for i in 0..n {
                let mut lp = 0.0;
                for c in 0..d {
                    let z = (actions[[i, c]] - head[[i, c]]) / log_std[c].exp();
                    lp += -0.5 * z * z - log_std[c] - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                new_logp[i] = lp;
            }
            if want_grad {
                for g in d_log_std.iter_mut() {
                    *g -= cfg.entropy_coefficient;
                }
            }
        }
        (head, _) => {
            return Err(Error::Parameter(format!("batch actions do not match head {head:?}")));
        }
    }

    let eps = cfg.clip;
    let mut clipped = 0usize;
    for i in 0..n {
        let adv = batch.advantages[i];
        let log_ratio = new_logp[i] - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let surrogate = unclipped.min(clipped_term);
        parts.policy -= surrogate * inv_n;
        parts.policy_unclipped -= unclipped * inv_n;
        parts.approx_kl -= log_ratio * inv_n;
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        // The unclipped branch carries gradient only where it is the minimum.
        if unclipped <= clipped_term {
            d_logp[i] = -unclipped * inv_n;
        }
    }
    parts.clip_fraction = clipped as f64 * inv_n;

    let mut d_values = Array2::<f64>::zeros(values.raw_dim());
    for i in 0..n {
        let err = values[[i, 0]] - batch.returns[i];
        parts.value += err * err * inv_n;
        d_values[[i, 0]] = cfg.value_coefficient * 2.0 * err * inv_n;
    }
    parts.total = parts.policy + cfg.value_coefficient * parts.value
        - cfg.entropy_coefficient * parts.entropy;

    if !want_grad {
        return Ok((parts, None));
    }

    match (policy.head(), &batch.actions) {
        (Head::Categorical(_), BatchActions::Discrete(actions)) => {
            for i in 0..n {
                if d_logp[i] == 0.0 {
                    continue;
                }
                let logp = log_softmax(head.row(i).as_slice().expect("contiguous"));
                for (c, lp) in logp.iter().enumerate() {
                    let onehot = if c == actions[i] { 1.0 } else { 0.0 };
                    d_head[[i, c]] += d_logp[i] * (onehot - lp.exp());
                }
            }
        }
        (Head::Gaussian(d), BatchActions::Continuous(actions)) => {
            let log_std = policy.log_std();
            for i in 0..n {
                if d_logp[i] == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let sigma = log_std[c].exp();
                    let z = (actions[[i, c]] - head[[i, c]]) / sigma;
                    d_head[[i, c]] += d_logp[i] * z / sigma;
                    d_log_std[c] += d_logp[i] * (z * z - 1.0);
                }
            }
        }
        _ => unreachable!("checked above"),
    }

    let mut grad = vec![0.0; params.len()];
    policy.policy_net().backward(params, &pcache, d_head, &mut grad);
    policy.value_net().backward(params, &vcache, d_values, &mut grad);
    if let Some(r) = policy.log_std_range() {
        for (g, d) in grad[r].iter_mut().zip(&d_log_std) {
            *g += d;
        }
    }
    Ok((parts, Some(grad)))
}

/// Summary of one call to [`ppo_update`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub gradient_steps: u64,
}

/// A policy together with its optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub policy: UniversalPolicy,
    pub optimizer: Adam,
    pub cfg: PpoConfig,
}

impl Learner {
    pub fn new(policy: UniversalPolicy, cfg: PpoConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Adam::new(policy.params().len(), cfg.step_size);
        Ok(Self { policy, optimizer, cfg })
    }
}

/// `cfg.epochs` passes of shuffled minibatch descent on `batch`.
///
/// Advantages are normalised per batch. If the loss or any parameter turns
/// non-finite, the policy and optimiser are restored and a numeric error
/// is returned.
pub fn ppo_update(learner: &mut Learner, batch: &Batch, rng: &mut Rng) -> Result<UpdateDiagnostics> {
    if batch.is_empty() {
        return Err(Error::Parameter("ppo_update needs a non-empty batch".into()));
    }
    let saved_params = learner.policy.params().to_vec();
    let saved_opt = learner.optimizer.clone();

    let mut normalized = batch.clone();
    normalize(&mut normalized.advantages);

    let result = run_epochs(learner, &normalized, rng);
    match result {
        Ok(diag) if learner.policy.all_finite() => Ok(diag),
        Ok(_) => {
            learner.policy.set_params(saved_params)?;
            learner.optimizer = saved_opt;
            Err(Error::numeric("parameters became non-finite during the update"))
        }
        Err(e) => {
            learner.policy.set_params(saved_params)?;
            learner.optimizer = saved_opt;
            Err(e)
        }
    }
}

fn run_epochs(learner: &mut Learner, batch: &Batch, rng: &mut Rng) -> Result<UpdateDiagnostics> {
    let cfg = learner.cfg.clone();
    let n = batch.len();
    let mb = cfg.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut diag = UpdateDiagnostics::default();
    for _ in 0..cfg.epochs {
        if mb < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(mb) {
            let (parts, grad) = if mb == n {
                loss(&learner.policy, batch, &cfg, true)?
            } else {
                loss(&learner.policy, &batch.select(chunk), &cfg, true)?
            };
            let grad = grad.expect("gradient requested");
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("non-finite loss {parts:?}")));
            }
            learner.optimizer.step(learner.policy.params_mut(), &grad);
            learner.policy.clamp_log_std();
            diag.gradient_steps += 1;
        }
    }
    let (after, _) = loss(&learner.policy, batch, &cfg, false)?;
    if !after.total.is_finite() {
        return Err(Error::numeric(format!("non-finite loss after update {after:?}")));
    }
    diag.mean_kl = after.approx_kl;
    diag.clip_fraction = after.clip_fraction;
    diag.value_loss = after.value;
    diag.policy_loss = after.policy;
    diag.entropy = after.entropy;
    Ok(diag)
}
