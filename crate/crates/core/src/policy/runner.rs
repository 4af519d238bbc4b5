//! Training and evaluation episodes for one design.

use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::ppo::{ppo_update, Batch, Learner, UpdateDiagnostics};
use super::universal::{upn_state, UniversalPolicy};
use crate::envs::{Action, DesignConfig, Environment};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::schedule::BudgetLedger;

/// Random streams consumed while training on one design.
#[derive(Debug, Clone)]
pub struct RolloutRngs {
    pub dynamics: Rng,
    pub actions: Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_err: f64,
    pub episodes: usize,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub eval: EvalReport,
    pub train_steps: u64,
    pub updates: Vec<UpdateDiagnostics>,
}

/// Mean and standard error (`sample_std / sqrt(n)`, 0 for one sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn policy_input(policy: &UniversalPolicy, obs: &[f64], design: &[f64]) -> Result<Vec<f64>> {
    upn_state(obs, design, policy.obs_dim(), policy.design_dim())
}

/// Run `episodes` full episodes with deterministic actions.
pub fn evaluate(
    policy: &UniversalPolicy,
    env: &mut dyn Environment,
    theta: &DesignConfig,
    episodes: usize,
    rng: &mut Rng,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Parameter("evaluation needs at least one episode".into()));
    }
    let design = env.spec().design_space.normalize(theta);
    let mut returns = Vec::with_capacity(episodes);
    let mut steps = 0u64;
    for _ in 0..episodes {
        let mut obs = env.reset(theta, rng)?;
        let mut total = 0.0;
        loop {
            let input = policy_input(policy, &obs, &design)?;
            let (action, _) = policy.act(&input, rng, true)?;
            let tr = env.step(&action)?;
            steps += 1;
            total += tr.reward;
            let done = tr.done();
            obs = tr.obs;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    let (mean_return, std_err) = mean_and_stderr(&returns);
    Ok(EvalReport {
        mean_return,
        std_err,
        episodes,
        steps,
    })
}

/// Collect exactly `steps` transitions at a fixed design, continuing the
/// current episode in `state` and updating after every chunk of
/// `batch_size` steps (the last chunk may be shorter).
fn train_steps(
    learner: &mut Learner,
    env: &mut dyn Environment,
    theta: &DesignConfig,
    design: &[f64],
    steps: u64,
    rngs: &mut RolloutRngs,
) -> Result<Vec<UpdateDiagnostics>> {
    let gamma = learner.cfg.gamma;
    let lambda = learner.cfg.lambda;
    let batch_size = learner.cfg.batch_size as u64;
    let mut updates = Vec::new();
    let mut obs = env.reset(theta, &mut rngs.dynamics)?;
    let mut remaining = steps;
    while remaining > 0 {
        let chunk = remaining.min(batch_size) as usize;
        let mut inputs = Vec::with_capacity(chunk);
        let mut actions: Vec<Action> = Vec::with_capacity(chunk);
        let mut logps = Vec::with_capacity(chunk);
        let mut values = Vec::with_capacity(chunk);
        let mut rewards = Vec::with_capacity(chunk);
        let mut dones = Vec::with_capacity(chunk);
        let mut episode_open = true;
        for _ in 0..chunk {
            let input = policy_input(&learner.policy, &obs, design)?;
            let (action, logp) = learner.policy.act(&input, &mut rngs.actions, false)?;
            let value = learner.policy.value(&input)?;
            let tr = env.step(&action)?;
            let mut reward = tr.reward;
            if tr.truncated && !tr.terminated {
                // Time limits are not failures: bootstrap through the cap.
                let next = policy_input(&learner.policy, &tr.obs, design)?;
                reward += gamma * learner.policy.value(&next)?;
            }
            inputs.push(input);
            actions.push(action);
            logps.push(logp);
            values.push(value);
            rewards.push(reward);
            dones.push(tr.done());
            if tr.done() {
                obs = env.reset(theta, &mut rngs.dynamics)?;
                episode_open = false;
            } else {
                obs = tr.obs;
                episode_open = true;
            }
        }
        let last_value = if episode_open {
            learner
                .policy
                .value(&policy_input(&learner.policy, &obs, design)?)?
        } else {
            0.0
        };
        let (advantages, returns) = gae(&rewards, &values, &dones, last_value, gamma, lambda)?;
        let batch = Batch::from_parts(inputs, &actions, logps, advantages, returns)?;
        updates.push(ppo_update(learner, &batch, &mut rngs.actions)?);
        remaining -= chunk as u64;
    }
    Ok(updates)
}

/// Train `learner` at design `theta` for `p_units` resource units, charge
/// the ledger, then evaluate with `eval_episodes` deterministic episodes.
#[allow(clippy::too_many_arguments)]
pub fn run_upn(
    learner: &mut Learner,
    env: &mut dyn Environment,
    theta: &DesignConfig,
    p_units: u64,
    filter_j: u32,
    ledger: &mut BudgetLedger,
    rngs: &mut RolloutRngs,
    eval_rng: &mut Rng,
    eval_episodes: usize,
) -> Result<RunReport> {
    env.spec().design_space.check(theta)?;
    if let Some(remaining) = ledger.remaining_units() {
        if p_units > remaining {
            return Err(Error::Budget {
                requested: p_units,
                remaining,
            });
        }
    }
    let steps = p_units
        .checked_mul(ledger.steps_per_unit)
        .ok_or_else(|| Error::Accounting(format!("{p_units} units overflow the step counter")))?;
    let design = env.spec().design_space.normalize(theta);
    let updates = if steps > 0 {
        train_steps(learner, env, theta, &design, steps, rngs)?
    } else {
        Vec::new()
    };
    ledger.record_consumption(filter_j, p_units)?;
    let eval = evaluate(&learner.policy, env, theta, eval_episodes, eval_rng)?;
    ledger.record_eval_steps(eval.steps);
    Ok(RunReport {
        eval,
        train_steps: steps,
        updates,
    })
}
