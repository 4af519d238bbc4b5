use std::collections::HashMap;

use super::{Candidate, Evaluator, Method};
use crate::envs::{DesignSpace, Environment, SyntheticDesign};
use crate::error::{Error, Result};
use crate::policy::{evaluate, run_upn, Head, Learner, PpoConfig, RolloutRngs, UniversalPolicy};
use crate::rng::{Rng, SeedTree, Stream};
use crate::schedule::BudgetLedger;

/// Scores from the closed-form benchmark.
///
/// `G` in the noise model is the ledger total after the current charge.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    bench: SyntheticDesign,
    noise: Rng,
}

impl SyntheticEvaluator {
    pub fn new(bench: SyntheticDesign, seed: u64) -> Self {
        Self {
            bench,
            noise: SeedTree::new(seed).stream(Stream::Noise, 0),
        }
    }

    /// Methods that do not share a policy get no benefit from past spending,
    /// so `kappa` is zeroed for them.
    pub fn for_method(bench: SyntheticDesign, method: Method, seed: u64) -> Self {
        let bench = if method.shares_policy() {
            bench
        } else {
            let sigma0 = bench.sigma0;
            bench.with_noise(sigma0, 0.0)
        };
        Self::new(bench, seed)
    }

    pub fn bench(&self) -> &SyntheticDesign {
        &self.bench
    }
}

impl Evaluator for SyntheticEvaluator {
    fn design_space(&self) -> &DesignSpace {
        self.bench.design_space()
    }

    fn score(
        &mut self,
        candidate: &Candidate,
        p_target: u64,
        charge: u64,
        filter_j: u32,
        ledger: &mut BudgetLedger,
    ) -> Result<f64> {
        ledger.record_consumption(filter_j, charge)?;
        self.bench
            .evaluate(&candidate.theta, p_target, ledger.units_consumed, &mut self.noise)
    }

    /// The noiseless quality of the selected design.
    fn final_report(&mut self, candidate: &Candidate) -> Result<f64> {
        Ok(self.bench.f_true(&candidate.theta))
    }
}

/// How a control evaluator obtains the policy for an evaluation.
#[derive(Debug, Clone)]
pub enum PolicyMode {
    /// One design-conditioned learner carried across every evaluation.
    Shared(Box<Learner>),
    /// A freshly initialised learner per evaluation, trained from scratch.
    Fresh(PpoConfig),
}

/// Scores designs by training and evaluating a policy in a control task.
pub struct ControlEvaluator {
    env: Box<dyn Environment>,
    mode: PolicyMode,
    tree: SeedTree,
    rngs: RolloutRngs,
    /// Most recent learner trained for each candidate (fresh mode only).
    trained: HashMap<u64, Learner>,
    evaluations: u64,
    train_steps: u64,
    pub search_episodes: usize,
    pub report_episodes: usize,
}

impl ControlEvaluator {
    pub fn new(env: Box<dyn Environment>, method: Method, cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tree = SeedTree::new(seed);
        let mode = if method.shares_policy() {
            let spec = env.spec();
            let mut init = tree.stream(Stream::Init, 0);
            let policy = UniversalPolicy::new(
                spec.obs_dim,
                spec.design_space.len(),
                &cfg.hidden,
                Head::from_action_spec(&spec.action),
                &mut init,
            );
            PolicyMode::Shared(Box::new(Learner::new(policy, cfg)?))
        } else {
            PolicyMode::Fresh(cfg)
        };
        Ok(Self {
            env,
            mode,
            rngs: RolloutRngs {
                dynamics: tree.stream(Stream::Dynamics, 0),
                actions: tree.stream(Stream::Actions, 0),
            },
            tree,
            trained: HashMap::new(),
            evaluations: 0,
            train_steps: 0,
            search_episodes: 5,
            report_episodes: 10,
        })
    }

    pub fn mode(&self) -> &PolicyMode {
        &self.mode
    }

    /// Environment steps spent on training so far.
    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn env_mut(&mut self) -> &mut dyn Environment {
        self.env.as_mut()
    }

    /// The policy that would act for `candidate`: the shared one, or the
    /// last one trained for it.
    pub fn policy_for(&self, candidate: &Candidate) -> Option<&UniversalPolicy> {
        match &self.mode {
            PolicyMode::Shared(l) => Some(&l.policy),
            PolicyMode::Fresh(_) => self.trained.get(&candidate.id).map(|l| &l.policy),
        }
    }

    fn fresh_learner(&self, cfg: &PpoConfig) -> Result<Learner> {
        let spec = self.env.spec();
        let mut init = self.tree.stream(Stream::Init, self.evaluations + 1);
        let policy = UniversalPolicy::new(
            spec.obs_dim,
            spec.design_space.len(),
            &cfg.hidden,
            Head::from_action_spec(&spec.action),
            &mut init,
        );
        Learner::new(policy, cfg.clone())
    }
}

impl Evaluator for ControlEvaluator {
    fn design_space(&self) -> &DesignSpace {
        &self.env.spec().design_space
    }

    fn score(
        &mut self,
        candidate: &Candidate,
        _p_target: u64,
        charge: u64,
        filter_j: u32,
        ledger: &mut BudgetLedger,
    ) -> Result<f64> {
        // Every candidate is judged on the same evaluation episodes.
        let mut eval_rng = self.tree.stream(Stream::Evaluation, 0);
        let episodes = self.search_episodes;
        let report = match &mut self.mode {
            PolicyMode::Shared(learner) => run_upn(
                learner,
                self.env.as_mut(),
                &candidate.theta,
                charge,
                filter_j,
                ledger,
                &mut self.rngs,
                &mut eval_rng,
                episodes,
            )?,
            PolicyMode::Fresh(cfg) => {
                let cfg = cfg.clone();
                let mut learner = self.fresh_learner(&cfg)?;
                let report = run_upn(
                    &mut learner,
                    self.env.as_mut(),
                    &candidate.theta,
                    charge,
                    filter_j,
                    ledger,
                    &mut self.rngs,
                    &mut eval_rng,
                    episodes,
                )?;
                self.trained.insert(candidate.id, learner);
                report
            }
        };
        self.evaluations += 1;
        self.train_steps += report.train_steps;
        Ok(report.eval.mean_return)
    }

    fn final_report(&mut self, candidate: &Candidate) -> Result<f64> {
        let mut rng = self.tree.stream(Stream::Evaluation, 1);
        let episodes = self.report_episodes;
        let policy = match &self.mode {
            PolicyMode::Shared(l) => l.policy.clone(),
            PolicyMode::Fresh(_) => self
                .trained
                .get(&candidate.id)
                .map(|l| l.policy.clone())
                .ok_or_else(|| Error::State(format!("candidate {} was never trained", candidate.id)))?,
        };
        Ok(evaluate(&policy, self.env.as_mut(), &candidate.theta, episodes, &mut rng)?.mean_return)
    }
}
