//! Outer-loop drivers: successive halving, HyperBand in its three flavours,
//! random search and final selection.

mod evaluator;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{DesignConfig, DesignSpace};
use crate::error::{Error, Result};
use crate::records::EvaluationRecord;
use crate::rng::{SeedTree, Stream};
use crate::schedule::{
    all_filters, max_filters, traversal_order, Accounting, BudgetLedger, FilterSchedule,
    HyperbandParams, Traversal,
};

pub use evaluator::{ControlEvaluator, PolicyMode, SyntheticEvaluator};

/// Sampling stream index used by random search (filters use their `j`).
const RANDOM_SEARCH_STREAM: u64 = 1 << 32;

/// Search method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "random")]
    Random,
    /// Classic HyperBand: fresh controller per evaluation, forward order.
    #[serde(rename = "hb")]
    Hyperband,
    /// Shared design-conditioned policy, forward (wide-first) order.
    #[serde(rename = "upnhb-f")]
    UpnForward,
    /// Shared design-conditioned policy, reversed (narrow-first) order.
    #[serde(rename = "upnhb-r")]
    UpnReversed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Hyperband => "hb",
            Method::UpnForward => "upnhb-f",
            Method::UpnReversed => "upnhb-r",
        }
    }

    pub fn shares_policy(self) -> bool {
        matches!(self, Method::UpnForward | Method::UpnReversed)
    }

    pub fn traversal(self) -> Traversal {
        match self {
            Method::UpnReversed => Traversal::Reversed,
            _ => Traversal::Forward,
        }
    }

    pub fn accounting(self) -> Accounting {
        if self.shares_policy() {
            Accounting::Incremental
        } else {
            Accounting::Full
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Method::Random),
            "hb" | "vanilla" | "hyperband" => Ok(Method::Hyperband),
            "upnhb-f" | "upnhb_f" => Ok(Method::UpnForward),
            "upnhb-r" | "upnhb_r" => Ok(Method::UpnReversed),
            other => Err(Error::Parameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub filter_j: u32,
    pub stage_i: u32,
    pub p_i: u64,
    pub score: f64,
}

/// A sampled design and what has been spent on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub theta: DesignConfig,
    pub cumulative_units: u64,
    pub last_score: f64,
    pub history: Vec<HistoryEntry>,
}

impl Candidate {
    pub fn new(id: u64, theta: DesignConfig) -> Self {
        Self {
            id,
            theta,
            cumulative_units: 0,
            last_score: f64::NEG_INFINITY,
            history: Vec::new(),
        }
    }

    /// Highest fidelity this candidate has been scored at.
    pub fn fidelity(&self) -> u64 {
        self.history.last().map_or(0, |h| h.p_i)
    }

    pub fn filter(&self) -> Option<u32> {
        self.history.last().map(|h| h.filter_j)
    }
}

/// Something that can score a design at a given fidelity.
pub trait Evaluator {
    fn design_space(&self) -> &DesignSpace;

    /// Spend `charge` units on `candidate` (attributed to filter `filter_j`)
    /// so that it has received fidelity `p_target`, and return its score.
    /// Implementations must charge `ledger` exactly `charge` units.
    fn score(
        &mut self,
        candidate: &Candidate,
        p_target: u64,
        charge: u64,
        filter_j: u32,
        ledger: &mut BudgetLedger,
    ) -> Result<f64>;

    /// Score reported for the selected design after the search.
    fn final_report(&mut self, candidate: &Candidate) -> Result<f64>;
}

/// Settings shared by all drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub method: Method,
    pub seed: u64,
    pub steps_per_unit: u64,
    pub config_hash: String,
    /// Fill `wall_ms` in records. Off keeps record files reproducible.
    pub record_timing: bool,
}

impl SearchOptions {
    pub fn new(method: Method, seed: u64, steps_per_unit: u64) -> Self {
        Self {
            method,
            seed,
            steps_per_unit,
            config_hash: String::new(),
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    /// Last-stage winner of every filter (random search: every candidate).
    pub finalists: Vec<Candidate>,
    pub all_records: Vec<EvaluationRecord>,
    pub ledger: BudgetLedger,
    pub method: Method,
    pub seed: u64,
    /// Filter that produced `best`.
    pub winner_filter: u32,
    /// [`Evaluator::final_report`] of `best`.
    pub final_score: f64,
    /// Units left over by floor division in random search.
    pub discarded_units: u64,
    pub candidates_sampled: u64,
}

/// Evaluations of one stage, in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage_i: u32,
    pub p_i: u64,
    pub scored: Vec<Candidate>,
    pub survivors: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingResult {
    pub stages: Vec<StageResult>,
    pub finalist: Candidate,
}

/// Mutable state threaded through one search.
pub struct SearchContext<'a> {
    pub options: &'a SearchOptions,
    pub evaluator: &'a mut dyn Evaluator,
    pub ledger: BudgetLedger,
    pub records: Vec<EvaluationRecord>,
    next_pad_id: u64,
}

impl<'a> SearchContext<'a> {
    pub fn new(options: &'a SearchOptions, evaluator: &'a mut dyn Evaluator) -> Self {
        Self {
            options,
            evaluator,
            ledger: BudgetLedger::new(options.steps_per_unit),
            records: Vec::new(),
            next_pad_id: 1 << 40,
        }
    }

    fn score(
        &mut self,
        candidate: &mut Candidate,
        filter_j: u32,
        stage_i: u32,
        p_i: u64,
        accounting: Accounting,
        final_stage: bool,
    ) -> Result<()> {
        let charge = match accounting {
            Accounting::Full => p_i,
            Accounting::Incremental => p_i.saturating_sub(candidate.fidelity()),
        };
        let started = Instant::now();
        let score = self
            .evaluator
            .score(candidate, p_i, charge, filter_j, &mut self.ledger)?;
        if score.is_nan() {
            return Err(Error::numeric(format!("candidate {} scored NaN", candidate.id)));
        }
        candidate.cumulative_units += charge;
        candidate.last_score = score;
        candidate.history.push(HistoryEntry {
            filter_j,
            stage_i,
            p_i,
            score,
        });
        self.records.push(EvaluationRecord {
            method: self.options.method.name().to_string(),
            seed: self.options.seed,
            config_hash: self.options.config_hash.clone(),
            filter_j,
            stage_i,
            candidate_id: candidate.id,
            theta: candidate.theta.0.clone(),
            p_i,
            cumulative_units: candidate.cumulative_units,
            score,
            final_stage,
            wall_ms: if self.options.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        Ok(())
    }
}

/// Indices of the `k` best candidates: highest score first, ties by lower
/// id.
pub fn top_k(candidates: &[Candidate], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.last_score
            .total_cmp(&ca.last_score)
            .then(ca.id.cmp(&cb.id))
    });
    idx.truncate(k);
    idx
}

/// One successive-halving run over `candidates` following `schedule`.
///
/// If the caller supplies a count different from `schedule.n`, extra
/// candidates are dropped and missing ones are sampled uniformly with
/// `pad_rng`.
pub fn successive_halving(
    mut candidates: Vec<Candidate>,
    schedule: &FilterSchedule,
    eta: u64,
    accounting: Accounting,
    ctx: &mut SearchContext<'_>,
    pad_rng: &mut crate::rng::Rng,
) -> Result<HalvingResult> {
    if candidates.is_empty() {
        return Err(Error::Parameter("successive halving needs at least one candidate".into()));
    }
    let n = schedule.n as usize;
    candidates.truncate(n);
    while candidates.len() < n {
        let theta = ctx.evaluator.design_space().sample(pad_rng);
        candidates.push(Candidate::new(ctx.next_pad_id, theta));
        ctx.next_pad_id += 1;
    }

    let last = schedule.stages.len() - 1;
    let mut stages = Vec::with_capacity(schedule.stages.len());
    let mut alive = candidates;
    for (i, stage) in schedule.stages.iter().enumerate() {
        for c in alive.iter_mut() {
            ctx.score(c, schedule.j, i as u32, stage.p, accounting, i == last)?;
        }
        let keep = schedule.survivors_after(i, eta) as usize;
        let order = top_k(&alive, keep);
        let survivors: Vec<Candidate> = order.iter().map(|&k| alive[k].clone()).collect();
        stages.push(StageResult {
            stage_i: i as u32,
            p_i: stage.p,
            survivors: survivors.iter().map(|c| c.id).collect(),
            scored: alive,
        });
        alive = survivors;
    }
    let finalist = alive.into_iter().next().expect("at least one survivor");
    Ok(HalvingResult { stages, finalist })
}

/// Best candidate by last score, ties to the lower id.
pub fn select_final(candidates: &[Candidate]) -> Result<Candidate> {
    top_k(candidates, 1)
        .first()
        .map(|&i| candidates[i].clone())
        .ok_or_else(|| Error::State("no completed candidates to select from".into()))
}

/// The record that wins final selection: highest final-stage score, ties
/// to the lower candidate id.
pub fn select_final_record(records: &[EvaluationRecord]) -> Result<&EvaluationRecord> {
    records
        .iter()
        .filter(|r| r.final_stage)
        .min_by(|a, b| b.score.total_cmp(&a.score).then(a.candidate_id.cmp(&b.candidate_id)))
        .ok_or_else(|| Error::State("records contain no final-stage scores".into()))
}

/// Id of the first candidate of filter `j`; ids are stable across methods
/// and traversal orders.
fn filter_id_base(filters: &[FilterSchedule], j: u32) -> u64 {
    filters[..j as usize].iter().map(|f| f.n).sum()
}

/// Full HyperBand run with `options.method` (any method but random).
pub fn hyperband(
    evaluator: &mut dyn Evaluator,
    params: &HyperbandParams,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    if options.method == Method::Random {
        return Err(Error::Parameter("use random_search for the random baseline".into()));
    }
    let j_max = max_filters(params)?;
    let filters = all_filters(params)?;
    let tree = SeedTree::new(options.seed);
    let accounting = options.method.accounting();
    let mut ctx = SearchContext::new(options, evaluator);
    let mut finalists = Vec::with_capacity(filters.len());
    let mut sampled = 0;
    for j in traversal_order(j_max, options.method.traversal()) {
        let schedule = &filters[j as usize];
        let mut rng = tree.stream(Stream::Sampling, j as u64);
        let base = filter_id_base(&filters, j);
        let candidates: Vec<Candidate> = (0..schedule.n)
            .map(|k| Candidate::new(base + k, ctx.evaluator.design_space().sample(&mut rng)))
            .collect();
        sampled += candidates.len() as u64;
        let result = successive_halving(candidates, schedule, params.eta, accounting, &mut ctx, &mut rng)?;
        finalists.push(result.finalist);
    }
    let best = select_final(&finalists)?;
    let winner_filter = best.filter().expect("scored");
    let final_score = ctx.evaluator.final_report(&best)?;
    Ok(SearchOutcome {
        best,
        finalists,
        all_records: ctx.records,
        ledger: ctx.ledger,
        method: options.method,
        seed: options.seed,
        winner_filter,
        final_score,
        discarded_units: 0,
        candidates_sampled: sampled,
    })
}

/// `n_configs` uniform designs, each trained from scratch on an equal share
/// of `total_budget_units`.
pub fn random_search(
    evaluator: &mut dyn Evaluator,
    n_configs: u64,
    total_budget_units: u64,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    if n_configs == 0 {
        return Err(Error::Parameter("random search needs n_configs >= 1".into()));
    }
    let per_config = total_budget_units / n_configs;
    if per_config == 0 {
        return Err(Error::Parameter(format!(
            "{total_budget_units} units cannot be shared among {n_configs} configurations"
        )));
    }
    let discarded_units = total_budget_units - per_config * n_configs;
    let tree = SeedTree::new(options.seed);
    let mut rng = tree.stream(Stream::Sampling, RANDOM_SEARCH_STREAM);
    let mut ctx = SearchContext::new(options, evaluator);
    let mut finalists = Vec::with_capacity(n_configs as usize);
    for id in 0..n_configs {
        let mut c = Candidate::new(id, ctx.evaluator.design_space().sample(&mut rng));
        ctx.score(&mut c, 0, 0, per_config, Accounting::Full, true)?;
        finalists.push(c);
    }
    let best = select_final(&finalists)?;
    let final_score = ctx.evaluator.final_report(&best)?;
    Ok(SearchOutcome {
        best,
        finalists,
        all_records: ctx.records,
        ledger: ctx.ledger,
        method: Method::Random,
        seed: options.seed,
        winner_filter: 0,
        final_score,
        discarded_units,
        candidates_sampled: n_configs,
    })
}
