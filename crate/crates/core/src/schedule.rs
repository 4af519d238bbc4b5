//! HyperBand filter arithmetic: filter count, per-filter stage matrices,
//! traversal order and resource-unit accounting.
//!
//! Everything here is pure integer arithmetic. The only mutable type is
//! [`BudgetLedger`], which tracks what a run actually consumed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the starting configuration count `n` of each filter is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// `n = eta^j`: every filter starts with exactly as many configurations
    /// as can be halved down to one.
    #[default]
    Table,
    /// `n = ceil((B / M) * eta^j / (j + 1))` with `B = (j_max + 1) * M`.
    Formula,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleMode::Table => f.write_str("table"),
            ScheduleMode::Formula => f.write_str("formula"),
        }
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ScheduleMode::Table),
            "formula" => Ok(ScheduleMode::Formula),
            other => Err(Error::Parameter(format!("unknown schedule mode `{other}`"))),
        }
    }
}

/// Direction in which filters are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    /// Widest (lowest-fidelity) filter first.
    Forward,
    /// Narrowest (highest-fidelity) filter first.
    Reversed,
}

/// User inputs of a HyperBand search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperbandParams {
    /// Maximum configurations in the widest filter, and the maximum resource
    /// units any single configuration may receive.
    pub m: u64,
    /// Elimination factor.
    pub eta: u64,
    #[serde(default)]
    pub mode: ScheduleMode,
}

impl HyperbandParams {
    pub fn new(m: u64, eta: u64, mode: ScheduleMode) -> Result<Self> {
        let params = Self { m, eta, mode };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Parameter(format!("M must be >= 1, got {}", self.m)));
        }
        if self.eta < 2 {
            return Err(Error::Parameter(format!("eta must be >= 2, got {}", self.eta)));
        }
        // M = 1 admits a single degenerate filter for any eta.
        if self.m > 1 && self.eta > self.m {
            return Err(Error::Parameter(format!(
                "eta ({}) must not exceed M ({})",
                self.eta, self.m
            )));
        }
        Ok(())
    }
}

/// One successive-halving run: starting count/fidelity and every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSchedule {
    pub j: u32,
    pub n: u64,
    pub p: u64,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    /// Configurations evaluated at this stage.
    pub n: u64,
    /// Resource units per configuration at this stage.
    pub p: u64,
}

impl FilterSchedule {
    /// Number of configurations kept after stage `i`.
    pub fn survivors_after(&self, i: usize, eta: u64) -> u64 {
        (self.stages[i].n / eta).max(1)
    }

    /// Units charged when every configuration is trained from scratch at
    /// every stage.
    pub fn full_units(&self) -> u64 {
        self.stages.iter().map(|s| s.n * s.p).sum()
    }

    /// Units charged when a surviving configuration only pays for the
    /// fidelity it has not yet received.
    pub fn incremental_units(&self) -> u64 {
        let mut prev = 0;
        let mut total = 0;
        for s in &self.stages {
            total += s.n * (s.p - prev);
            prev = s.p;
        }
        total
    }
}

fn checked_pow(base: u64, exp: u32) -> Result<u64> {
    base.checked_pow(exp)
        .ok_or_else(|| Error::Parameter(format!("{base}^{exp} overflows")))
}

/// `floor(log_eta(M))`, computed exactly in integers.
pub fn max_filters(params: &HyperbandParams) -> Result<u32> {
    params.validate()?;
    let mut j = 0u32;
    let mut power = 1u64;
    while let Some(next) = power.checked_mul(params.eta) {
        if next > params.m {
            break;
        }
        power = next;
        j += 1;
    }
    Ok(j)
}

/// Stage matrix of filter `j`.
pub fn filter_schedule(params: &HyperbandParams, j: u32) -> Result<FilterSchedule> {
    let j_max = max_filters(params)?;
    if j > j_max {
        return Err(Error::Parameter(format!(
            "filter index {j} out of range 0..={j_max}"
        )));
    }
    let eta = params.eta;
    let m = params.m;
    let eta_j = checked_pow(eta, j)?;

    let p = if m.is_multiple_of(eta_j) {
        m / eta_j
    } else {
        ((m as f64 / eta_j as f64).round() as u64).max(1)
    };

    let n = match params.mode {
        ScheduleMode::Table => eta_j,
        ScheduleMode::Formula => {
            // ceil((B/M) * eta^j / (j+1)) with B/M = j_max + 1.
            let num = (j_max as u64 + 1) * eta_j;
            let den = j as u64 + 1;
            num.div_ceil(den)
        }
    };

    let mut stages = Vec::with_capacity(j as usize + 1);
    for i in 0..=j {
        let eta_i = checked_pow(eta, i)?;
        let n_i = n / eta_i;
        let p_i = p.saturating_mul(eta_i).min(m);
        stages.push(Stage { n: n_i, p: p_i });
    }
    Ok(FilterSchedule { j, n, p, stages })
}

/// Every filter, indexed by `j` (element `j` is filter `j`).
pub fn all_filters(params: &HyperbandParams) -> Result<Vec<FilterSchedule>> {
    let j_max = max_filters(params)?;
    (0..=j_max).map(|j| filter_schedule(params, j)).collect()
}

/// Order in which filters are executed.
pub fn traversal_order(j_max: u32, traversal: Traversal) -> Vec<u32> {
    match traversal {
        Traversal::Forward => (0..=j_max).rev().collect(),
        Traversal::Reversed => (0..=j_max).collect(),
    }
}

/// How resource units are charged to re-scored survivors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    /// Fresh training at each stage: a survivor pays the full `p_i`.
    Full,
    /// Warm-started training: a survivor pays `p_i - p_{i-1}`.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitTotals {
    pub full: u64,
    pub incremental: u64,
}

impl UnitTotals {
    pub fn get(&self, accounting: Accounting) -> u64 {
        match accounting {
            Accounting::Full => self.full,
            Accounting::Incremental => self.incremental,
        }
    }
}

/// Total resource units of a complete HyperBand run under both accountings.
pub fn total_units(params: &HyperbandParams) -> Result<UnitTotals> {
    let filters = all_filters(params)?;
    Ok(UnitTotals {
        full: filters.iter().map(FilterSchedule::full_units).sum(),
        incremental: filters.iter().map(FilterSchedule::incremental_units).sum(),
    })
}

/// Total number of configurations sampled across all filters.
pub fn total_configurations(params: &HyperbandParams) -> Result<u64> {
    Ok(all_filters(params)?.iter().map(|f| f.n).sum())
}

/// Running account of training effort.
///
/// `env_steps_consumed == units_consumed * steps_per_unit` holds after every
/// call to [`BudgetLedger::record_consumption`]. Evaluation steps are tracked
/// separately and never charged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub steps_per_unit: u64,
    pub units_consumed: u64,
    pub env_steps_consumed: u64,
    pub per_filter_units: BTreeMap<u32, u64>,
    pub eval_steps: u64,
    /// Optional hard cap on `units_consumed`.
    pub unit_limit: Option<u64>,
}

impl BudgetLedger {
    pub fn new(steps_per_unit: u64) -> Self {
        Self {
            steps_per_unit,
            units_consumed: 0,
            env_steps_consumed: 0,
            per_filter_units: BTreeMap::new(),
            eval_steps: 0,
            unit_limit: None,
        }
    }

    pub fn with_limit(mut self, units: u64) -> Self {
        self.unit_limit = Some(units);
        self
    }

    pub fn remaining_units(&self) -> Option<u64> {
        self.unit_limit
            .map(|limit| limit.saturating_sub(self.units_consumed))
    }

    /// Charge `units` to filter `j`.
    pub fn record_consumption(&mut self, j: u32, units: u64) -> Result<()> {
        if units == 0 {
            return Ok(());
        }
        if let Some(remaining) = self.remaining_units() {
            if units > remaining {
                return Err(Error::Budget {
                    requested: units,
                    remaining,
                });
            }
        }
        let overflow = || Error::Accounting(format!("charging {units} units overflows"));
        let new_units = self.units_consumed.checked_add(units).ok_or_else(overflow)?;
        let new_steps = units
            .checked_mul(self.steps_per_unit)
            .and_then(|s| self.env_steps_consumed.checked_add(s))
            .ok_or_else(overflow)?;
        let slot = self.per_filter_units.entry(j).or_insert(0);
        *slot = slot.checked_add(units).ok_or_else(overflow)?;
        self.units_consumed = new_units;
        self.env_steps_consumed = new_steps;
        Ok(())
    }

    pub fn record_eval_steps(&mut self, steps: u64) {
        self.eval_steps = self.eval_steps.saturating_add(steps);
    }

    pub fn is_consistent(&self) -> bool {
        self.units_consumed.checked_mul(self.steps_per_unit) == Some(self.env_steps_consumed)
            && self.per_filter_units.values().sum::<u64>() == self.units_consumed
    }
}
