//! Post-run statistics: trial aggregation, design histograms, stability
//! probes and eta sweeps.
//!
//! CSV column orders:
//!
//! ```text
//! trials.csv     method,config_hash,seed,winner_filter,best_return,theta_0..theta_{d-1}
//! aggregate.csv  method,config_hash,trials,statistic,mean,std_err
//! histogram.csv  method,seed,config_hash,episodes,bin,lower,upper,count
//! stability.csv  method,seed,config_hash,noise_frac,episode,return
//! eta_sweep.csv  m,eta,mode,filters,configurations,units_full,units_incremental,steps_full,steps_incremental
//! ```

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{DesignConfig, Environment};
use crate::error::{Error, Result};
use crate::policy::{evaluate, mean_and_stderr, UniversalPolicy};
use crate::records::EvaluationRecord;
use crate::rng::Rng;
use crate::schedule::{max_filters, total_configurations, total_units, HyperbandParams, ScheduleMode};
use crate::search::{select_final_record, SearchOutcome};

/// What one trial (seed) produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub best_return: f64,
    pub winner_filter: u32,
}

impl TrialResult {
    pub fn from_outcome(outcome: &SearchOutcome, config_hash: &str) -> Self {
        Self {
            method: outcome.method.name().to_string(),
            config_hash: config_hash.to_string(),
            seed: outcome.seed,
            theta: outcome.best.theta.0.clone(),
            best_return: outcome.best.last_score,
            winner_filter: outcome.winner_filter,
        }
    }

    /// Rebuild a trial from its record file alone.
    pub fn from_records(records: &[EvaluationRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::State("empty record file".into()))?;
        if records
            .iter()
            .any(|r| r.seed != first.seed || r.method != first.method || r.config_hash != first.config_hash)
        {
            return Err(Error::Parameter("record file mixes runs".into()));
        }
        let best = select_final_record(records)?;
        Ok(Self {
            method: best.method.clone(),
            config_hash: best.config_hash.clone(),
            seed: best.seed,
            theta: best.theta.clone(),
            best_return: best.score,
            winner_filter: best.filter_j,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: String,
    pub config_hash: String,
    pub trials: Vec<TrialResult>,
    pub mean_return: f64,
    pub std_err_return: f64,
    pub theta_mean: Vec<f64>,
    pub theta_std_err: Vec<f64>,
    /// How many trials each filter won, keyed by filter index.
    pub winner_filters: BTreeMap<u32, usize>,
}

impl TrialSummary {
    /// A single trial has no spread; its standard errors are reported as 0.
    pub fn single_trial(&self) -> bool {
        self.trials.len() == 1
    }
}

/// Mean and standard error over trials that share a method and config.
pub fn aggregate(trials: &[TrialResult]) -> Result<TrialSummary> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Parameter("aggregate needs at least one trial".into()))?;
    for t in trials {
        if t.method != first.method || t.config_hash != first.config_hash {
            return Err(Error::Parameter(format!(
                "cannot aggregate {}/{} with {}/{}",
                first.method, first.config_hash, t.method, t.config_hash
            )));
        }
        if t.theta.len() != first.theta.len() {
            return Err(Error::Shape {
                expected: first.theta.len(),
                got: t.theta.len(),
                context: "trial design",
            });
        }
    }
    let returns: Vec<f64> = trials.iter().map(|t| t.best_return).collect();
    let (mean_return, std_err_return) = mean_and_stderr(&returns);
    let (theta_mean, theta_std_err) = (0..first.theta.len())
        .map(|k| {
            let xs: Vec<f64> = trials.iter().map(|t| t.theta[k]).collect();
            mean_and_stderr(&xs)
        })
        .unzip();
    let mut winner_filters = BTreeMap::new();
    for t in trials {
        *winner_filters.entry(t.winner_filter).or_insert(0) += 1;
    }
    Ok(TrialSummary {
        method: first.method.clone(),
        config_hash: first.config_hash.clone(),
        trials: trials.to_vec(),
        mean_return,
        std_err_return,
        theta_mean,
        theta_std_err,
        winner_filters,
    })
}

pub fn write_trials_csv<W: Write>(out: W, summaries: &[TrialSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = summaries.iter().map(|s| s.theta_mean.len()).max().unwrap_or(0);
    let mut header = vec![
        "method".to_string(),
        "config_hash".into(),
        "seed".into(),
        "winner_filter".into(),
        "best_return".into(),
    ];
    header.extend((0..d).map(|k| format!("theta_{k}")));
    w.write_record(&header)?;
    for t in summaries.iter().flat_map(|s| &s.trials) {
        let mut row = vec![
            t.method.clone(),
            t.config_hash.clone(),
            t.seed.to_string(),
            t.winner_filter.to_string(),
            t.best_return.to_string(),
        ];
        row.extend(t.theta.iter().map(|v| v.to_string()));
        row.resize(header.len(), String::new());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per statistic: `best_return`, each design dimension (named by
/// `dim_names` when given), and `winner_filter_j` counts (count in `mean`,
/// empty `std_err`).
pub fn write_aggregate_csv<W: Write>(out: W, summaries: &[TrialSummary], dim_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "config_hash", "trials", "statistic", "mean", "std_err"])?;
    for summary in summaries {
        let n = summary.trials.len().to_string();
        let mut row = |stat: String, mean: String, se: String| {
            w.write_record([
                summary.method.as_str(),
                summary.config_hash.as_str(),
                n.as_str(),
                stat.as_str(),
                mean.as_str(),
                se.as_str(),
            ])
        };
        row("best_return".into(), summary.mean_return.to_string(), summary.std_err_return.to_string())?;
        for (k, (m, se)) in summary.theta_mean.iter().zip(&summary.theta_std_err).enumerate() {
            let name = dim_names.get(k).cloned().unwrap_or_else(|| format!("theta_{k}"));
            row(name, m.to_string(), se.to_string())?;
        }
        for (j, count) in &summary.winner_filters {
            row(format!("winner_filter_{j}"), count.to_string(), String::new())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Group trials by `(method, config_hash)` and aggregate each group.
pub fn aggregate_groups(trials: &[TrialResult]) -> Result<Vec<TrialSummary>> {
    let mut groups: BTreeMap<(String, String), Vec<TrialResult>> = BTreeMap::new();
    for t in trials {
        groups
            .entry((t.method.clone(), t.config_hash.clone()))
            .or_default()
            .push(t.clone());
    }
    groups.values().map(|g| aggregate(g)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` equal-width edges spanning the observed returns.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub samples: Vec<(DesignConfig, f64)>,
    pub episodes: usize,
}

impl Histogram {
    /// Equal-width binning of `values` into `bins` bins over their range.
    /// When every value is equal, all land in the first bin.
    pub fn from_values(values: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        if bins == 0 || values.is_empty() {
            return Err(Error::Parameter("histogram needs bins >= 1 and at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite return in histogram input"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|k| if k == bins { hi } else { lo + width * k as f64 })
            .collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Ok((edges, counts))
    }
}

/// Evaluate `policy` on `n_samples` uniformly drawn designs and bin their
/// mean returns.
pub fn design_histogram(
    policy: &UniversalPolicy,
    env: &mut dyn Environment,
    n_samples: usize,
    bins: usize,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Histogram> {
    if n_samples < bins {
        return Err(Error::Parameter(format!(
            "need at least as many samples ({n_samples}) as bins ({bins})"
        )));
    }
    let space = env.spec().design_space.clone();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let theta = space.sample(rng);
        let ret = evaluate(policy, env, &theta, episodes, rng)?.mean_return;
        samples.push((theta, ret));
    }
    let returns: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (edges, counts) = Histogram::from_values(&returns, bins)?;
    Ok(Histogram {
        edges,
        counts,
        samples,
        episodes,
    })
}

pub fn write_histogram_csv<W: Write>(
    out: W,
    hist: &Histogram,
    method: &str,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "seed", "config_hash", "episodes", "bin", "lower", "upper", "count"])?;
    for (k, count) in hist.counts.iter().enumerate() {
        w.write_record([
            method.to_string(),
            seed.to_string(),
            config_hash.to_string(),
            hist.episodes.to_string(),
            k.to_string(),
            hist.edges[k].to_string(),
            hist.edges[k + 1].to_string(),
            count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mean: f64,
    /// Sample standard deviation across episodes.
    pub std: f64,
    pub returns: Vec<f64>,
    pub designs: Vec<DesignConfig>,
}

/// Evaluate around `theta_star`, drawing a fresh perturbation of
/// `±noise_frac × range` per dimension for every episode.
///
/// With `noise_frac == 0` no perturbation is drawn, so the random stream
/// and the result match [`evaluate`] exactly.
pub fn stability_probe(
    policy: &UniversalPolicy,
    env: &mut dyn Environment,
    theta_star: &DesignConfig,
    noise_frac: f64,
    episodes: usize,
    rng: &mut Rng,
) -> Result<StabilityReport> {
    if !(noise_frac >= 0.0 && noise_frac.is_finite()) {
        return Err(Error::Parameter(format!("noise_frac must be >= 0, got {noise_frac}")));
    }
    if episodes == 0 {
        return Err(Error::Parameter("stability probe needs at least one episode".into()));
    }
    let space = env.spec().design_space.clone();
    space.check(theta_star)?;
    let ranges = space.ranges();
    let mut returns = Vec::with_capacity(episodes);
    let mut designs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let theta = if noise_frac == 0.0 {
            theta_star.clone()
        } else {
            let moved: Vec<f64> = theta_star
                .0
                .iter()
                .zip(&ranges)
                .map(|(v, r)| v + rng.random_range(-noise_frac..=noise_frac) * r)
                .collect();
            space.clamp(&DesignConfig(moved))
        };
        returns.push(evaluate(policy, env, &theta, 1, rng)?.mean_return);
        designs.push(theta);
    }
    let (mean, se) = mean_and_stderr(&returns);
    Ok(StabilityReport {
        mean,
        std: se * (episodes as f64).sqrt(),
        returns,
        designs,
    })
}

pub fn write_stability_csv<W: Write>(
    out: W,
    report: &StabilityReport,
    noise_frac: f64,
    method: &str,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "seed", "config_hash", "noise_frac", "episode", "return"])?;
    for (k, r) in report.returns.iter().enumerate() {
        w.write_record([
            method.to_string(),
            seed.to_string(),
            config_hash.to_string(),
            noise_frac.to_string(),
            k.to_string(),
            r.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: u64,
    pub eta: u64,
    pub mode: ScheduleMode,
    pub filters: u32,
    pub configurations: u64,
    pub units_full: u64,
    pub units_incremental: u64,
    pub steps_full: u64,
    pub steps_incremental: u64,
}

/// Budget accounting for each `eta` at fixed `m`; no training happens.
pub fn eta_sweep(m: u64, etas: &[u64], steps_per_unit: u64, mode: ScheduleMode) -> Result<Vec<SweepRow>> {
    etas.iter()
        .map(|&eta| {
            if eta < 2 {
                return Err(Error::Parameter(format!("eta must be >= 2, got {eta}")));
            }
            let params = HyperbandParams::new(m, eta, mode)?;
            let totals = total_units(&params)?;
            let steps = |u: u64| {
                u.checked_mul(steps_per_unit)
                    .ok_or_else(|| Error::Accounting(format!("{u} units overflow the step counter")))
            };
            Ok(SweepRow {
                m,
                eta,
                mode,
                filters: max_filters(&params)? + 1,
                configurations: total_configurations(&params)?,
                units_full: totals.full,
                units_incremental: totals.incremental,
                steps_full: steps(totals.full)?,
                steps_incremental: steps(totals.incremental)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m",
        "eta",
        "mode",
        "filters",
        "configurations",
        "units_full",
        "units_incremental",
        "steps_full",
        "steps_incremental",
    ])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.eta.to_string(),
            r.mode.to_string(),
            r.filters.to_string(),
            r.configurations.to_string(),
            r.units_full.to_string(),
            r.units_incremental.to_string(),
            r.steps_full.to_string(),
            r.steps_incremental.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
