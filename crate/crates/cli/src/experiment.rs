//! Running configured trials and laying out their artifacts.
//!
//! ```text
//! <out>/config.toml              the effective configuration
//! <out>/records/seed_<s>.jsonl   one line per scoring event
//! <out>/summary.csv              one row per trial
//! <out>/checkpoints/seed_<s>.policy
//! <out>/diagnostics/seed_<s>.*   only after a numeric failure
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use codesign_core::envs::{EnvKind, SyntheticDesign};
use codesign_core::policy::{save_checkpoint, UniversalPolicy};
use codesign_core::records::save_records;
use codesign_core::search::{
    hyperband, random_search, ControlEvaluator, Method, SearchOptions, SearchOutcome, SyntheticEvaluator,
};
use codesign_core::{Error, Result};

use crate::config::ExperimentConfig;

/// Variable naming the root under which runs without `--out` are written.
pub const OUT_ROOT_VAR: &str = "CODESIGN_OUT";

pub struct TrialArtifacts {
    pub outcome: SearchOutcome,
    /// Policy that acts for the selected design (control tasks only).
    pub policy: Option<UniversalPolicy>,
    /// Training steps the evaluator actually simulated.
    pub simulated_train_steps: Option<u64>,
}

fn options(cfg: &ExperimentConfig, seed: u64) -> SearchOptions {
    let mut o = SearchOptions::new(cfg.experiment.method, seed, cfg.schedule.steps_per_unit);
    o.config_hash = cfg.hash();
    o.record_timing = cfg.experiment.record_timing;
    o
}

fn search(cfg: &ExperimentConfig, evaluator: &mut dyn codesign_core::search::Evaluator, seed: u64) -> Result<SearchOutcome> {
    let opts = options(cfg, seed);
    match cfg.experiment.method {
        Method::Random => random_search(evaluator, cfg.random.n_configs, cfg.random_budget()?, &opts),
        _ => hyperband(evaluator, &cfg.hyperband()?, &opts),
    }
}

/// Run one seed of `cfg`. On a numeric failure in a control task,
/// `diagnostics` (when given) receives the current policy parameters and
/// the returned error names that file.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64, diagnostics: Option<&Path>) -> Result<TrialArtifacts> {
    cfg.validate()?;
    match cfg.experiment.env {
        EnvKind::Synthetic => {
            let s = &cfg.synthetic;
            let bench = SyntheticDesign::from_seed(s.seed, s.dim, s.sigma0, s.kappa)?;
            let mut evaluator = SyntheticEvaluator::for_method(bench, cfg.experiment.method, seed);
            let outcome = search(cfg, &mut evaluator, seed)?;
            Ok(TrialArtifacts {
                outcome,
                policy: None,
                simulated_train_steps: None,
            })
        }
        kind => {
            let env = kind.make(cfg.design_space()?)?;
            let mut evaluator = ControlEvaluator::new(env, cfg.experiment.method, cfg.ppo.clone(), seed)?;
            evaluator.search_episodes = cfg.evaluation.search_episodes;
            evaluator.report_episodes = cfg.evaluation.report_episodes;
            match search(cfg, &mut evaluator, seed) {
                Ok(outcome) => Ok(TrialArtifacts {
                    policy: evaluator.policy_for(&outcome.best).cloned(),
                    simulated_train_steps: Some(evaluator.train_steps()),
                    outcome,
                }),
                Err(Error::Numeric { message, .. }) => {
                    let snapshot = match diagnostics {
                        Some(dir) => Some(dump_diagnostics(dir, seed, &message, &evaluator, cfg)?),
                        None => None,
                    };
                    Err(Error::Numeric { message, snapshot })
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn dump_diagnostics(
    dir: &Path,
    seed: u64,
    message: &str,
    evaluator: &ControlEvaluator,
    cfg: &ExperimentConfig,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let note = dir.join(format!("seed_{seed}.txt"));
    let mut f = fs::File::create(&note)?;
    writeln!(f, "method {}", cfg.experiment.method)?;
    writeln!(f, "seed {seed}")?;
    writeln!(f, "config_hash {}", cfg.hash())?;
    writeln!(f, "error {message}")?;
    if let codesign_core::search::PolicyMode::Shared(learner) = evaluator.mode() {
        let path = dir.join(format!("seed_{seed}.policy"));
        save_checkpoint(&path, &learner.policy, Some(&cfg.design_space()?))?;
        writeln!(f, "policy {}", path.display())?;
        return Ok(path);
    }
    Ok(note)
}

/// Where a run writes when no output directory was configured.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-{}-{}", cfg.experiment.env, cfg.experiment.method, cfg.hash()))
}

/// Per-trial line of `summary.csv`.
pub struct SummaryRow {
    pub seed: u64,
    pub winner_filter: u32,
    pub candidate_id: u64,
    pub search_score: f64,
    pub final_score: f64,
    pub units: u64,
    pub env_steps: u64,
    pub eval_steps: u64,
    pub discarded_units: u64,
    pub theta: Vec<f64>,
}

pub fn summary_header(dim_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "method",
        "seed",
        "config_hash",
        "winner_filter",
        "candidate_id",
        "search_score",
        "final_score",
        "units",
        "env_steps",
        "eval_steps",
        "discarded_units",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(dim_names.iter().cloned());
    h
}

/// Run every trial of `cfg` into `out`, returning one summary row per seed.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let records_dir = out.join("records");
    fs::create_dir_all(&records_dir)
        .map_err(|e| Error::Parameter(format!("cannot create {}: {e}", records_dir.display())))?;
    let mut written = cfg.clone();
    written.experiment.out = Some(out.to_path_buf());
    fs::write(out.join("config.toml"), written.to_toml())?;

    let space = cfg.design_space()?;
    let names: Vec<String> = space.dims().iter().map(|d| d.name.clone()).collect();
    let hash = cfg.hash();
    let mut rows = Vec::new();
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(summary_header(&names))?;
    for seed in cfg.seeds() {
        let trial = run_trial(cfg, seed, Some(&out.join("diagnostics")))?;
        let o = &trial.outcome;
        save_records(&records_dir.join(format!("seed_{seed}.jsonl")), &o.all_records)?;
        if let Some(policy) = &trial.policy {
            let dir = out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            save_checkpoint(&dir.join(format!("seed_{seed}.policy")), policy, Some(&space))?;
        }
        if let Some(steps) = trial.simulated_train_steps {
            if steps != o.ledger.env_steps_consumed {
                return Err(Error::Accounting(format!(
                    "ledger charged {} steps but {steps} were simulated",
                    o.ledger.env_steps_consumed
                )));
            }
        }
        let row = SummaryRow {
            seed,
            winner_filter: o.winner_filter,
            candidate_id: o.best.id,
            search_score: o.best.last_score,
            final_score: o.final_score,
            units: o.ledger.units_consumed,
            env_steps: o.ledger.env_steps_consumed,
            eval_steps: o.ledger.eval_steps,
            discarded_units: o.discarded_units,
            theta: o.best.theta.0.clone(),
        };
        let mut line = vec![
            cfg.experiment.method.to_string(),
            seed.to_string(),
            hash.clone(),
            row.winner_filter.to_string(),
            row.candidate_id.to_string(),
            row.search_score.to_string(),
            row.final_score.to_string(),
            row.units.to_string(),
            row.env_steps.to_string(),
            row.eval_steps.to_string(),
            row.discarded_units.to_string(),
        ];
        line.extend(row.theta.iter().map(|v| v.to_string()));
        summary.write_record(&line)?;
        summary.flush()?;
        rows.push(row);
    }
    Ok(rows)
}
