use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codesign_core::analysis::{
    aggregate_groups, design_histogram, eta_sweep, stability_probe, write_aggregate_csv, write_histogram_csv,
    write_stability_csv, write_sweep_csv, write_trials_csv, TrialResult,
};
use codesign_core::envs::{DesignConfig, EnvKind};
use codesign_core::policy::load_checkpoint;
use codesign_core::records::{load_records, record_files};
use codesign_core::rng::{SeedTree, Stream};
use codesign_core::schedule::{all_filters, total_configurations, total_units, HyperbandParams, ScheduleMode};
use codesign_core::search::{select_final_record, Method};
use codesign_core::{Error, Result};
use codesign_cli::experiment::{default_out_dir, run_experiment};
use codesign_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "codesign", version, about = "Multi-fidelity design and control search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent search trials.
    Run(RunArgs),
    /// Print the filter/stage matrix of a HyperBand configuration.
    Schedule {
        #[arg(value_name = "M")]
        m: u64,
        eta: u64,
        #[arg(default_value = "table")]
        mode: ScheduleMode,
        /// Also write `filter_j,stage_i,n_i,p_i` rows to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Post-process finished runs.
    #[command(subcommand)]
    Analyze(AnalyzeTask),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long = "M", value_name = "M")]
    m: Option<u64>,
    #[arg(long)]
    eta: Option<u64>,
    #[arg(long)]
    mode: Option<ScheduleMode>,
    #[arg(long)]
    steps_per_unit: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $CODESIGN_OUT or ./runs, plus a run name).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_configs: Option<u64>,
    #[arg(long)]
    budget_units: Option<u64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Design bound override, `name=lower:upper`; repeatable.
    #[arg(long = "design", value_name = "NAME=LO:HI")]
    design: Vec<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    search_episodes: Option<usize>,
    #[arg(long)]
    report_episodes: Option<usize>,
    /// Store wall-clock times in records.
    #[arg(long)]
    record_timing: bool,
}

#[derive(Subcommand)]
enum AnalyzeTask {
    /// Mean and standard error of selected designs and returns.
    Aggregate { dir: PathBuf },
    /// Bin returns of a trained policy over uniformly sampled designs.
    Histogram {
        dir: PathBuf,
        /// Trial whose checkpoint to use (default: the first one found).
        #[arg(long)]
        trial: Option<u64>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value_t = 3)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the selected design under uniform design noise.
    Stability {
        dir: PathBuf,
        #[arg(long)]
        trial: Option<u64>,
        #[arg(long, default_value_t = 0.02)]
        noise_frac: f64,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Budget totals for several elimination factors.
    EtaSweep {
        #[arg(value_name = "M")]
        m: u64,
        #[arg(required = true)]
        etas: Vec<u64>,
        #[arg(long, default_value_t = 2000)]
        steps_per_unit: u64,
        #[arg(long, default_value = "table")]
        mode: ScheduleMode,
        /// Directory for `eta_sweep.csv`; the table is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_design(spec: &str) -> Result<(String, [f64; 2])> {
    let bad = || Error::Parameter(format!("design override `{spec}` is not NAME=LO:HI"));
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    Ok((name.trim().to_string(), [lo, hi]))
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let e = &mut cfg.experiment;
    if let Some(v) = args.env {
        e.env = v;
    }
    if let Some(v) = args.method {
        e.method = v;
    }
    if let Some(v) = args.trials {
        e.trials = v;
    }
    if let Some(v) = args.seed {
        e.seed = v;
    }
    if let Some(v) = &args.out {
        e.out = Some(v.clone());
    }
    e.record_timing |= args.record_timing;
    let s = &mut cfg.schedule;
    if let Some(v) = args.m {
        s.m = v;
    }
    if let Some(v) = args.eta {
        s.eta = v;
    }
    if let Some(v) = args.mode {
        s.mode = v;
    }
    if let Some(v) = args.steps_per_unit {
        s.steps_per_unit = v;
    }
    if let Some(v) = args.n_configs {
        cfg.random.n_configs = v;
    }
    if args.budget_units.is_some() {
        cfg.random.budget_units = args.budget_units;
    }
    if let Some(v) = args.sigma0 {
        cfg.synthetic.sigma0 = v;
    }
    if let Some(v) = args.kappa {
        cfg.synthetic.kappa = v;
    }
    if let Some(v) = args.dim {
        cfg.synthetic.dim = v;
    }
    for d in &args.design {
        let (name, range) = parse_design(d)?;
        cfg.design.insert(name, range);
    }
    let p = &mut cfg.ppo;
    if let Some(v) = args.batch_size {
        p.batch_size = v;
    }
    if let Some(v) = args.minibatch_size {
        p.minibatch_size = v;
    }
    if let Some(v) = args.epochs {
        p.epochs = v;
    }
    if let Some(v) = args.step_size {
        p.step_size = v;
    }
    if let Some(v) = args.search_episodes {
        cfg.evaluation.search_episodes = v;
    }
    if let Some(v) = args.report_episodes {
        cfg.evaluation.report_episodes = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let out = cfg.experiment.out.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let rows = run_experiment(&cfg, &out)?;
    println!(
        "{} on {} | config {} | {} trial(s) -> {}",
        cfg.experiment.method,
        cfg.experiment.env,
        cfg.hash(),
        rows.len(),
        out.display()
    );
    for r in &rows {
        let theta: Vec<String> = r.theta.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "  seed {:>4}  filter {}  score {:>10.4}  final {:>10.4}  units {:>6}  steps {:>9}  theta [{}]",
            r.seed,
            r.winner_filter,
            r.search_score,
            r.final_score,
            r.units,
            r.env_steps,
            theta.join(", ")
        );
    }
    Ok(())
}

fn cmd_schedule(m: u64, eta: u64, mode: ScheduleMode, csv_path: Option<&Path>) -> Result<()> {
    let params = HyperbandParams::new(m, eta, mode)?;
    let filters = all_filters(&params)?;
    let totals = total_units(&params)?;
    println!("M={m} eta={eta} mode={mode} filters={}", filters.len());
    println!("{:>8} {:>7} {:>8} {:>8}", "filter_j", "stage_i", "n_i", "p_i");
    for f in &filters {
        for (i, st) in f.stages.iter().enumerate() {
            println!("{:>8} {:>7} {:>8} {:>8}", f.j, i, st.n, st.p);
        }
    }
    println!("configurations sampled: {}", total_configurations(&params)?);
    println!("total units (fresh training per stage): {}", totals.full);
    println!("total units (incremental, shared policy): {}", totals.incremental);
    println!("note: every stage fidelity follows p_i = p * eta^i (capped at M)");
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["filter_j", "stage_i", "n_i", "p_i"])?;
        for f in &filters {
            for (i, st) in f.stages.iter().enumerate() {
                w.write_record([f.j.to_string(), i.to_string(), st.n.to_string(), st.p.to_string()])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn records_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("records");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_trials(dir: &Path) -> Result<Vec<TrialResult>> {
    let rdir = records_dir(dir);
    let files = if rdir.is_dir() { record_files(&rdir)? } else { Vec::new() };
    if files.is_empty() {
        return Err(Error::Parameter(format!("no record files under {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let recs = load_records(f)?;
            TrialResult::from_records(&recs).map_err(|e| Error::Format(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn run_config(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&dir.join("config.toml"))
}

fn pick_trial(trials: &[TrialResult], trial: Option<u64>) -> Result<&TrialResult> {
    match trial {
        Some(s) => trials
            .iter()
            .find(|t| t.seed == s)
            .ok_or_else(|| Error::Parameter(format!("no records for trial seed {s}"))),
        None => trials
            .iter()
            .min_by_key(|t| t.seed)
            .ok_or_else(|| Error::Parameter("no trials".into())),
    }
}

fn cmd_analyze(task: &AnalyzeTask) -> Result<()> {
    match task {
        AnalyzeTask::Aggregate { dir } => {
            let trials = load_trials(dir)?;
            let names: Vec<String> = run_config(dir)
                .and_then(|c| c.design_space())
                .map(|s| s.dims().iter().map(|d| d.name.clone()).collect())
                .unwrap_or_default();
            let summaries = aggregate_groups(&trials)?;
            write_aggregate_csv(fs::File::create(dir.join("aggregate.csv"))?, &summaries, &names)?;
            write_trials_csv(fs::File::create(dir.join("trials.csv"))?, &summaries)?;
            for s in &summaries {
                println!(
                    "{} ({}): {} trial(s), best return {:.4} +- {:.4}",
                    s.method,
                    s.config_hash,
                    s.trials.len(),
                    s.mean_return,
                    s.std_err_return
                );
                for (k, (m, se)) in s.theta_mean.iter().zip(&s.theta_std_err).enumerate() {
                    let name = names.get(k).cloned().unwrap_or_else(|| format!("theta_{k}"));
                    println!("  {name}: {m:.4} +- {se:.4}");
                }
            }
            Ok(())
        }
        AnalyzeTask::Histogram {
            dir,
            trial,
            samples,
            bins,
            episodes,
            seed,
        } => {
            let cfg = run_config(dir)?;
            let trials = load_trials(dir)?;
            let t = pick_trial(&trials, *trial)?;
            let (policy, space) = load_checkpoint(&dir.join("checkpoints").join(format!("seed_{}.policy", t.seed)))?;
            let space = space.map_or_else(|| cfg.design_space(), Ok)?;
            let mut env = control_env(cfg.experiment.env)?.make(space)?;
            let mut rng = SeedTree::new(*seed).stream(Stream::Analysis, 0);
            let hist = design_histogram(&policy, env.as_mut(), *samples, *bins, *episodes, &mut rng)?;
            let path = dir.join("histogram.csv");
            write_histogram_csv(fs::File::create(&path)?, &hist, &t.method, t.seed, &t.config_hash)?;
            println!("{} samples in {} bins -> {}", samples, bins, path.display());
            Ok(())
        }
        AnalyzeTask::Stability {
            dir,
            trial,
            noise_frac,
            episodes,
            seed,
        } => {
            let cfg = run_config(dir)?;
            let trials = load_trials(dir)?;
            let t = pick_trial(&trials, *trial)?;
            let recs = load_records(&records_dir(dir).join(format!("seed_{}.jsonl", t.seed)))?;
            let theta = DesignConfig(select_final_record(&recs)?.theta.clone());
            let (policy, space) = load_checkpoint(&dir.join("checkpoints").join(format!("seed_{}.policy", t.seed)))?;
            let space = space.map_or_else(|| cfg.design_space(), Ok)?;
            let mut env = control_env(cfg.experiment.env)?.make(space)?;
            let mut rng = SeedTree::new(*seed).stream(Stream::Analysis, 1);
            let report = stability_probe(&policy, env.as_mut(), &theta, *noise_frac, *episodes, &mut rng)?;
            let path = dir.join("stability.csv");
            write_stability_csv(fs::File::create(&path)?, &report, *noise_frac, &t.method, t.seed, &t.config_hash)?;
            println!(
                "noise {noise_frac}: return {:.4} +- {:.4} (std) over {} episodes -> {}",
                report.mean,
                report.std,
                episodes,
                path.display()
            );
            Ok(())
        }
        AnalyzeTask::EtaSweep {
            m,
            etas,
            steps_per_unit,
            mode,
            out,
        } => {
            let rows = eta_sweep(*m, etas, *steps_per_unit, *mode)?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &rows)?;
            print!("{}", String::from_utf8_lossy(&buf));
            if let Some(dir) = out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("eta_sweep.csv"), &buf)?;
            }
            Ok(())
        }
    }
}

fn control_env(kind: EnvKind) -> Result<EnvKind> {
    if kind == EnvKind::Synthetic {
        return Err(Error::Parameter("this analysis needs a control task, not the synthetic benchmark".into()));
    }
    Ok(kind)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric { .. } | Error::Accounting(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Schedule { m, eta, mode, csv } => cmd_schedule(*m, *eta, *mode, csv.as_deref()),
        Command::Analyze(task) => cmd_analyze(task),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Numeric {
                snapshot: Some(path), ..
            } = &e
            {
                eprintln!("diagnostics: {}", path.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
