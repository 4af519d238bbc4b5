//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines always
//! reach the terminal. Set `ACCEPTANCE_ONLY=1,4,9` to run a subset.

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use codesign_cli::experiment::{run_experiment, run_trial, TrialArtifacts};
use codesign_cli::ExperimentConfig;
use codesign_core::analysis::{eta_sweep, stability_probe};
use codesign_core::envs::{CartPole, DesignConfig, EnvKind, SyntheticDesign, CARTPOLE_OPTIMAL_LENGTH};
use codesign_core::policy::{evaluate, gae, loss, Batch, Head, PpoConfig, UniversalPolicy};
use codesign_core::records::EvaluationRecord;
use codesign_core::rng::{Rng, SeedTree, Stream};
use codesign_core::schedule::{all_filters, total_units, HyperbandParams, ScheduleMode};
use codesign_core::search::{hyperband, random_search, Method, SearchOptions, SyntheticEvaluator};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Noise scale at which the stage-0 rank correlation of 27 uniform designs
/// is 0.5, from a brute-force calibration (see `calibration_rho`).
const SIGMA0: f64 = 0.47;
/// Sharing coefficient for the method-ordering check.
const KAPPA: f64 = 0.1;
const ORDERING_SEEDS: u64 = 300;
/// PPO minibatch used for the desk-budget control runs.
const DESK_MINIBATCH: usize = 500;
/// Seeds of the control-task runs: 7, 8, ..., 16.
const CONTROL_SEED: u64 = 7;
const CONTROL_TRIALS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct AuditedRun {
    label: String,
    steps_per_unit: u64,
    units: u64,
    steps: u64,
    simulated: Option<u64>,
    records: Vec<EvaluationRecord>,
}

/// Every finished run, kept for the budget-exactness audit.
#[derive(Default)]
struct Audit {
    runs: Vec<AuditedRun>,
}

impl Audit {
    fn push(&mut self, label: &str, steps_per_unit: u64, t: &TrialArtifacts) {
        let o = &t.outcome;
        self.runs.push(AuditedRun {
            label: label.to_string(),
            steps_per_unit,
            units: o.ledger.units_consumed,
            steps: o.ledger.env_steps_consumed,
            simulated: t.simulated_train_steps,
            records: o.all_records.clone(),
        });
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Verdict {
    let check = |m: u64, filters: usize, widest: &[(u64, u64)]| -> Result<(), String> {
        let params = HyperbandParams::new(m, 3, ScheduleMode::Table).map_err(|e| e.to_string())?;
        let all = all_filters(&params).map_err(|e| e.to_string())?;
        if all.len() != filters {
            return Err(format!("M={m}: {} filters", all.len()));
        }
        let got: Vec<(u64, u64)> = all.last().unwrap().stages.iter().map(|s| (s.n, s.p)).collect();
        if got != widest {
            return Err(format!("M={m}: widest {got:?}"));
        }
        let narrow: Vec<(u64, u64)> = all[0].stages.iter().map(|s| (s.n, s.p)).collect();
        if narrow != [(1, m)] {
            return Err(format!("M={m}: narrowest {narrow:?}"));
        }
        Ok(())
    };
    let r = check(27, 4, &[(27, 1), (9, 3), (3, 9), (1, 27)])
        .and_then(|_| check(81, 5, &[(81, 1), (27, 3), (9, 9), (3, 27), (1, 81)]));
    let started = Instant::now();
    let r = r.and_then(|_| {
        for m in ["27", "81"] {
            let o = std::process::Command::new(env!("CARGO_BIN_EXE_codesign"))
                .args(["schedule", m, "3", "table"])
                .output()
                .map_err(|e| e.to_string())?;
            let text = String::from_utf8_lossy(&o.stdout);
            if !o.status.success() || !text.contains("p_i = p * eta^i") {
                return Err(format!("`schedule {m} 3 table` failed or lacks the fidelity note"));
            }
        }
        Ok(())
    });
    let elapsed = started.elapsed().as_secs_f64();
    match r {
        Ok(()) if elapsed < 1.0 => verdict(
            true,
            format!("M=27: 4 filters, M=81: 5 filters, stage matrices exact; CLI {elapsed:.2} s"),
        ),
        Ok(()) => verdict(false, format!("CLI took {elapsed:.2} s")),
        Err(e) => verdict(false, e),
    }
}

// ---------------------------------------------------------------- 2

fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in 0..(n - t) {
                let s = t + k;
                let next = if s + 1 < n { v[s + 1] } else { last };
                let delta = r[s] + if d[s] { 0.0 } else { g * next } - v[s];
                total += (g * l).powi(k as i32) * delta;
                if d[s] {
                    break;
                }
            }
            total
        })
        .collect()
}

fn gradient_probe(head: Head, rng: &mut Rng) -> f64 {
    let obs_dim = rng.random_range(1..=4);
    let design_dim = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=6)).collect();
    let mut policy = UniversalPolicy::new(obs_dim, design_dim, &hidden, head, rng);
    for p in policy.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    policy.clamp_log_std();
    let mut inputs = Vec::new();
    let mut actions = Vec::new();
    let mut logps = Vec::new();
    for _ in 0..16 {
        let x: Vec<f64> = (0..policy.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, lp) = policy.act(&x, rng, false).unwrap();
        inputs.push(x);
        actions.push(a);
        logps.push(lp + rng.random_range(-0.15..0.15));
    }
    let adv = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ret = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = Batch::from_parts(inputs, &actions, logps, adv, ret).unwrap();
    let cfg = PpoConfig {
        entropy_coefficient: 0.01,
        ..PpoConfig::default()
    };
    let grad = loss(&policy, &batch, &cfg, true).unwrap().1.unwrap();
    let mut dir: Vec<f64> = (0..grad.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
    let h = 1e-6;
    let base = policy.params().to_vec();
    let at = |sign: f64| {
        let mut p = policy.clone();
        p.set_params(base.iter().zip(&dir).map(|(b, d)| b + sign * h * d).collect()).unwrap();
        loss(&p, &batch, &cfg, false).unwrap().0.total
    };
    let numeric = (at(1.0) - at(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn criterion_2() -> Verdict {
    let mut rng = SeedTree::new(2024).stream(Stream::Analysis, 2);
    let mut gae_worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last = rng.random_range(-5.0..5.0);
        let (g, l) = (rng.random_range(0.8..=1.0), rng.random_range(0.0..=1.0));
        let (adv, _) = gae(&r, &v, &d, last, g, l).unwrap();
        for (a, b) in adv.iter().zip(gae_oracle(&r, &v, &d, last, g, l)) {
            gae_worst = gae_worst.max((a - b).abs());
        }
    }
    let mut grad_worst: f64 = 0.0;
    for k in 0..120 {
        let head = if k % 2 == 0 {
            Head::Categorical(rng.random_range(2..=4))
        } else {
            Head::Gaussian(rng.random_range(1..=3))
        };
        grad_worst = grad_worst.max(gradient_probe(head, &mut rng));
    }
    verdict(
        gae_worst < 1e-10 && grad_worst < 1e-4,
        format!("GAE max |err| {gae_worst:.1e} over 1000 seqs (< 1e-10); gradient max rel err {grad_worst:.1e} over 120 probes (< 1e-4)"),
    )
}

// ---------------------------------------------------------------- 3

fn methods() -> [Method; 3] {
    [Method::Hyperband, Method::UpnForward, Method::UpnReversed]
}

fn criterion_3(audit: &mut Audit) -> Verdict {
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    let bench = SyntheticDesign::default_benchmark(0.0, KAPPA);
    let mut misses = 0;
    for seed in 0..50 {
        for m in methods() {
            let mut eval = SyntheticEvaluator::for_method(bench.clone(), m, seed);
            let out = hyperband(&mut eval, &params, &SearchOptions::new(m, seed, 1)).unwrap();
            let best_sampled = out
                .all_records
                .iter()
                .map(|r| bench.f_true(&DesignConfig(r.theta.clone())))
                .fold(f64::NEG_INFINITY, f64::max);
            if bench.f_true(&out.best.theta) != best_sampled {
                misses += 1;
            }
            audit.push(
                "synthetic",
                1,
                &TrialArtifacts {
                    outcome: out,
                    policy: None,
                    simulated_train_steps: None,
                },
            );
        }
    }
    verdict(
        misses == 0,
        format!("sigma0=0: {misses} of 150 (method, seed) runs missed the best sampled f_true"),
    )
}

// ---------------------------------------------------------------- 4

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (a.len() as f64 - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let var: f64 = ra.iter().map(|x| (x - m) * (x - m)).sum();
    cov / var
}

/// Mean Spearman correlation between f_true and one-unit noisy scores for
/// 27 uniform designs, by direct simulation.
fn calibration_rho(bench: &SyntheticDesign, sigma: f64, draws: usize, rng: &mut Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..draws {
        let f: Vec<f64> = (0..27)
            .map(|_| bench.f_true(&DesignConfig(vec![rng.random(), rng.random()])))
            .collect();
        let s: Vec<f64> = f.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        total += spearman(&f, &s);
    }
    total / draws as f64
}

/// 90th percentile of f_true under uniform sampling.
fn top_decile_threshold(bench: &SyntheticDesign, rng: &mut Rng) -> f64 {
    let mut fs: Vec<f64> = (0..200_000)
        .map(|_| bench.f_true(&DesignConfig(vec![rng.random(), rng.random()])))
        .collect();
    fs.sort_by(f64::total_cmp);
    fs[fs.len() * 9 / 10]
}

fn criterion_4(audit: &mut Audit) -> Verdict {
    let bench = SyntheticDesign::default_benchmark(SIGMA0, 0.0);
    let mut rng = SeedTree::new(99).stream(Stream::Analysis, 4);
    let rho = calibration_rho(&bench, SIGMA0, 20_000, &mut rng);
    let threshold = top_decile_threshold(&bench, &mut rng);
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    let budget = total_units(&params).unwrap().full;
    let (mut hits, mut hb_mean, mut rs_mean) = (0, 0.0, 0.0);
    for seed in 0..50 {
        let mut eval = SyntheticEvaluator::for_method(bench.clone(), Method::Hyperband, seed);
        let hb = hyperband(&mut eval, &params, &SearchOptions::new(Method::Hyperband, seed, 1)).unwrap();
        if hb.final_score >= threshold {
            hits += 1;
        }
        hb_mean += hb.final_score / 50.0;
        let mut eval = SyntheticEvaluator::for_method(bench.clone(), Method::Random, seed);
        let rs = random_search(&mut eval, 40, budget, &SearchOptions::new(Method::Random, seed, 1)).unwrap();
        rs_mean += rs.final_score / 50.0;
        for out in [hb, rs] {
            audit.push(
                "synthetic",
                1,
                &TrialArtifacts {
                    outcome: out,
                    policy: None,
                    simulated_train_steps: None,
                },
            );
        }
    }
    verdict(
        (rho - 0.5).abs() < 0.02 && hits >= 40 && hb_mean > rs_mean,
        format!(
            "sigma0={SIGMA0} (stage-0 rho {rho:.3}); top-decile (f >= {threshold:.3}) in {hits}/50 (>= 40); \
             mean f_true hb {hb_mean:.4} vs random {rs_mean:.4}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn criterion_5() -> Verdict {
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    let bench = SyntheticDesign::default_benchmark(SIGMA0, KAPPA);
    let mut scores = [vec![], vec![], vec![]];
    for seed in 0..ORDERING_SEEDS {
        for (k, m) in methods().into_iter().enumerate() {
            let mut eval = SyntheticEvaluator::for_method(bench.clone(), m, seed);
            let out = hyperband(&mut eval, &params, &SearchOptions::new(m, seed, 1)).unwrap();
            scores[k].push(out.final_score);
        }
    }
    let diff = |a: usize, b: usize| -> Vec<f64> { scores[a].iter().zip(&scores[b]).map(|(x, y)| x - y).collect() };
    let (rf, rf_se) = mean_se(&diff(2, 1));
    let (fh, fh_se) = mean_se(&diff(1, 0));
    let means: Vec<f64> = scores.iter().map(|s| mean_se(s).0).collect();
    verdict(
        rf > rf_se && fh > fh_se,
        format!(
            "kappa={KAPPA}, {ORDERING_SEEDS} seeds: mean f_true hb {:.4}, upnhb-f {:.4}, upnhb-r {:.4}; \
             R-F {rf:.4} +- {rf_se:.4}, F-HB {fh:.4} +- {fh_se:.4} (paired)",
            means[0], means[1], means[2]
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

fn control_config(env: EnvKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.env = env;
    cfg.experiment.method = Method::UpnReversed;
    cfg.experiment.seed = CONTROL_SEED;
    cfg.experiment.trials = CONTROL_TRIALS;
    cfg.schedule.m = 27;
    cfg.schedule.eta = 3;
    cfg.schedule.steps_per_unit = 2000;
    cfg.ppo.minibatch_size = DESK_MINIBATCH;
    cfg
}

fn criterion_6(audit: &mut Audit, best_policy: &mut Option<UniversalPolicy>) -> Verdict {
    let cfg = control_config(EnvKind::Cartpole);
    let started = Instant::now();
    let mut lengths = Vec::new();
    let mut best_return = f64::NEG_INFINITY;
    for seed in cfg.seeds() {
        let t = run_trial(&cfg, seed, None).unwrap();
        let l = t.outcome.best.theta.0[0];
        lengths.push(l);
        if t.outcome.final_score > best_return {
            best_return = t.outcome.final_score;
            *best_policy = t.policy.clone();
        }
        audit.push("cartpole", cfg.schedule.steps_per_unit, &t);
    }
    let inside = lengths.iter().filter(|l| (1.2..=1.7).contains(*l)).count();
    let shown: Vec<String> = lengths.iter().map(|l| format!("{l:.3}")).collect();
    verdict(
        inside >= 7,
        format!(
            "pole length in [1.2, 1.7] for {inside}/10 seeds (>= 7): [{}]; {:.0} s",
            shown.join(", "),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7(audit: &mut Audit) -> Verdict {
    let cfg = control_config(EnvKind::Acrobot);
    let started = Instant::now();
    let mut ok = 0;
    let mut shown = Vec::new();
    for seed in cfg.seeds() {
        let t = run_trial(&cfg, seed, None).unwrap();
        let th = &t.outcome.best.theta.0;
        if th[0] < th[1] && th[0] <= 0.5 {
            ok += 1;
        }
        shown.push(format!("({:.2}, {:.2})", th[0], th[1]));
        audit.push("acrobot", cfg.schedule.steps_per_unit, &t);
    }
    verdict(
        ok >= 6,
        format!(
            "l1 < l2 and l1 <= 0.5 for {ok}/10 seeds (>= 6); (l1, l2): {}; {:.0} s",
            shown.join(" "),
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Units implied by the records alone: each candidate's final cumulative
/// charge, summed.
fn charged_units(records: &[EvaluationRecord]) -> u64 {
    let mut per: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    for r in records {
        let e = per.entry(r.candidate_id).or_insert(0);
        *e = (*e).max(r.cumulative_units);
    }
    per.values().sum()
}

fn criterion_8(audit: &Audit) -> Verdict {
    let mut bad = Vec::new();
    for run in &audit.runs {
        let from_records = charged_units(&run.records);
        let exact = from_records == run.units
            && run.steps == run.units * run.steps_per_unit
            && run.simulated.is_none_or(|s| s == run.steps);
        if !exact {
            bad.push(format!(
                "{}: ledger {} units/{} steps, records {from_records}, simulated {:?}",
                run.label, run.units, run.steps, run.simulated
            ));
        }
    }
    let started = Instant::now();
    let rows = eta_sweep(27, &[2, 3, 4], 2000, ScheduleMode::Table).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let decreasing = rows.windows(2).all(|w| w[0].units_full > w[1].units_full)
        && rows.windows(2).all(|w| w[0].units_incremental > w[1].units_incremental);
    let units: Vec<u64> = rows.iter().map(|r| r.units_full).collect();
    verdict(
        bad.is_empty() && decreasing && elapsed < 1.0,
        format!(
            "{} runs audited, {} mismatches{}; eta sweep 2,3,4 -> {units:?} units",
            audit.runs.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    let mut syn = ExperimentConfig::default();
    syn.experiment.env = EnvKind::Synthetic;
    syn.experiment.trials = 3;
    configs.push(syn);
    for env in [EnvKind::Cartpole, EnvKind::Acrobot] {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.env = env;
        cfg.experiment.method = Method::UpnForward;
        cfg.experiment.trials = 2;
        cfg.schedule.m = 9;
        cfg.schedule.steps_per_unit = 100;
        cfg.ppo.batch_size = 200;
        cfg.ppo.minibatch_size = 100;
        cfg.ppo.epochs = 2;
        configs.push(cfg);
    }
    let mut compared = 0;
    for (k, cfg) in configs.iter().enumerate() {
        let a = dir.path().join(format!("{k}a"));
        let b = dir.path().join(format!("{k}b"));
        run_experiment(cfg, &a).unwrap();
        run_experiment(cfg, &b).unwrap();
        for seed in cfg.seeds() {
            let name = format!("records/seed_{seed}.jsonl");
            if fs::read(a.join(&name)).unwrap() != fs::read(b.join(&name)).unwrap() {
                return verdict(false, format!("{} seed {seed}: record files differ", cfg.experiment.env));
            }
            compared += 1;
        }
    }
    verdict(true, format!("{compared} record files byte-identical across reruns (synthetic, cartpole, acrobot)"))
}

// ---------------------------------------------------------------- 10

fn criterion_10(policy: Option<&UniversalPolicy>) -> Verdict {
    let Some(policy) = policy else {
        return verdict(false, "no trained CartPole policy available (criterion 6 did not run)".into());
    };
    let mut env = CartPole::new();
    let theta = DesignConfig(vec![CARTPOLE_OPTIMAL_LENGTH]);
    let tree = SeedTree::new(10);
    let plain = evaluate(policy, &mut env, &theta, 10, &mut tree.stream(Stream::Evaluation, 0)).unwrap();
    let zero = stability_probe(policy, &mut env, &theta, 0.0, 10, &mut tree.stream(Stream::Evaluation, 0)).unwrap();
    let identical = zero.mean.to_bits() == plain.mean_return.to_bits();
    let noisy = stability_probe(policy, &mut env, &theta, 0.02, 10, &mut tree.stream(Stream::Analysis, 10)).unwrap();
    // Shaping loses |dl| / 2.9 per step, and |dl| <= 0.02 * 2.9.
    let bound = 500.0 * 0.02;
    let loss = plain.mean_return - noisy.mean;
    verdict(
        identical && loss < bound,
        format!(
            "noise 0 bit-identical: {identical}; noise 0.02: {:.3} -> {:.3} (loss {loss:.3} < {bound})",
            plain.mean_return, noisy.mean
        ),
    )
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |k: u32| only.as_ref().is_none_or(|s| s.contains(&k));
    let mut audit = Audit::default();
    let mut policy = None;
    let mut failed = 0;
    let mut report = |k: u32, name: &str, run: &mut dyn FnMut() -> Verdict| {
        if !wanted(k) {
            return;
        }
        let started = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {k:>2} {name}: {} ({:.1} s)", v.detail, started.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "schedule exactness", &mut criterion_1);
    report(2, "numeric core", &mut criterion_2);
    report(3, "noiseless scheduler", &mut || criterion_3(&mut audit));
    report(4, "noisy selection quality", &mut || criterion_4(&mut audit));
    report(5, "method ordering", &mut criterion_5);
    report(6, "cartpole co-design", &mut || criterion_6(&mut audit, &mut policy));
    report(7, "acrobot simplification", &mut || criterion_7(&mut audit));
    report(8, "budget exactness and eta trend", &mut || criterion_8(&audit));
    report(9, "determinism", &mut criterion_9);
    report(10, "stability probe", &mut || criterion_10(policy.as_ref()));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
