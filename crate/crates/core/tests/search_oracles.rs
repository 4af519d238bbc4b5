//! Scheduler behaviour on the closed-form benchmark, checked against
//! brute-force references.

use codesign_core::envs::{DesignConfig, SyntheticDesign};
use codesign_core::records::{read_records, write_records, EvaluationRecord};
use codesign_core::rng::{SeedTree, Stream};
use codesign_core::schedule::{filter_schedule, Accounting, HyperbandParams, ScheduleMode};
use codesign_core::search::{
    hyperband, random_search, select_final_record, successive_halving, Candidate, Method, SearchContext,
    SearchOptions, SyntheticEvaluator,
};
use rand::Rng as _;

#[test]
fn noise_scales_with_inverse_root_fidelity() {
    let bench = SyntheticDesign::default_benchmark(1.0, 0.0);
    let theta = DesignConfig(vec![0.4, 0.4]);
    let truth = bench.f_true(&theta);
    let mut rng = SeedTree::new(1).stream(Stream::Noise, 0);
    let std_at = |p: u64, rng: &mut _| {
        let draws: Vec<f64> = (0..10_000).map(|_| bench.evaluate(&theta, p, 0, rng).unwrap() - truth).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt()
    };
    let ratio = std_at(1, &mut rng) / std_at(9, &mut rng);
    assert!((ratio - 3.0).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn grid_argmax_lands_on_the_optimum() {
    let bench = SyntheticDesign::default_benchmark(0.0, 0.0);
    let n = 100;
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for i in 0..n {
        for j in 0..n {
            let x = DesignConfig(vec![i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64]);
            let f = bench.f_true(&x);
            if f > best.0 {
                best = (f, (i, j));
            }
        }
    }
    let cell = 1.0 / (n - 1) as f64;
    let opt = bench.optimum().as_slice();
    let (i, j) = best.1;
    assert!((opt[0] - i as f64 * cell).abs() <= cell / 2.0 + 1e-12);
    assert!((opt[1] - j as f64 * cell).abs() <= cell / 2.0 + 1e-12);
    assert!(bench.optimum_value() >= best.0);
}

#[test]
fn random_search_matches_max_of_n_expectation() {
    let bench = SyntheticDesign::default_benchmark(0.0, 0.0);
    let n = 40;
    // Monte-Carlo expectation of the best of n uniform designs.
    let mut rng = SeedTree::new(77).stream(Stream::Analysis, 0);
    let draws = 20_000;
    let mut oracle = 0.0;
    for _ in 0..draws {
        let best = (0..n)
            .map(|_| bench.f_true(&DesignConfig(vec![rng.random(), rng.random()])))
            .fold(f64::NEG_INFINITY, f64::max);
        oracle += best / draws as f64;
    }
    let mut observed = 0.0;
    for seed in 0..200 {
        let mut eval = SyntheticEvaluator::new(bench.clone(), seed);
        let out = random_search(&mut eval, n, 270, &SearchOptions::new(Method::Random, seed, 1)).unwrap();
        observed += out.final_score / 200.0;
    }
    assert!((observed - oracle).abs() / oracle < 0.02, "observed {observed}, oracle {oracle}");
}

#[test]
fn noiseless_survivors_are_the_true_top_k() {
    let params = HyperbandParams::new(81, 3, ScheduleMode::Table).unwrap();
    let bench = SyntheticDesign::default_benchmark(0.0, 0.0);
    for seed in 0..10 {
        for j in 0..=4 {
            let schedule = filter_schedule(&params, j).unwrap();
            let mut eval = SyntheticEvaluator::new(bench.clone(), seed);
            let opts = SearchOptions::new(Method::Hyperband, seed, 1);
            let mut ctx = SearchContext::new(&opts, &mut eval);
            let mut rng = SeedTree::new(seed).stream(Stream::Sampling, j as u64);
            let cands: Vec<Candidate> = (0..schedule.n)
                .map(|k| Candidate::new(k, bench.design_space().sample(&mut rng)))
                .collect();
            let mut alive: Vec<(f64, u64)> = cands.iter().map(|c| (bench.f_true(&c.theta), c.id)).collect();
            let res = successive_halving(cands, &schedule, 3, Accounting::Full, &mut ctx, &mut rng).unwrap();
            for stage in &res.stages {
                alive.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let k = ((stage.scored.len() as u64 / 3).max(1)) as usize;
                alive.truncate(k);
                let want: Vec<u64> = alive.iter().map(|a| a.1).collect();
                assert_eq!(stage.survivors, want);
            }
        }
    }
}

#[test]
fn select_final_agrees_with_linear_scan_of_records() {
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    for seed in 0..20 {
        let bench = SyntheticDesign::default_benchmark(0.4, 0.5);
        let mut eval = SyntheticEvaluator::new(bench, seed);
        let out = hyperband(&mut eval, &params, &SearchOptions::new(Method::UpnReversed, seed, 1)).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &out.all_records).unwrap();
        let recs: Vec<EvaluationRecord> = read_records(&buf[..]).unwrap();
        let mut scan: Option<&EvaluationRecord> = None;
        for r in recs.iter().filter(|r| r.final_stage) {
            scan = match scan {
                Some(b) if b.score > r.score || (b.score == r.score && b.candidate_id < r.candidate_id) => Some(b),
                _ => Some(r),
            };
        }
        let chosen = select_final_record(&recs).unwrap();
        assert_eq!(chosen.candidate_id, scan.unwrap().candidate_id);
        assert_eq!(chosen.candidate_id, out.best.id);
    }
}

#[test]
fn noiseless_methods_agree() {
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    let bench = SyntheticDesign::default_benchmark(0.0, 0.7);
    for seed in 0..10 {
        let scores: Vec<f64> = [Method::Hyperband, Method::UpnForward, Method::UpnReversed]
            .into_iter()
            .map(|m| {
                let mut eval = SyntheticEvaluator::for_method(bench.clone(), m, seed);
                hyperband(&mut eval, &params, &SearchOptions::new(m, seed, 1)).unwrap().final_score
            })
            .collect();
        assert!(scores.iter().all(|&s| s == scores[0]), "{scores:?}");
    }
}
