//! Backprop and GAE checked against brute-force references.

use codesign_core::policy::{gae, loss, Batch, Head, PpoConfig, UniversalPolicy};
use codesign_core::rng::{Rng, SeedTree, Stream};
use rand::Rng as _;

/// Sum over `k` of `(gamma * lambda)^k * delta_{t+k}`, evaluated term by
/// term and cut at the first episode end.
fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { last };
    let delta = |t: usize| {
        let bootstrap = if dones[t] { 0.0 } else { gamma * next_value(t) };
        rewards[t] + bootstrap - values[t]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in 0..(n - t) {
                total += (gamma * lambda).powi(k as i32) * delta(t + k);
                if dones[t + k] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_double_loop_on_1000_sequences() {
    let mut rng = SeedTree::new(11).stream(Stream::Analysis, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.8..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = gae(&rewards, &values, &dones, last, gamma, lambda).unwrap();
        let expect = gae_oracle(&rewards, &values, &dones, last, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - expect[t]).abs());
            assert!((ret[t] - (expect[t] + values[t])).abs() < 1e-10);
        }
    }
    assert!(worst < 1e-10, "worst GAE deviation {worst:e}");
}

fn random_batch(policy: &UniversalPolicy, n: usize, rng: &mut Rng) -> Batch {
    let mut inputs = Vec::new();
    let mut actions = Vec::new();
    let mut logps = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..policy.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, lp) = policy.act(&x, rng, false).unwrap();
        inputs.push(x);
        actions.push(a);
        logps.push(lp + rng.random_range(-0.15..0.15));
    }
    let adv = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ret = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Batch::from_parts(inputs, &actions, logps, adv, ret).unwrap()
}

/// Directional derivative of the full objective versus a central
/// difference along a random unit direction.
fn probe(head: Head, rng: &mut Rng) -> f64 {
    let obs_dim = rng.random_range(1..=4);
    let design_dim = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=6)).collect();
    let mut policy = UniversalPolicy::new(obs_dim, design_dim, &hidden, head, rng);
    // Move off the near-zero output initialisation so every term matters.
    for p in policy.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    policy.clamp_log_std();
    let batch = random_batch(&policy, 16, rng);
    let cfg = PpoConfig {
        entropy_coefficient: 0.01,
        value_coefficient: 0.5,
        ..PpoConfig::default()
    };
    let (_, grad) = loss(&policy, &batch, &cfg, true).unwrap();
    let grad = grad.unwrap();

    let mut dir: Vec<f64> = (0..grad.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

    let h = 1e-6;
    let base = policy.params().to_vec();
    let at = |sign: f64| {
        let mut p = policy.clone();
        let moved: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + sign * h * d).collect();
        p.set_params(moved).unwrap();
        loss(&p, &batch, &cfg, false).unwrap().0.total
    };
    let numeric = (at(1.0) - at(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = SeedTree::new(3).stream(Stream::Analysis, 1);
    let mut errors = Vec::new();
    for k in 0..120 {
        let head = if k % 2 == 0 {
            Head::Categorical(rng.random_range(2..=4))
        } else {
            Head::Gaussian(rng.random_range(1..=3))
        };
        errors.push(probe(head, &mut rng));
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}
