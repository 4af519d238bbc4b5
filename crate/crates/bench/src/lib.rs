//! Fixtures shared by the benchmarks.

use codesign_core::policy::{Batch, Head, UniversalPolicy};
use codesign_core::rng::{Rng, SeedTree, Stream};
use rand::Rng as _;

/// A CartPole-shaped policy (4 observations, 1 design dimension, two
/// actions) with the default hidden widths.
pub fn cartpole_policy(seed: u64) -> UniversalPolicy {
    UniversalPolicy::new(4, 1, &[64, 64, 64], Head::Categorical(2), &mut rng(seed))
}

pub fn rng(seed: u64) -> Rng {
    SeedTree::new(seed).stream(Stream::Analysis, 0)
}

/// `n` random transitions for `policy`, with actions sampled from it.
pub fn random_batch(policy: &UniversalPolicy, n: usize, rng: &mut Rng) -> Batch {
    let mut inputs = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut logps = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..policy.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, lp) = policy.act(&x, rng, false).expect("finite input");
        inputs.push(x);
        actions.push(a);
        logps.push(lp);
    }
    let adv = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ret = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Batch::from_parts(inputs, &actions, logps, adv, ret).expect("consistent lengths")
}
