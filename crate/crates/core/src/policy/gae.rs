use crate::error::{Error, Result};

/// Generalised advantage estimates and returns-to-go.
///
/// `dones[t]` marks that the episode ended after step `t` with no bootstrap;
/// `last_value` bootstraps the step after the final element.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for (len, context) in [(values.len(), "values"), (dones.len(), "dones")] {
        if len != n {
            return Err(Error::Shape {
                expected: n,
                got: len,
                context,
            });
        }
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Shift to zero mean and scale to unit variance in place.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}
