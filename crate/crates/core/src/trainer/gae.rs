//! Generalized advantage estimation and value targets.

use crate::error::{Error, Result};

/// `adv[t] = sum_l (gamma * lam)^l * delta[t + l]` with
/// `delta[t] = r[t] + gamma * V[t + 1] - V[t]`.
///
/// `values` holds one entry per state plus the bootstrap value after the
/// last step (zero when the episode ended in an absorbing state).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "advantage values",
            expected: rewards.len() + 1,
            actual: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Discounted rewards-to-go, seeded with `bootstrap` after the last step.
pub fn returns_to_go(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Shifts and scales to zero mean and unit variance. A constant vector is
/// only centered.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-8 {
            *v /= std;
        }
    }
}
