//! Reward and cost value networks and their regression.

use rand::seq::SliceRandom;
use rand::Rng;

use super::mlp::{Activation, Mlp, Topology};
use crate::error::{Error, Result};

/// Reward critic `phi_r` and cost critic `phi_c`, sharing one topology.
/// The cost critic passes its output through a softplus so `V^C >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub topology: Topology,
    pub phi_r: Vec<f64>,
    pub phi_c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticFitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
}

impl Default for CriticFitConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: 1e-3,
            minibatch: 64,
        }
    }
}

/// Regression losses before and after a fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitReport {
    pub reward_before: f64,
    pub reward_after: f64,
    pub cost_before: f64,
    pub cost_after: f64,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutputMap {
    Identity,
    Softplus,
}

impl CriticParams {
    /// Orthogonal init, gain `sqrt(2)` on hidden layers and 1 on the output.
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let topology = Topology::new(obs_dim, hidden, 1, Activation::Tanh);
        let mlp = Mlp::new(topology.clone());
        let phi_r = mlp.init_orthogonal(rng, std::f64::consts::SQRT_2, 1.0);
        let phi_c = mlp.init_orthogonal(rng, std::f64::consts::SQRT_2, 1.0);
        Self {
            topology,
            phi_r,
            phi_c,
        }
    }

    pub fn value_r(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        predict(&self.topology, &self.phi_r, OutputMap::Identity, obs)
    }

    pub fn value_c(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        predict(&self.topology, &self.phi_c, OutputMap::Softplus, obs)
    }
}

fn predict(topology: &Topology, phi: &[f64], map: OutputMap, obs: &[Vec<f64>]) -> Vec<f64> {
    let mlp = Mlp::new(topology.clone());
    let mut cache = mlp.cache();
    obs.iter()
        .map(|o| {
            mlp.forward(phi, o, &mut cache);
            let raw = cache.output()[0];
            match map {
                OutputMap::Identity => raw,
                OutputMap::Softplus => softplus(raw),
            }
        })
        .collect()
}

fn mse(topology: &Topology, phi: &[f64], map: OutputMap, obs: &[Vec<f64>], targets: &[f64]) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    predict(topology, phi, map, obs)
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / obs.len() as f64
}

/// Mean-squared errors of both critics on a batch.
pub fn critic_losses(
    critics: &CriticParams,
    obs: &[Vec<f64>],
    target_r: &[f64],
    target_c: &[f64],
) -> (f64, f64) {
    (
        mse(&critics.topology, &critics.phi_r, OutputMap::Identity, obs, target_r),
        mse(&critics.topology, &critics.phi_c, OutputMap::Softplus, obs, target_c),
    )
}

/// Gradient of the mean-squared error over `idx`.
fn mse_grad(
    mlp: &Mlp,
    phi: &[f64],
    map: OutputMap,
    obs: &[Vec<f64>],
    targets: &[f64],
    idx: &[usize],
    grad: &mut [f64],
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut cache = mlp.cache();
    let scale = 2.0 / idx.len() as f64;
    for &i in idx {
        mlp.forward(phi, &obs[i], &mut cache);
        let raw = cache.output()[0];
        let (pred, dpred) = match map {
            OutputMap::Identity => (raw, 1.0),
            OutputMap::Softplus => (softplus(raw), sigmoid(raw)),
        };
        let d = scale * (pred - targets[i]) * dpred;
        mlp.backward(phi, &cache, &[d], grad);
    }
}

/// Full-batch gradients of the reward and cost regression losses with
/// respect to `phi_r` and `phi_c`.
pub fn critic_loss_grads(
    critics: &CriticParams,
    obs: &[Vec<f64>],
    target_r: &[f64],
    target_c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mlp = Mlp::new(critics.topology.clone());
    let idx: Vec<usize> = (0..obs.len()).collect();
    let mut gr = vec![0.0; critics.phi_r.len()];
    let mut gc = vec![0.0; critics.phi_c.len()];
    if !idx.is_empty() {
        mse_grad(&mlp, &critics.phi_r, OutputMap::Identity, obs, target_r, &idx, &mut gr);
        mse_grad(&mlp, &critics.phi_c, OutputMap::Softplus, obs, target_c, &idx, &mut gc);
    }
    (gr, gc)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

fn fit_one<R: Rng + ?Sized>(
    topology: &Topology,
    phi: &[f64],
    map: OutputMap,
    obs: &[Vec<f64>],
    targets: &[f64],
    cfg: &CriticFitConfig,
    rng: &mut R,
) -> (Vec<f64>, f64, f64) {
    let before = mse(topology, phi, map, obs, targets);
    let mlp = Mlp::new(topology.clone());
    let mut params = phi.to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let mb = cfg.minibatch.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            mse_grad(&mlp, &params, map, obs, targets, chunk, &mut grad);
            adam.step(&mut params, &grad);
        }
    }
    let after = mse(topology, &params, map, obs, targets);
    // the fit must never worsen the training-batch error
    if after.is_finite() && after <= before {
        (params, before, after)
    } else {
        (phi.to_vec(), before, before)
    }
}

/// Fits both critics to their targets with minibatch Adam.
pub fn critic_fit<R: Rng + ?Sized>(
    critics: &CriticParams,
    obs: &[Vec<f64>],
    target_r: &[f64],
    target_c: &[f64],
    cfg: &CriticFitConfig,
    rng: &mut R,
) -> Result<(CriticParams, FitReport)> {
    if target_r.len() != obs.len() || target_c.len() != obs.len() {
        return Err(Error::DimensionMismatch {
            context: "critic targets",
            expected: obs.len(),
            actual: target_r.len().min(target_c.len()),
        });
    }
    if target_r.iter().chain(target_c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("critic targets"));
    }
    if target_c.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidConfig("cost-critic targets must be non-negative".into()));
    }
    if obs.is_empty() {
        return Ok((critics.clone(), FitReport::default()));
    }
    let (phi_r, rb, ra) = fit_one(&critics.topology, &critics.phi_r, OutputMap::Identity, obs, target_r, cfg, rng);
    let (phi_c, cb, ca) = fit_one(&critics.topology, &critics.phi_c, OutputMap::Softplus, obs, target_c, cfg, rng);
    Ok((
        CriticParams {
            topology: critics.topology.clone(),
            phi_r,
            phi_c,
        },
        FitReport {
            reward_before: rb,
            reward_after: ra,
            cost_before: cb,
            cost_after: ca,
        },
    ))
}
