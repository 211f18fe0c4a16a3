//! Stochastic actor: MLP body with a diagonal-Gaussian or categorical head.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, Cache, Mlp, Topology};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Output head of the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Diagonal Gaussian with a state-independent learned log-std vector.
    Gaussian { act_dim: usize },
    /// Softmax over `n` discrete actions.
    Categorical { n: usize },
}

impl Head {
    pub fn net_outputs(&self) -> usize {
        match *self {
            Head::Gaussian { act_dim } => act_dim,
            Head::Categorical { n } => n,
        }
    }

    /// Length of an action vector emitted under this head.
    pub fn action_len(&self) -> usize {
        match *self {
            Head::Gaussian { act_dim } => act_dim,
            Head::Categorical { .. } => 1,
        }
    }

    fn extra_params(&self) -> usize {
        match *self {
            Head::Gaussian { act_dim } => act_dim,
            Head::Categorical { .. } => 0,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Gaussian { act_dim } => write!(f, "gaussian:{act_dim}"),
            Head::Categorical { n } => write!(f, "categorical:{n}"),
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("invalid head `{s}`"));
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        match kind {
            "gaussian" => Ok(Head::Gaussian { act_dim: n }),
            "categorical" => Ok(Head::Categorical { n }),
            _ => Err(bad()),
        }
    }
}

/// Actor parameters. `theta` holds the MLP weights followed, for Gaussian
/// heads, by the raw log-std vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub topology: Topology,
    pub head: Head,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    /// Orthogonally initialized actor: gain `sqrt(2)` on hidden layers and
    /// `0.01` on the output layer.
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        head: Head,
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        let topology = Topology::new(obs_dim, hidden, head.net_outputs(), Activation::Tanh);
        let mlp = Mlp::new(topology.clone());
        let mut theta = mlp.init_orthogonal(rng, std::f64::consts::SQRT_2, 0.01);
        theta.extend(std::iter::repeat_n(log_std_init, head.extra_params()));
        Self {
            topology,
            head,
            theta,
        }
    }

    pub fn from_parts(topology: Topology, head: Head, theta: Vec<f64>) -> Result<Self> {
        topology.validate()?;
        if topology.output_dim() != head.net_outputs() {
            return Err(Error::DimensionMismatch {
                context: "actor head",
                expected: head.net_outputs(),
                actual: topology.output_dim(),
            });
        }
        let expected = topology.param_count() + head.extra_params();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "actor parameter vector",
                expected,
                actual: theta.len(),
            });
        }
        Ok(Self {
            topology,
            head,
            theta,
        })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.topology.input_dim()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        Self {
            topology: self.topology.clone(),
            head: self.head,
            theta,
        }
    }

    fn net_len(&self) -> usize {
        self.topology.param_count()
    }

    /// Clamped log-std entries (Gaussian head only).
    pub fn log_std(&self) -> Vec<f64> {
        self.theta[self.net_len()..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// 1 where the raw log-std lies inside the clamp interval, else 0.
    fn log_std_mask(&self) -> Vec<f64> {
        self.theta[self.net_len()..]
            .iter()
            .map(|&v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Action distribution at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

impl ActionDist {
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        match self {
            ActionDist::Gaussian { mean, log_std } => gaussian_log_prob(mean, log_std, action),
            ActionDist::Categorical { logits } => {
                let idx = action[0] as usize;
                logits[idx] - log_sum_exp(logits)
            }
        }
    }

    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            ActionDist::Categorical { logits } => Some(softmax(logits)),
            ActionDist::Gaussian { .. } => None,
        }
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &ActionDist) -> f64 {
        match (self, other) {
            (
                ActionDist::Gaussian { mean: m1, log_std: s1 },
                ActionDist::Gaussian { mean: m0, log_std: s0 },
            ) => m1
                .iter()
                .zip(m0)
                .zip(s1.iter().zip(s0))
                .map(|((a, b), (l1, l0))| {
                    let var1 = (2.0 * l1).exp();
                    let var0 = (2.0 * l0).exp();
                    l0 - l1 + (var1 + (a - b).powi(2)) / (2.0 * var0) - 0.5
                })
                .sum(),
            (ActionDist::Categorical { logits: l1 }, ActionDist::Categorical { logits: l0 }) => {
                let lp1 = log_softmax(l1);
                let lp0 = log_softmax(l0);
                lp1.iter()
                    .zip(&lp0)
                    .map(|(a, b)| a.exp() * (a - b))
                    .sum()
            }
            _ => panic!("KL between mismatched distribution families"),
        }
    }

    /// Deterministic action: the mean, or the most likely index.
    pub fn mode(&self) -> Vec<f64> {
        match self {
            ActionDist::Gaussian { mean, .. } => mean.clone(),
            ActionDist::Categorical { logits } => {
                let (idx, _) = logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
                vec![idx as f64]
            }
        }
    }
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    log_softmax(x).into_iter().map(f64::exp).collect()
}

/// Gradient report of one surrogate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Objective gradient.
    pub g: Vec<f64>,
    /// Constraint gradient.
    pub b: Vec<f64>,
}

/// Batch evaluator for one actor parameter set. Forward activations are
/// computed once and reused by gradient and Fisher-vector products.
pub struct ActorBatch<'a> {
    params: &'a PolicyParams,
    mlp: Mlp,
    caches: Vec<Cache>,
    dists: Vec<ActionDist>,
}

impl<'a> ActorBatch<'a> {
    pub fn new(params: &'a PolicyParams, obs: &[Vec<f64>]) -> Result<Self> {
        let mlp = Mlp::new(params.topology.clone());
        let net = &params.theta[..params.net_len()];
        let log_std = params.log_std();
        let mut caches = Vec::with_capacity(obs.len());
        let mut dists = Vec::with_capacity(obs.len());
        for o in obs {
            if o.len() != params.obs_dim() {
                return Err(Error::DimensionMismatch {
                    context: "actor observation",
                    expected: params.obs_dim(),
                    actual: o.len(),
                });
            }
            let mut cache = mlp.cache();
            mlp.forward(net, o, &mut cache);
            let out = cache.output().to_vec();
            dists.push(match params.head {
                Head::Gaussian { .. } => ActionDist::Gaussian {
                    mean: out,
                    log_std: log_std.clone(),
                },
                Head::Categorical { .. } => ActionDist::Categorical { logits: out },
            });
            caches.push(cache);
        }
        Ok(Self {
            params,
            mlp,
            caches,
            dists,
        })
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn dists(&self) -> &[ActionDist] {
        &self.dists
    }

    pub fn log_probs(&self, actions: &[Vec<f64>]) -> Vec<f64> {
        self.dists
            .iter()
            .zip(actions)
            .map(|(d, a)| d.log_prob(a))
            .collect()
    }

    /// Accumulates per-sample gradients given the derivative of a scalar
    /// w.r.t. the distribution parameters. `dist_grad` receives the sample
    /// index and writes `d/d(net output)` into its buffer, returning the
    /// log-std contribution for Gaussian heads.
    fn accumulate<F>(&self, scale: f64, mut dist_grad: F) -> Vec<f64>
    where
        F: FnMut(usize, &mut Vec<f64>, &mut [f64]),
    {
        let net_len = self.params.net_len();
        let mut grad = vec![0.0; self.params.theta.len()];
        let mut d_out = Vec::new();
        let mut d_log_std = vec![0.0; self.params.head.extra_params()];
        let net = &self.params.theta[..net_len];
        for (i, cache) in self.caches.iter().enumerate() {
            d_out.clear();
            dist_grad(i, &mut d_out, &mut d_log_std);
            if d_out.iter().any(|&v| v != 0.0) {
                self.mlp.backward(net, cache, &d_out, &mut grad[..net_len]);
            }
        }
        let mask = self.params.log_std_mask();
        for ((g, d), m) in grad[net_len..].iter_mut().zip(&d_log_std).zip(&mask) {
            *g = d * m;
        }
        for g in grad.iter_mut() {
            *g *= scale;
        }
        grad
    }

    /// `grad mean_i[ exp(logp_i - old_logp_i) * w_i ]`.
    pub fn surrogate_grad(
        &self,
        actions: &[Vec<f64>],
        old_logp: &[f64],
        weights: &[f64],
    ) -> Result<Vec<f64>> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("surrogate weights"));
        }
        let n = self.len();
        if actions.len() != n || old_logp.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                context: "surrogate batch",
                expected: n,
                actual: weights.len().min(actions.len()).min(old_logp.len()),
            });
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let grad = self.accumulate(1.0 / n as f64, |i, d_out, d_ls| {
            let dist = &self.dists[i];
            let coef = (dist.log_prob(&actions[i]) - old_logp[i]).exp() * weights[i];
            match dist {
                ActionDist::Gaussian { mean, log_std } => {
                    for (k, (m, ls)) in mean.iter().zip(log_std).enumerate() {
                        let inv_var = (-2.0 * ls).exp();
                        let diff = actions[i][k] - m;
                        d_out.push(coef * diff * inv_var);
                        d_ls[k] += coef * (diff * diff * inv_var - 1.0);
                    }
                }
                ActionDist::Categorical { logits } => {
                    let p = softmax(logits);
                    let a = actions[i][0] as usize;
                    d_out.extend(p.iter().enumerate().map(|(j, pj)| {
                        coef * (if j == a { 1.0 } else { 0.0 } - pj)
                    }));
                }
            }
        });
        Ok(grad)
    }

    /// Gradient of `mean_i KL(pi_self(.|s_i) || old_i)` w.r.t. this actor's
    /// parameters.
    pub fn kl_grad(&self, old: &[ActionDist]) -> Vec<f64> {
        let n = self.len().max(1);
        self.accumulate(1.0 / n as f64, |i, d_out, d_ls| {
            match (&self.dists[i], &old[i]) {
                (
                    ActionDist::Gaussian { mean: m1, log_std: s1 },
                    ActionDist::Gaussian { mean: m0, log_std: s0 },
                ) => {
                    for k in 0..m1.len() {
                        let inv_var0 = (-2.0 * s0[k]).exp();
                        d_out.push((m1[k] - m0[k]) * inv_var0);
                        d_ls[k] += (2.0 * s1[k]).exp() * inv_var0 - 1.0;
                    }
                }
                (ActionDist::Categorical { logits: l1 }, ActionDist::Categorical { logits: l0 }) => {
                    let lp1 = log_softmax(l1);
                    let lp0 = log_softmax(l0);
                    let p1: Vec<f64> = lp1.iter().map(|v| v.exp()).collect();
                    let kl: f64 = p1.iter().zip(lp1.iter().zip(&lp0)).map(|(p, (a, b))| p * (a - b)).sum();
                    d_out.extend((0..l1.len()).map(|j| p1[j] * (lp1[j] - lp0[j] - kl)));
                }
                _ => unreachable!("actor batch and reference distributions share a head"),
            }
        })
    }

    /// `(F + damping I) v`, where `F` is the Fisher form of the Hessian of
    /// mean KL at this parameter point.
    pub fn fisher_vector_product(&self, v: &[f64], damping: f64) -> Result<Vec<f64>> {
        if v.len() != self.params.theta.len() {
            return Err(Error::DimensionMismatch {
                context: "fisher vector",
                expected: self.params.theta.len(),
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("fisher vector"));
        }
        let n = self.len().max(1);
        let net_len = self.params.net_len();
        let net = &self.params.theta[..net_len];
        let v_net = &v[..net_len];
        let mask = self.params.log_std_mask();
        let mut jv = Vec::new();
        let mut out = self.accumulate(1.0 / n as f64, |i, d_out, d_ls| {
            self.mlp.jvp(net, &self.caches[i], v_net, &mut jv);
            match &self.dists[i] {
                ActionDist::Gaussian { log_std, .. } => {
                    for (k, ls) in log_std.iter().enumerate() {
                        d_out.push(jv[k] * (-2.0 * ls).exp());
                        d_ls[k] += 2.0 * v[net_len + k] * mask[k];
                    }
                }
                ActionDist::Categorical { logits } => {
                    let p = softmax(logits);
                    let pt: f64 = p.iter().zip(&jv).map(|(a, b)| a * b).sum();
                    d_out.extend(p.iter().zip(&jv).map(|(pj, tj)| pj * (tj - pt)));
                }
            }
        });
        for (o, vi) in out.iter_mut().zip(v) {
            *o += damping * vi;
        }
        Ok(out)
    }
}

/// Action distribution at a single observation.
pub fn forward_actor(params: &PolicyParams, obs: &[f64]) -> Result<ActionDist> {
    let batch = ActorBatch::new(params, std::slice::from_ref(&obs.to_vec()))?;
    Ok(batch.dists[0].clone())
}

/// Draws an action and returns it with its log-probability.
pub fn sample_and_logprob<R: Rng + ?Sized>(dist: &ActionDist, rng: &mut R) -> (Vec<f64>, f64) {
    let action = match dist {
        ActionDist::Gaussian { mean, log_std } => mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + ls.exp() * eps
            })
            .collect(),
        ActionDist::Categorical { logits } => {
            let p = softmax(logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = p.len() - 1;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            vec![idx as f64]
        }
    };
    let logp = dist.log_prob(&action);
    (action, logp)
}

/// Importance ratio `pi_new(a|s) / pi_old(a|s)`.
pub fn ratio(new: &PolicyParams, old: &PolicyParams, obs: &[f64], action: &[f64]) -> Result<f64> {
    let ln = forward_actor(new, obs)?.log_prob(action);
    let lo = forward_actor(old, obs)?.log_prob(action);
    Ok((ln - lo).exp())
}

/// Mean over the batch of `KL(pi_new(.|s) || pi_old(.|s))`.
pub fn mean_kl(new: &PolicyParams, old: &PolicyParams, obs: &[Vec<f64>]) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let bn = ActorBatch::new(new, obs)?;
    let bo = ActorBatch::new(old, obs)?;
    Ok(mean_kl_dists(bn.dists(), bo.dists()))
}

pub fn mean_kl_dists(new: &[ActionDist], old: &[ActionDist]) -> f64 {
    if new.is_empty() {
        return 0.0;
    }
    new.iter().zip(old).map(|(a, b)| a.kl(b)).sum::<f64>() / new.len() as f64
}

/// Objective gradient `g = grad mean[ratio * w_r]` and constraint gradient
/// `b = grad mean[ratio * w_c]`, both against the old log-probabilities.
///
/// `b` is also the gradient of `mean[(ratio - 1) * w_c]`, the constant
/// offset having no derivative.
pub fn surrogate_grads(
    params: &PolicyParams,
    obs: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_logp: &[f64],
    w_reward: &[f64],
    w_cost: &[f64],
) -> Result<GradReport> {
    let batch = ActorBatch::new(params, obs)?;
    let g = batch.surrogate_grad(actions, old_logp, w_reward)?;
    let b = batch.surrogate_grad(actions, old_logp, w_cost)?;
    Ok(GradReport { g, b })
}

/// One-shot Fisher-vector product at `params` over `obs`.
pub fn fisher_vector_product(
    params: &PolicyParams,
    obs: &[Vec<f64>],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    ActorBatch::new(params, obs)?.fisher_vector_product(v, damping)
}
