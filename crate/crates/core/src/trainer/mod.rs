//! Training loop shared by the constrained algorithm and its baselines.
//!
//! Each epoch samples a batch with the current policy, estimates reward and
//! cost advantages, builds the objective gradient `g`, the constraint
//! gradient `b` and the slack `c = J^C - d`, solves the trust-region
//! subproblem, backtracks along the proposed step and finally refits the
//! critics.

pub mod config;
pub mod gae;
pub mod metrics;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{update_lambda, AlphaState, EsbTerms, SafetyTrace};
use crate::cmdp::{batch_estimates, Trajectory};
use crate::envs::{rollout, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{
    critic_fit, critic_losses, mean_kl_dists, ActionDist, ActorBatch, CriticParams, PolicyParams,
};
use crate::policy::mlp::dot;
use crate::trustregion::{
    conjugate_gradient, line_search, propose_step, solve_dual, Acceptance, ConstraintRule,
    ProbeResult, StepProblem, StepSolution,
};

pub use config::{AlgoConfig, Algorithm};
pub use gae::{compute_gae, normalize, returns_to_go};
pub use metrics::EpochMetrics;

/// A sampled batch flattened into per-transition arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub obs: Vec<Vec<f64>>,
    pub next_obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub terminal: Vec<bool>,
    /// Index range of each trajectory in the flat arrays.
    pub spans: Vec<Range<usize>>,
}

impl Batch {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.iter().all(Trajectory::is_empty) {
            return Err(Error::EmptyBatch);
        }
        let n: usize = trajectories.iter().map(Trajectory::len).sum();
        let mut b = Batch {
            trajectories: Vec::new(),
            obs: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            costs: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
            spans: Vec::with_capacity(trajectories.len()),
        };
        for traj in &trajectories {
            traj.validate()?;
            let start = b.obs.len();
            for t in &traj.transitions {
                b.obs.push(t.state.clone());
                b.next_obs.push(t.next_state.clone());
                b.actions.push(t.action.clone());
                b.rewards.push(t.reward);
                b.costs.push(t.cost);
                b.terminal.push(t.terminal);
            }
            b.spans.push(start..b.obs.len());
        }
        b.trajectories = trajectories;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Mean undiscounted episode return and cost.
    pub fn episode_means(&self) -> (f64, f64) {
        let n = self.trajectories.len() as f64;
        let ret = self.trajectories.iter().flat_map(Trajectory::rewards).sum::<f64>() / n;
        let cost = self.trajectories.iter().flat_map(Trajectory::costs).sum::<f64>() / n;
        (ret, cost)
    }
}

/// Advantages, value targets and the cost-critic values used by the
/// constraint weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// Reward advantages normalized over the batch.
    pub reward: Vec<f64>,
    /// Raw cost advantages.
    pub cost: Vec<f64>,
    pub target_r: Vec<f64>,
    pub target_c: Vec<f64>,
    pub v_c: Vec<f64>,
    /// Cost value of the successor state, zero after an absorbing step.
    pub v_c_next: Vec<f64>,
}

/// GAE for both signals; value targets are discounted returns-to-go,
/// bootstrapped from the critic when an episode was cut by the horizon.
pub fn estimate_advantages(batch: &Batch, critics: &CriticParams, gamma: f64, lam: f64) -> Result<Advantages> {
    let v_r = critics.value_r(&batch.obs);
    let v_c = critics.value_c(&batch.obs);
    let v_r_next = critics.value_r(&batch.next_obs);
    let v_c_next_raw = critics.value_c(&batch.next_obs);
    let n = batch.len();
    let mut out = Advantages {
        reward: Vec::with_capacity(n),
        cost: Vec::with_capacity(n),
        target_r: Vec::with_capacity(n),
        target_c: Vec::with_capacity(n),
        v_c: v_c.clone(),
        v_c_next: Vec::with_capacity(n),
    };
    for span in &batch.spans {
        let last = span.end - 1;
        let absorbing = batch.terminal[last];
        let (boot_r, boot_c) = if absorbing {
            (0.0, 0.0)
        } else {
            (v_r_next[last], v_c_next_raw[last])
        };
        let mut vals_r = v_r[span.clone()].to_vec();
        vals_r.push(boot_r);
        let mut vals_c = v_c[span.clone()].to_vec();
        vals_c.push(boot_c);
        let rewards = &batch.rewards[span.clone()];
        let costs = &batch.costs[span.clone()];
        out.reward.extend(compute_gae(rewards, &vals_r, gamma, lam)?);
        out.cost.extend(compute_gae(costs, &vals_c, gamma, lam)?);
        out.target_r.extend(returns_to_go(rewards, boot_r, gamma));
        out.target_c.extend(returns_to_go(costs, boot_c, gamma));
        out.v_c_next.extend(
            span.clone()
                .map(|i| if batch.terminal[i] { 0.0 } else { v_c_next_raw[i] }),
        );
    }
    normalize(&mut out.reward);
    Ok(out)
}

/// Safety traces for every trajectory; the `beta`-free variant treats
/// every state as safe.
pub fn safety_traces(batch: &Batch, algorithm: Algorithm, gamma: f64, d: f64) -> Vec<SafetyTrace> {
    batch
        .trajectories
        .iter()
        .map(|t| match algorithm {
            Algorithm::EsbCpoG1 => SafetyTrace::all_safe(t.len()),
            _ => SafetyTrace::for_trajectory(t, gamma, d),
        })
        .collect()
}

/// Lyapunov-based constraint terms for a batch.
pub fn lae_terms(batch: &Batch, adv: &Advantages, traces: &[SafetyTrace], alpha: f64, gamma: f64) -> Result<EsbTerms> {
    if traces.len() != batch.spans.len() {
        return Err(Error::MisalignedTrace {
            trace: traces.len(),
            batch: batch.spans.len(),
        });
    }
    let mut beta_sp = Vec::with_capacity(batch.len());
    for (trace, span) in traces.iter().zip(&batch.spans) {
        if trace.steps() != span.len() {
            return Err(Error::MisalignedTrace {
                trace: trace.steps(),
                batch: span.len(),
            });
        }
        beta_sp.extend_from_slice(trace.successor_beta());
    }
    EsbTerms::from_values(&batch.costs, &adv.v_c, &adv.v_c_next, &beta_sp, alpha, gamma)
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    spec: EnvSpec,
    config: AlgoConfig,
    seed: u64,
    epoch: usize,
    policy: PolicyParams,
    critics: CriticParams,
    alpha_state: AlphaState,
    penalty: f64,
    pending_p: f64,
    rng: ChaCha8Rng,
}

fn rollout_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct StepOutcome {
    theta: Vec<f64>,
    accepted: bool,
    solution: StepSolution,
    shrink_count: usize,
    kl: f64,
}

impl Trainer {
    /// Orthogonally initializes actor and critics from `seed`. The horizon of
    /// `config.cmdp` overrides the environment default.
    pub fn new(mut spec: EnvSpec, config: AlgoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        spec.horizon = config.cmdp.horizon;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = PolicyParams::init(
            spec.obs_dim,
            &config.hidden,
            spec.action_space.head(),
            config.log_std_init,
            &mut rng,
        );
        let critics = CriticParams::init(spec.obs_dim, &config.hidden, &mut rng);
        let alpha_state = config.adaptation;
        let penalty = config.lagrangian_init;
        Ok(Self {
            spec,
            config,
            seed,
            epoch: 0,
            policy,
            critics,
            alpha_state,
            penalty,
            pending_p: 0.0,
            rng,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn critics(&self) -> &CriticParams {
        &self.critics
    }

    pub fn alpha_state(&self) -> &AlphaState {
        &self.alpha_state
    }

    /// Multiplier of the penalty baseline.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Samples the batch the next call to [`Trainer::run_epoch`] would use.
    pub fn sample_batch(&self) -> Result<Batch> {
        let trajs = rollout(
            &self.policy,
            &self.spec,
            rollout_seed(self.seed, self.epoch),
            self.config.steps_per_epoch,
        )?;
        Batch::new(trajs)
    }

    /// Runs all remaining epochs, calling `on_epoch` after each one.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    {
        let mut all = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let m = self.run_epoch()?;
            on_epoch(&m, self)?;
            all.push(m);
        }
        Ok(all)
    }

    /// One epoch: rollout, advantages, policy step, critic fit.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let batch = self.sample_batch()?;
        let metrics = self.update(&batch)?;
        self.epoch += 1;
        Ok(metrics)
    }

    /// Policy and critic update on a given batch.
    pub fn update(&mut self, batch: &Batch) -> Result<EpochMetrics> {
        let cfg = self.config.clone();
        let gamma = cfg.cmdp.gamma;
        let d = cfg.cmdp.cost_limit;
        let algorithm = cfg.algorithm;

        let (_, j_c) = batch_estimates(&batch.trajectories, gamma)?;
        let (avg_return, avg_cost) = batch.episode_means();
        let adv = estimate_advantages(batch, &self.critics, gamma, cfg.gae_lambda)?;
        let c_slack = j_c - d;

        let mut m = EpochMetrics {
            epoch: self.epoch,
            episodes: batch.trajectories.len(),
            avg_return,
            avg_cost,
            disc_cost: j_c,
            c_slack,
            mean_beta: 1.0,
            ..Default::default()
        };

        let mut w_r = adv.reward.clone();
        let mut terms = None;
        let w_c: Vec<f64> = match algorithm {
            Algorithm::EsbCpo | Algorithm::EsbCpoG1 => {
                let traces = safety_traces(batch, algorithm, gamma, d);
                m.p_value = self.pending_p;
                self.alpha_state = update_lambda(&self.alpha_state, self.pending_p);
                let t = lae_terms(batch, &adv, &traces, self.alpha_state.alpha, gamma)?;
                m.mean_beta = t.mean_beta;
                let w = t.weights.clone();
                terms = Some(t);
                w
            }
            Algorithm::Cpo => adv.cost.clone(),
            Algorithm::Trpo => vec![0.0; batch.len()],
            Algorithm::TrpoLagrangian => {
                self.penalty = (self.penalty + cfg.lagrangian_lr * c_slack).max(0.0);
                for (w, a) in w_r.iter_mut().zip(&adv.cost) {
                    *w -= self.penalty * a;
                }
                vec![0.0; batch.len()]
            }
        };
        m.alpha = self.alpha_state.alpha;
        m.lambda = self.alpha_state.lambda;
        m.penalty = self.penalty;

        let step = self.policy_step(batch, &w_r, &w_c, c_slack)?;
        m.feasible = step.solution.feasible_branch;
        m.mu1 = step.solution.mu1;
        m.mu2 = step.solution.mu2;
        m.b_dot_d = step.solution.b_dot_d;
        m.accepted = step.accepted;
        m.shrink_count = step.shrink_count;
        m.kl = step.kl;

        if let Some(t) = &terms {
            let ratios = if step.accepted {
                let new = self.policy.with_theta(step.theta.clone());
                let old_logp = ActorBatch::new(&self.policy, &batch.obs)?.log_probs(&batch.actions);
                let new_logp = ActorBatch::new(&new, &batch.obs)?.log_probs(&batch.actions);
                new_logp.iter().zip(&old_logp).map(|(a, b)| (a - b).exp()).collect()
            } else {
                vec![1.0; batch.len()]
            };
            let deltas: Vec<f64> = ratios.iter().map(|r| r - 1.0).collect();
            let br = t.breakdown(&deltas, gamma);
            m.g1 = br.g1;
            m.g2 = br.g2;
            m.esb_total = br.esb_total;
            self.pending_p = dot(&deltas, &t.lae) / batch.len() as f64;
        }
        if step.accepted {
            self.policy = self.policy.with_theta(step.theta);
        }

        self.fit_critics(batch, &adv, &mut m)?;
        Ok(m)
    }

    fn policy_step(&self, batch: &Batch, w_r: &[f64], w_c: &[f64], c_slack: f64) -> Result<StepOutcome> {
        let cfg = &self.config;
        let gamma = cfg.cmdp.gamma;
        let trust = cfg.trust;
        let old = ActorBatch::new(&self.policy, &batch.obs)?;
        let old_logp = old.log_probs(&batch.actions);
        let old_dists: Vec<ActionDist> = old.dists().to_vec();
        let constrained = cfg.algorithm.is_constrained();

        let g = old.surrogate_grad(&batch.actions, &old_logp, w_r)?;
        let b: Vec<f64> = if constrained {
            old.surrogate_grad(&batch.actions, &old_logp, w_c)?
                .into_iter()
                .map(|v| v / (1.0 - gamma))
                .collect()
        } else {
            vec![0.0; g.len()]
        };
        let fvp = |v: &[f64]| old.fisher_vector_product(v, trust.damping);
        let hinv_g = conjugate_gradient(fvp, &g, trust.cg_iters, trust.cg_tol)?.x;
        let hinv_b = if constrained {
            conjugate_gradient(fvp, &b, trust.cg_iters, trust.cg_tol)?.x
        } else {
            vec![0.0; g.len()]
        };
        let problem = StepProblem {
            g,
            b,
            c_slack: if constrained { c_slack } else { -1.0 },
            delta: trust.delta,
        };
        let dual = solve_dual(&problem, &hinv_g, &hinv_b)?;
        let solution = propose_step(&dual, &hinv_g, &hinv_b, trust.delta)?;

        let acceptance = if !constrained {
            Acceptance {
                kl_limit: trust.delta,
                constraint: ConstraintRule::Ignore,
                require_improvement: true,
            }
        } else if solution.feasible_branch {
            Acceptance {
                kl_limit: trust.delta,
                constraint: ConstraintRule::AtMost(c_slack.max(0.0)),
                require_improvement: c_slack <= 0.0,
            }
        } else {
            Acceptance {
                kl_limit: trust.delta,
                constraint: ConstraintRule::StrictlyBelow(c_slack),
                require_improvement: false,
            }
        };
        let n = batch.len() as f64;
        let base_r = w_r.iter().sum::<f64>() / n;
        let probe = |theta: &[f64]| -> Result<ProbeResult> {
            let cand = self.policy.with_theta(theta.to_vec());
            let nb = ActorBatch::new(&cand, &batch.obs)?;
            let logp = nb.log_probs(&batch.actions);
            let mut sur_r = 0.0;
            let mut sur_c = 0.0;
            for i in 0..batch.len() {
                let ratio = (logp[i] - old_logp[i]).exp();
                sur_r += ratio * w_r[i];
                sur_c += (ratio - 1.0) * w_c[i];
            }
            Ok(ProbeResult {
                improvement: sur_r / n - base_r,
                constraint: c_slack + sur_c / (n * (1.0 - gamma)),
                kl: mean_kl_dists(nb.dists(), &old_dists),
            })
        };
        let ls = line_search(
            &self.policy.theta,
            &solution.direction,
            probe,
            &acceptance,
            trust.max_backtracks,
            trust.backtrack_ratio,
        )?;
        Ok(StepOutcome {
            kl: ls.probe.map(|p| p.kl).unwrap_or(0.0),
            theta: ls.theta,
            accepted: ls.accepted,
            shrink_count: ls.shrink_count,
            solution,
        })
    }

    fn fit_critics(&mut self, batch: &Batch, adv: &Advantages, m: &mut EpochMetrics) -> Result<()> {
        let n = batch.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        let n_hold = ((n as f64) * self.config.holdout_fraction).floor() as usize;
        let (hold, train) = idx.split_at(n_hold);
        let pick = |ix: &[usize], v: &[f64]| ix.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let pick_obs = |ix: &[usize]| ix.iter().map(|&i| batch.obs[i].clone()).collect::<Vec<_>>();
        let hold_obs = pick_obs(hold);
        let hold_r = pick(hold, &adv.target_r);
        let hold_c = pick(hold, &adv.target_c);
        if !hold.is_empty() {
            let (lr, lc) = critic_losses(&self.critics, &hold_obs, &hold_r, &hold_c);
            m.holdout_reward_loss_pre = lr;
            m.holdout_cost_loss_pre = lc;
        }
        let train_obs = pick_obs(train);
        let (critics, report) = critic_fit(
            &self.critics,
            &train_obs,
            &pick(train, &adv.target_r),
            &pick(train, &adv.target_c),
            &self.config.critic,
            &mut self.rng,
        )?;
        self.critics = critics;
        m.reward_loss = report.reward_after;
        m.cost_loss = report.cost_after;
        if !hold.is_empty() {
            let (lr, lc) = critic_losses(&self.critics, &hold_obs, &hold_r, &hold_c);
            m.holdout_reward_loss = lr;
            m.holdout_cost_loss = lc;
        }
        Ok(())
    }
}
