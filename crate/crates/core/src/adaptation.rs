//! Safety-state tracking, the adaptive `beta`/`alpha` factors, the
//! Lyapunov-based cost advantage and its extra-safety-budget decomposition.
//!
//! Along a trajectory the normalized safety state starts at 1 and evolves as
//! `z <- (z - c/d) / gamma`; it turns negative once the discounted cost
//! spent exceeds the limit `d`. The per-state gate is
//! `beta = 1 + min(tanh z, 0)` and the global factor is
//! `alpha = tanh(k * exp(lambda))`, where `lambda` follows a projected
//! ascent step on the LAE surrogate.
//!
//! The LAE of a transition is
//! `A' = V(s') - V(s) + alpha * (V(s) - beta(s') * V(s'))`, and it splits as
//! `A' / (1 - alpha) = A_td + B1 + B2` with `A_td = c + gamma V(s') - V(s)`,
//! `B1 = (1 - gamma) V(s') - c` and
//! `B2 = alpha (1 - beta(s')) / (1 - alpha) * V(s')`.

use crate::cmdp::Trajectory;
use crate::error::{Error, Result};
use crate::policy::CriticParams;

/// Safety state before the first step of every trajectory.
pub const Z_INIT: f64 = 1.0;
/// Bound applied to `z` after each recursion step.
pub const Z_CLAMP: f64 = 10.0;
/// Ceiling on `alpha`; the constraint weights divide by `1 - alpha`.
pub const ALPHA_MAX: f64 = 0.999;

/// One step of the safety-state recursion, clamped to `[-Z_CLAMP, Z_CLAMP]`.
pub fn update_safety_state(z_prev: f64, cost: f64, gamma: f64, d: f64) -> f64 {
    update_safety_state_unclamped(z_prev, cost, gamma, d).clamp(-Z_CLAMP, Z_CLAMP)
}

pub fn update_safety_state_unclamped(z_prev: f64, cost: f64, gamma: f64, d: f64) -> f64 {
    (z_prev - cost / d) / gamma
}

pub fn compute_beta(z: f64) -> f64 {
    1.0 + z.tanh().min(0.0)
}

/// Per-state `z` and `beta` along one trajectory. Index 0 is the initial
/// state; index `t + 1` is the successor of transition `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyTrace {
    pub z: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SafetyTrace {
    pub fn from_costs<I>(costs: I, gamma: f64, d: f64) -> Self
    where
        I: IntoIterator<Item = f64>,
    {
        let mut z = vec![Z_INIT];
        for c in costs {
            let prev = *z.last().expect("non-empty");
            z.push(update_safety_state(prev, c, gamma, d));
        }
        let beta = z.iter().map(|&v| compute_beta(v)).collect();
        Self { z, beta }
    }

    pub fn for_trajectory(traj: &Trajectory, gamma: f64, d: f64) -> Self {
        Self::from_costs(traj.costs(), gamma, d)
    }

    /// A trace with `beta == 1` everywhere; disables the safety-value term.
    pub fn all_safe(steps: usize) -> Self {
        Self {
            z: vec![Z_INIT; steps + 1],
            beta: vec![1.0; steps + 1],
        }
    }

    /// `beta` at the successor state of every transition.
    pub fn successor_beta(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn steps(&self) -> usize {
        self.z.len() - 1
    }
}

/// Lagrange multiplier and the derived `alpha` schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaState {
    pub lambda: f64,
    pub alpha: f64,
    pub k: f64,
    pub eta: f64,
}

impl AlphaState {
    pub fn new(lambda: f64, k: f64, eta: f64) -> Self {
        let lambda = lambda.max(0.0);
        Self {
            lambda,
            alpha: compute_alpha(lambda, k),
            k,
            eta,
        }
    }
}

/// `lambda = 5`, `k = 0.01`, `eta = 1`: `alpha` starts near 0.9 and, with
/// the typical magnitude of `P` on the bundled environments (a few
/// hundredths per epoch), decays towards its floor `tanh(k)` within about a
/// hundred epochs.
impl Default for AlphaState {
    fn default() -> Self {
        Self::new(5.0, 0.01, 1.0)
    }
}

/// Projected step `lambda <- max(lambda + eta * p, 0)`; `alpha` follows.
pub fn update_lambda(state: &AlphaState, p_value: f64) -> AlphaState {
    let lambda = if p_value.is_finite() {
        (state.lambda + state.eta * p_value).max(0.0)
    } else {
        state.lambda
    };
    AlphaState {
        lambda,
        alpha: compute_alpha(lambda, state.k),
        ..*state
    }
}

/// `tanh(k / exp(-lambda))`, capped at [`ALPHA_MAX`].
pub fn compute_alpha(lambda: f64, k: f64) -> f64 {
    (k / (-lambda).exp()).tanh().min(ALPHA_MAX)
}

/// Lyapunov-based advantage estimate of one sampled transition.
pub fn lae(v_s: f64, v_sp: f64, alpha: f64, beta_sp: f64) -> f64 {
    v_sp - v_s + alpha * (v_s - beta_sp * v_sp)
}

/// Terms of `lae / (1 - alpha) = a_c_td + b1 + b2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub a_c_td: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.a_c_td + self.b1 + self.b2
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha <= ALPHA_MAX + 1e-12) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(())
}

pub fn esb_decompose(
    cost: f64,
    v_s: f64,
    v_sp: f64,
    alpha: f64,
    beta_sp: f64,
    gamma: f64,
) -> Result<Decomposition> {
    check_alpha(alpha)?;
    Ok(Decomposition {
        a_c_td: cost + gamma * v_sp - v_s,
        b1: (1.0 - gamma) * v_sp - cost,
        b2: alpha * (1.0 - beta_sp) / (1.0 - alpha) * v_sp,
    })
}

/// Budget gaps measured after a policy step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EsbBreakdown {
    pub g1: f64,
    pub g2: f64,
    /// `-(g1 + g2)`.
    pub esb_total: f64,
}

/// Per-transition constraint weights and decomposition terms for a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EsbTerms {
    /// `lae / (1 - alpha)`, the factor multiplying `ratio - 1` in the
    /// constraint.
    pub weights: Vec<f64>,
    pub lae: Vec<f64>,
    pub a_c_td: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub mean_beta: f64,
}

impl EsbTerms {
    /// Builds the terms from per-transition values. `v_sp` must already be
    /// zero for terminal successors.
    pub fn from_values(
        costs: &[f64],
        v_s: &[f64],
        v_sp: &[f64],
        beta_sp: &[f64],
        alpha: f64,
        gamma: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let n = costs.len();
        if v_s.len() != n || v_sp.len() != n {
            return Err(Error::DimensionMismatch {
                context: "esb critic values",
                expected: n,
                actual: v_s.len().min(v_sp.len()),
            });
        }
        if beta_sp.len() != n {
            return Err(Error::MisalignedTrace {
                trace: beta_sp.len(),
                batch: n,
            });
        }
        let mut out = EsbTerms {
            weights: Vec::with_capacity(n),
            lae: Vec::with_capacity(n),
            a_c_td: Vec::with_capacity(n),
            b1: Vec::with_capacity(n),
            b2: Vec::with_capacity(n),
            mean_beta: 0.0,
        };
        for i in 0..n {
            let a = lae(v_s[i], v_sp[i], alpha, beta_sp[i]);
            let d = esb_decompose(costs[i], v_s[i], v_sp[i], alpha, beta_sp[i], gamma)?;
            out.weights.push(a / (1.0 - alpha));
            out.lae.push(a);
            out.a_c_td.push(d.a_c_td);
            out.b1.push(d.b1);
            out.b2.push(d.b2);
        }
        if n > 0 {
            out.mean_beta = beta_sp.iter().sum::<f64>() / n as f64;
        }
        Ok(out)
    }

    /// Gaps `G1 = mean[delta * B1] / (1 - gamma)` and
    /// `G2 = mean[delta * B2] / (1 - gamma)` for `delta = ratio - 1` of the
    /// accepted step.
    pub fn breakdown(&self, deltas: &[f64], gamma: f64) -> EsbBreakdown {
        let n = self.b1.len();
        if n == 0 {
            return EsbBreakdown::default();
        }
        let scale = 1.0 / ((1.0 - gamma) * n as f64);
        let g1 = deltas.iter().zip(&self.b1).map(|(d, b)| d * b).sum::<f64>() * scale;
        let g2 = deltas.iter().zip(&self.b2).map(|(d, b)| d * b).sum::<f64>() * scale;
        EsbBreakdown {
            g1,
            g2,
            esb_total: -(g1 + g2),
        }
    }
}

/// Constraint weights for a batch of trajectories, evaluating the cost
/// critic at every state. Terminal successors have value 0.
pub fn esb_constraint_terms(
    trajs: &[Trajectory],
    critics: &CriticParams,
    traces: &[SafetyTrace],
    alpha: f64,
    gamma: f64,
) -> Result<EsbTerms> {
    if traces.len() != trajs.len() {
        return Err(Error::MisalignedTrace {
            trace: traces.len(),
            batch: trajs.len(),
        });
    }
    let mut costs = Vec::new();
    let mut states = Vec::new();
    let mut next_states = Vec::new();
    let mut terminal = Vec::new();
    let mut beta_sp = Vec::new();
    for (traj, trace) in trajs.iter().zip(traces) {
        if trace.steps() != traj.len() {
            return Err(Error::MisalignedTrace {
                trace: trace.steps(),
                batch: traj.len(),
            });
        }
        for t in &traj.transitions {
            costs.push(t.cost);
            states.push(t.state.clone());
            next_states.push(t.next_state.clone());
            terminal.push(t.terminal);
        }
        beta_sp.extend_from_slice(trace.successor_beta());
    }
    let v_s = critics.value_c(&states);
    let v_sp: Vec<f64> = critics
        .value_c(&next_states)
        .into_iter()
        .zip(&terminal)
        .map(|(v, &term)| if term { 0.0 } else { v })
        .collect();
    EsbTerms::from_values(&costs, &v_s, &v_sp, &beta_sp, alpha, gamma)
}
