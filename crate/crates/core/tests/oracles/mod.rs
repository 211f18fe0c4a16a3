//! Independent oracles for the numerical kernels. Every check returns the
//! worst error it observed next to the bound it must stay under, so the same
//! code backs the integration tests and the acceptance report.

#![allow(dead_code)]

use esbcpo::adaptation::{
    compute_alpha, compute_beta, esb_decompose, lae, update_lambda, update_safety_state,
    AlphaState, EsbTerms, SafetyTrace, Z_INIT,
};
use esbcpo::policy::{
    critic_loss_grads, critic_losses, mean_kl_dists, ActionDist, ActorBatch, CriticParams, Head,
    PolicyParams,
};
use esbcpo::trustregion::{conjugate_gradient, dual_value, propose_step, solve_dual, StepProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub worst: f64,
    pub bound: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.bound
    }

    fn merge(self, other: Outcome) -> Outcome {
        Outcome {
            worst: self.worst.max(other.worst),
            bound: self.bound,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(reference).map(|(a, r)| a - r).collect();
    norm(&diff) / norm(reference).max(1e-12)
}

/// Central differences of `f` at `x` with step `h` along every coordinate.
fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------- decomposition

/// `lae / (1 - alpha)` against the three-term sum on random draws.
pub fn decomposition_identity(draws: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let gamma = rng.random_range(0.9..1.0);
        let cost = rng.random_range(0.0..2.0);
        let v_s = rng.random_range(0.0..20.0);
        let v_sp = rng.random_range(0.0..20.0);
        let alpha = rng.random_range(0.0..0.999);
        let beta = compute_beta(rng.random_range(-3.0..3.0));
        let lhs = lae(v_s, v_sp, alpha, beta) / (1.0 - alpha);
        let d = esb_decompose(cost, v_s, v_sp, alpha, beta, gamma).expect("alpha in range");
        worst = worst.max((lhs - d.total()).abs());
    }
    Outcome { worst, bound: 1e-10 }
}

// -------------------------------------------------------------------- gradients

fn random_obs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| normal_vec(rng, dim, 1.0)).collect()
}

fn jittered_policy(rng: &mut ChaCha8Rng, head: Head, obs_dim: usize) -> PolicyParams {
    let mut p = PolicyParams::init(obs_dim, &[6, 5], head, -0.5, rng);
    let noise = normal_vec(rng, p.theta.len(), 0.3);
    for (t, e) in p.theta.iter_mut().zip(noise) {
        *t += e;
    }
    p
}

fn sample_actions(rng: &mut ChaCha8Rng, head: Head, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| match head {
            Head::Gaussian { act_dim } => normal_vec(rng, act_dim, 1.0),
            Head::Categorical { n } => vec![rng.random_range(0..n) as f64],
        })
        .collect()
}

/// Surrogate gradient `grad mean[exp(logp - old_logp) w]` of both heads.
pub fn surrogate_gradient(instances: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let head = if i % 2 == 0 {
            Head::Gaussian { act_dim: 2 }
        } else {
            Head::Categorical { n: 4 }
        };
        let p = jittered_policy(&mut rng, head, 3);
        let obs = random_obs(&mut rng, 7, 3);
        let actions = sample_actions(&mut rng, head, 7);
        let old_logp: Vec<f64> = ActorBatch::new(&p, &obs)
            .unwrap()
            .log_probs(&actions)
            .iter()
            .map(|l| l + rng.random_range(-0.3..0.3))
            .collect();
        let w = normal_vec(&mut rng, 7, 1.0);
        let analytic = ActorBatch::new(&p, &obs)
            .unwrap()
            .surrogate_grad(&actions, &old_logp, &w)
            .unwrap();
        let fd = central_diff(
            |theta| {
                let q = p.with_theta(theta.to_vec());
                let lp = ActorBatch::new(&q, &obs).unwrap().log_probs(&actions);
                lp.iter()
                    .zip(&old_logp)
                    .zip(&w)
                    .map(|((l, o), w)| (l - o).exp() * w)
                    .sum::<f64>()
                    / 7.0
            },
            &p.theta,
            1e-5,
        );
        worst = worst.max(rel_err(&analytic, &fd));
    }
    Outcome { worst, bound: 1e-4 }
}

/// Gradient of mean KL against a fixed reference policy, both heads.
pub fn kl_gradient(instances: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let head = if i % 2 == 0 {
            Head::Gaussian { act_dim: 3 }
        } else {
            Head::Categorical { n: 3 }
        };
        let reference = jittered_policy(&mut rng, head, 4);
        let obs = random_obs(&mut rng, 6, 4);
        let old: Vec<ActionDist> = ActorBatch::new(&reference, &obs).unwrap().dists().to_vec();
        let mut theta = reference.theta.clone();
        let noise = normal_vec(&mut rng, theta.len(), 0.1);
        for (t, e) in theta.iter_mut().zip(noise) {
            *t += e;
        }
        let p = reference.with_theta(theta);
        let analytic = ActorBatch::new(&p, &obs).unwrap().kl_grad(&old);
        let fd = central_diff(
            |theta| {
                let q = p.with_theta(theta.to_vec());
                mean_kl_dists(ActorBatch::new(&q, &obs).unwrap().dists(), &old)
            },
            &p.theta,
            1e-5,
        );
        worst = worst.max(rel_err(&analytic, &fd));
    }
    Outcome { worst, bound: 1e-4 }
}

/// Regression-loss gradients of the reward and the softplus cost critic.
pub fn critic_gradient(instances: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mut critics = CriticParams::init(3, &[6, 4], &mut rng);
        for phi in [&mut critics.phi_r, &mut critics.phi_c] {
            let noise = normal_vec(&mut rng, phi.len(), 0.2);
            for (t, e) in phi.iter_mut().zip(noise) {
                *t += e;
            }
        }
        let obs = random_obs(&mut rng, 9, 3);
        let target_r = normal_vec(&mut rng, 9, 2.0);
        let target_c: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..3.0)).collect();
        let (gr, gc) = critic_loss_grads(&critics, &obs, &target_r, &target_c);
        let fd_r = central_diff(
            |phi| {
                let c = CriticParams {
                    phi_r: phi.to_vec(),
                    ..critics.clone()
                };
                critic_losses(&c, &obs, &target_r, &target_c).0
            },
            &critics.phi_r,
            1e-5,
        );
        let fd_c = central_diff(
            |phi| {
                let c = CriticParams {
                    phi_c: phi.to_vec(),
                    ..critics.clone()
                };
                critic_losses(&c, &obs, &target_r, &target_c).1
            },
            &critics.phi_c,
            1e-5,
        );
        worst = worst.max(rel_err(&gr, &fd_r)).max(rel_err(&gc, &fd_c));
    }
    Outcome { worst, bound: 1e-4 }
}

pub fn all_gradients(instances: usize, seed: u64) -> Outcome {
    surrogate_gradient(instances, seed)
        .merge(kl_gradient(instances, seed + 1))
        .merge(critic_gradient(instances, seed + 2))
}

// ---------------------------------------------------------------------- fisher

/// Results of the Fisher-vector product checks on one set of instances.
#[derive(Debug, Clone, Copy)]
pub struct FisherReport {
    pub second_difference: Outcome,
    pub symmetry: Outcome,
    /// Most negative `v^T H v` seen, reported as its negation.
    pub psd: Outcome,
    pub kl_quadratic: Outcome,
}

impl FisherReport {
    pub fn passed(&self) -> bool {
        self.second_difference.passed()
            && self.symmetry.passed()
            && self.psd.passed()
            && self.kl_quadratic.passed()
    }
}

pub fn fisher(instances: usize, seed: u64) -> FisherReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut second: f64 = 0.0;
    let mut sym: f64 = 0.0;
    let mut neg: f64 = f64::NEG_INFINITY;
    let mut quad: f64 = 0.0;
    for i in 0..instances {
        let head = if i % 2 == 0 {
            Head::Gaussian { act_dim: 2 }
        } else {
            Head::Categorical { n: 4 }
        };
        let p = jittered_policy(&mut rng, head, 3);
        let obs = random_obs(&mut rng, 8, 3);
        let batch = ActorBatch::new(&p, &obs).unwrap();
        let old = batch.dists().to_vec();
        let n = p.theta.len();
        let v = normal_vec(&mut rng, n, 1.0);
        let u = normal_vec(&mut rng, n, 1.0);
        let hv = batch.fisher_vector_product(&v, 0.0).unwrap();
        let hu = batch.fisher_vector_product(&u, 0.0).unwrap();

        let eps = 1e-5;
        let shifted = |sign: f64| {
            let theta: Vec<f64> = p.theta.iter().zip(&v).map(|(t, d)| t + sign * eps * d).collect();
            let q = p.with_theta(theta);
            ActorBatch::new(&q, &obs).unwrap().kl_grad(&old)
        };
        let (up, down) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        second = second.max(rel_err(&hv, &fd));

        sym = sym.max((dot(&u, &hv) - dot(&v, &hu)).abs());
        neg = neg.max(-dot(&v, &hv));

        let step = 1e-3;
        let theta: Vec<f64> = p.theta.iter().zip(&v).map(|(t, d)| t + step * d).collect();
        let q = p.with_theta(theta);
        let kl = mean_kl_dists(ActorBatch::new(&q, &obs).unwrap().dists(), &old);
        let predicted = 0.5 * step * step * dot(&v, &hv);
        quad = quad.max((kl - predicted).abs() / predicted.abs().max(1e-300));
    }
    FisherReport {
        second_difference: Outcome {
            worst: second,
            bound: 1e-3,
        },
        symmetry: Outcome {
            worst: sym,
            bound: 1e-8,
        },
        psd: Outcome {
            worst: neg,
            bound: 1e-10,
        },
        kl_quadratic: Outcome {
            worst: quad,
            bound: 0.05,
        },
    }
}

// ------------------------------------------------------------------------ dual

fn random_spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    m.transpose() * &m + DMatrix::identity(n, n) * ridge
}

/// Maximizes the dual on a 200 x 200 grid that repeatedly halves its window
/// around the best point. Halving rather than collapsing onto neighbouring
/// cells keeps the maximizer inside the window when the concave dual has a
/// long, tilted ridge.
fn grid_max(f: impl Fn(f64, f64) -> f64, mut hi1: f64, mut hi2: f64) -> f64 {
    const N: usize = 200;
    let (mut lo1, mut lo2) = (0.0, 0.0);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..60 {
        let h1 = (hi1 - lo1) / N as f64;
        let h2 = (hi2 - lo2) / N as f64;
        let (mut b1, mut b2) = (lo1, lo2);
        for i in 0..=N {
            // mu1 must stay strictly positive
            let m1 = (lo1 + i as f64 * h1).max(1e-12);
            for j in 0..=N {
                let m2 = lo2 + j as f64 * h2;
                let v = f(m1, m2);
                if v > best {
                    best = v;
                    b1 = m1;
                    b2 = m2;
                }
            }
        }
        let (w1, w2) = ((hi1 - lo1) / 4.0, (hi2 - lo2) / 4.0);
        lo1 = (b1 - w1).max(0.0);
        hi1 = b1 + w1;
        lo2 = (b2 - w2).max(0.0);
        hi2 = b2 + w2;
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct DualReport {
    pub problems: usize,
    /// `|analytic dual value - grid maximum|`.
    pub gap: Outcome,
    /// Relative mismatch between the primal objective `g^T d` of the
    /// proposed step and the dual optimum (strong duality).
    pub duality: Outcome,
    /// Worst violation of the linearized constraint or the trust region.
    pub primal_violation: Outcome,
}

impl DualReport {
    pub fn passed(&self) -> bool {
        self.gap.passed() && self.duality.passed() && self.primal_violation.passed()
    }
}

/// Random 5-dimensional problems on the feasible branch.
pub fn dual(problems: usize, seed: u64) -> DualReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 5;
    let mut gap: f64 = 0.0;
    let mut duality: f64 = 0.0;
    let mut violation: f64 = 0.0;
    let mut solved = 0;
    while solved < problems {
        let h = random_spd(&mut rng, dim, 0.5);
        let g = normal_vec(&mut rng, dim, 1.0);
        let b = normal_vec(&mut rng, dim, 1.0);
        let c = rng.random_range(-0.3..0.3);
        let delta = 0.01;
        let chol = h.clone().cholesky().expect("spd");
        let hinv_g = chol.solve(&DVector::from_column_slice(&g));
        let hinv_b = chol.solve(&DVector::from_column_slice(&b));
        let problem = StepProblem {
            g: g.clone(),
            b: b.clone(),
            c_slack: c,
            delta,
        };
        let sol = solve_dual(&problem, hinv_g.as_slice(), hinv_b.as_slice()).unwrap();
        if !sol.feasible_branch {
            continue;
        }
        solved += 1;
        let (q, r, s) = (dot(&g, hinv_g.as_slice()), dot(&g, hinv_b.as_slice()), dot(&b, hinv_b.as_slice()));
        let analytic = dual_value(sol.mu1, sol.mu2, q, r, s, c, delta);
        let f = |m1: f64, m2: f64| dual_value(m1, m2, q, r, s, c, delta);
        let scale = 10.0 * (q.max(s).max(1.0) / delta).sqrt();
        gap = gap.max((analytic - grid_max(f, scale, scale)).abs());

        let step = propose_step(&sol, hinv_g.as_slice(), hinv_b.as_slice(), delta).unwrap();
        let d = DVector::from_column_slice(&step.direction);
        let objective = dot(&g, &step.direction);
        // the dual above is the negated Lagrangian dual of max g^T d
        duality = duality.max((objective + analytic).abs() / objective.abs().max(1e-12));
        let lin = dot(&b, &step.direction) + c;
        let kl = 0.5 * d.dot(&(&h * &d));
        violation = violation.max(lin.max(0.0)).max((kl - delta).max(0.0) / delta);
    }
    DualReport {
        problems: solved,
        gap: Outcome { worst: gap, bound: 1e-3 },
        duality: Outcome {
            worst: duality,
            bound: 1e-6,
        },
        primal_violation: Outcome {
            worst: violation,
            bound: 1e-8,
        },
    }
}

// -------------------------------------------------------------------------- cg

/// Conjugate gradient against a dense Cholesky solve.
pub fn cg(systems: usize, dim: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..systems {
        let a = random_spd(&mut rng, dim, 1.0);
        let rhs = normal_vec(&mut rng, dim, 1.0);
        let exact = a.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&rhs));
        let out = conjugate_gradient(
            |v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()),
            &rhs,
            10 * dim,
            1e-14,
        )
        .unwrap();
        worst = worst.max(rel_err(&out.x, exact.as_slice()));
    }
    Outcome { worst, bound: 1e-6 }
}

// ---------------------------------------------------------------- unit vectors

/// Scalar examples of the safety state, `beta`, `lambda`, `alpha`, LAE and
/// its decomposition, and a small gap computation. Returns the label of each
/// example with its absolute error.
pub fn unit_vectors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut push = |label: &'static str, got: f64, want: f64| out.push((label, (got - want).abs()));

    push("initial safety state", SafetyTrace::from_costs([], 0.99, 25.0).z[0], 1.0);
    push("initial constant", Z_INIT, 1.0);
    push("budget exhausted in one step", update_safety_state(1.0, 1.0, 1.0, 1.0), 0.0);
    push("no cost grows the state", update_safety_state(1.0, 0.0, 0.99, 25.0), 1.0 / 0.99);

    push("beta at 0.7", compute_beta(0.7), 1.0);
    push("beta at 0", compute_beta(0.0), 1.0);
    push("beta at -1", compute_beta(-1.0), 0.238_405_844_044_235_1);

    let st = |lambda: f64, eta: f64| AlphaState::new(lambda, 0.01, eta);
    push("zero p keeps lambda", update_lambda(&st(0.7, 0.1), 0.0).lambda, 0.7);
    push("projected at zero", update_lambda(&st(0.5, 0.1), -10.0).lambda, 0.0);
    push("ascent from zero", update_lambda(&st(0.0, 0.1), 2.0).lambda, 0.2);

    push("alpha saturates", compute_alpha(10.0, 1.0), 0.999);
    push("alpha at lambda 0", compute_alpha(0.0, 0.01), 0.009_999_666_679_999_46);
    push("alpha at lambda 1", compute_alpha(1.0, 1.0), 0.991_328_915_800_599_8);

    push("stationary safe lae", lae(4.0, 4.0, 0.3, 1.0), 0.0);
    push("safe lae", lae(2.0, 3.0, 0.5, 1.0), 0.5);
    push("unsafe lae", lae(2.0, 3.0, 0.5, 0.0), 2.0);

    let d = esb_decompose(1.0, 2.0, 3.0, 0.5, 0.0, 0.9).unwrap();
    push("a_td", d.a_c_td, 1.7);
    push("b1", d.b1, -0.7);
    push("b2", d.b2, 3.0);
    push("decomposition sum", d.total(), lae(2.0, 3.0, 0.5, 0.0) / 0.5);
    push("safe b2", esb_decompose(1.0, 2.0, 3.0, 0.5, 1.0, 0.9).unwrap().b2, 0.0);
    push("undiscounted free b1", esb_decompose(0.0, 2.0, 3.0, 0.5, 0.4, 1.0).unwrap().b1, 0.0);

    // three transitions evaluated term by term
    let (costs, v_s, v_sp, beta) = ([1.0, 0.0, 2.0], [2.0, 1.5, 0.5], [1.5, 0.5, 0.0], [1.0, 0.4, 0.1]);
    let (alpha, gamma) = (0.5, 0.9);
    let deltas = [0.1, -0.2, 0.05];
    let terms = EsbTerms::from_values(&costs, &v_s, &v_sp, &beta, alpha, gamma).unwrap();
    let gaps = terms.breakdown(&deltas, gamma);
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for i in 0..3 {
        g1 += deltas[i] * ((1.0 - gamma) * v_sp[i] - costs[i]);
        g2 += deltas[i] * alpha * (1.0 - beta[i]) / (1.0 - alpha) * v_sp[i];
    }
    let scale = 1.0 / (3.0 * (1.0 - gamma));
    push("hand g1", gaps.g1, g1 * scale);
    push("hand g2", gaps.g2, g2 * scale);
    push("no movement, no gap", terms.breakdown(&[0.0; 3], gamma).esb_total, 0.0);
    let safe = EsbTerms::from_values(&costs, &v_s, &v_sp, &[1.0; 3], alpha, gamma).unwrap();
    push("safe batch has no g2", safe.breakdown(&deltas, gamma).g2, 0.0);
    out
}

pub fn unit_vectors_outcome() -> Outcome {
    Outcome {
        worst: unit_vectors().iter().map(|(_, e)| *e).fold(0.0, f64::max),
        bound: 1e-9,
    }
}
