//! Constrained natural-gradient step.
//!
//! The linearized subproblem is
//!
//! ```text
//! max_x  g^T x   s.t.  c + b^T x <= 0,   1/2 x^T H x <= delta
//! ```
//!
//! With `q = g^T H^-1 g`, `r = g^T H^-1 b` and `s = b^T H^-1 b`, its dual in
//! the multipliers `(mu1, mu2)` of the trust region and the constraint is
//!
//! ```text
//! max_{mu1 > 0, mu2 >= 0}  -(q - 2 r mu2 + s mu2^2) / (2 mu1) + mu2 c - mu1 delta
//! ```
//!
//! and the primal step is `x = H^-1 (g - mu2 b) / mu1`. When no point of the
//! trust region satisfies the linearized constraint, the recovery step
//! `x = -sqrt(2 delta / s) H^-1 b` is taken instead.

use crate::error::{Error, Result};
use crate::policy::mlp::dot;

/// Tolerance below which `b^T H^-1 b` is treated as zero.
pub const DEGENERATE_S: f64 = 1e-12;
const MIN_MU1: f64 = 1e-12;
const MAX_MU1: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustConfig {
    pub delta: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub damping: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            cg_iters: 20,
            cg_tol: 1e-8,
            damping: 0.1,
            backtrack_ratio: 0.8,
            max_backtracks: 10,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig("trust.delta must be positive".into()));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::InvalidConfig("trust.backtrack_ratio must lie in (0, 1)".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::InvalidConfig("trust.damping must be >= 0".into()));
        }
        if self.cg_iters == 0 {
            return Err(Error::InvalidConfig("trust.cg_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutput {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Norm of the residual of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `op(x) = rhs` for a symmetric positive (semi)definite operator,
/// starting from zero. Returns the iterate with the smallest residual when
/// the iteration budget runs out.
pub fn conjugate_gradient<F>(mut op: F, rhs: &[f64], iters: usize, tol: f64) -> Result<CgOutput>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = rhs.len();
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugate gradient rhs"));
    }
    let rhs_norm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok(CgOutput {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let threshold = tol * rhs_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (x.clone(), rr.sqrt());
    for it in 1..=iters {
        let ap = op(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            if !pap.is_finite() {
                return Err(Error::CgDiverged { iteration: it });
            }
            // curvature exhausted along p; keep the best iterate so far
            break;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::CgDiverged { iteration: it });
        }
        let res = rr_new.sqrt();
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= threshold {
            return Ok(CgOutput {
                x,
                iterations: it,
                residual: res,
                converged: true,
            });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgOutput {
        x: best.0,
        iterations: iters,
        residual: best.1,
        converged: best.1 <= threshold,
    })
}

/// One linearized trust-region subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProblem {
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    /// `J^C(theta) - d`.
    pub c_slack: f64,
    pub delta: f64,
}

/// Multipliers of the dual and the branch taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub mu1: f64,
    pub mu2: f64,
    pub feasible_branch: bool,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

/// Proposed step with the multipliers that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub direction: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub feasible_branch: bool,
    /// `b^T direction`, the predicted change of the linearized constraint.
    pub b_dot_d: f64,
    /// `1/2 direction^T H direction`, evaluated from `q`, `r`, `s`.
    pub quad_form: f64,
}

/// Dual objective at `(mu1, mu2)`.
pub fn dual_value(mu1: f64, mu2: f64, q: f64, r: f64, s: f64, c: f64, delta: f64) -> f64 {
    -(q - 2.0 * r * mu2 + s * mu2 * mu2) / (2.0 * mu1) + mu2 * c - mu1 * delta
}

/// Analytic maximizer of the single-constraint dual.
pub fn solve_dual(problem: &StepProblem, hinv_g: &[f64], hinv_b: &[f64]) -> Result<DualSolution> {
    let n = problem.g.len();
    for (ctx, len) in [("constraint gradient", problem.b.len()), ("H^-1 g", hinv_g.len()), ("H^-1 b", hinv_b.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: n,
                actual: len,
            });
        }
    }
    if !(problem.delta > 0.0) {
        return Err(Error::InvalidConfig("trust radius must be positive".into()));
    }
    let q = dot(&problem.g, hinv_g).max(0.0);
    let r = dot(&problem.g, hinv_b);
    let s = dot(&problem.b, hinv_b);
    let c = problem.c_slack;
    let delta = problem.delta;
    if !(q.is_finite() && r.is_finite() && s.is_finite() && c.is_finite()) {
        return Err(Error::NonFinite("dual coefficients"));
    }
    let unconstrained = DualSolution {
        mu1: (q / (2.0 * delta)).sqrt().max(MIN_MU1),
        mu2: 0.0,
        feasible_branch: true,
        q,
        r,
        s,
    };
    let infeasible = DualSolution {
        mu1: 0.0,
        mu2: 0.0,
        feasible_branch: false,
        q,
        r,
        s,
    };

    if s <= DEGENERATE_S {
        return Ok(if c > 0.0 { infeasible } else { unconstrained });
    }
    let b_coef = 2.0 * delta - c * c / s;
    if b_coef < 0.0 {
        // either no point of the trust region is feasible, or all of it is
        return Ok(if c > 0.0 { infeasible } else { unconstrained });
    }
    let a_coef = (q - r * r / s).max(0.0);
    let lam_a_free = if b_coef > 0.0 {
        (a_coef / b_coef).sqrt()
    } else {
        MAX_MU1
    };
    let lam_b_free = (q / (2.0 * delta)).sqrt();
    let f_a = |lam: f64| -0.5 * (a_coef / lam + b_coef * lam) + r * c / s;
    let f_b = |lam: f64| -0.5 * (q / lam + 2.0 * delta * lam);

    // Interval of mu1 on which the optimal mu2 = (r + mu1 c) / s is positive.
    type Interval = Option<(f64, f64)>;
    let (region_a, region_b): (Interval, Interval) = if c > 0.0 {
        let mid = -r / c;
        if mid > 0.0 {
            (Some((mid, f64::INFINITY)), Some((0.0, mid)))
        } else {
            (Some((0.0, f64::INFINITY)), None)
        }
    } else if c < 0.0 {
        let mid = -r / c;
        if mid > 0.0 {
            (Some((0.0, mid)), Some((mid, f64::INFINITY)))
        } else {
            (None, Some((0.0, f64::INFINITY)))
        }
    } else if r > 0.0 {
        (Some((0.0, f64::INFINITY)), None)
    } else {
        (None, Some((0.0, f64::INFINITY)))
    };

    let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo.max(MIN_MU1), hi.min(MAX_MU1).max(lo.max(MIN_MU1)));
    let cand_a = region_a.map(|iv| {
        let l = clamp(lam_a_free, iv);
        (l, f_a(l))
    });
    let cand_b = region_b.map(|iv| {
        let l = clamp(lam_b_free, iv);
        (l, f_b(l))
    });
    let mu1 = match (cand_a, cand_b) {
        (Some((la, va)), Some((lb, vb))) => {
            if va >= vb {
                la
            } else {
                lb
            }
        }
        (Some((la, _)), None) => la,
        (None, Some((lb, _))) => lb,
        (None, None) => unreachable!("at least one dual region is non-empty"),
    };
    let mu2 = ((r + mu1 * c) / s).max(0.0);
    Ok(DualSolution {
        mu1,
        mu2,
        feasible_branch: true,
        q,
        r,
        s,
    })
}

/// Builds the step from the dual solution: `H^-1 (g - mu2 b) / mu1` on the
/// feasible branch, the constraint-recovery step otherwise.
pub fn propose_step(
    dual: &DualSolution,
    hinv_g: &[f64],
    hinv_b: &[f64],
    delta: f64,
) -> Result<StepSolution> {
    let DualSolution { mu1, mu2, q, r, s, .. } = *dual;
    if dual.feasible_branch {
        if !(mu1 > 0.0) {
            return Err(Error::NonPositiveMultiplier(mu1));
        }
        let direction: Vec<f64> = hinv_g
            .iter()
            .zip(hinv_b)
            .map(|(hg, hb)| (hg - mu2 * hb) / mu1)
            .collect();
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feasible step"));
        }
        let quad_form = 0.5 * (q - 2.0 * mu2 * r + mu2 * mu2 * s) / (mu1 * mu1);
        let b_dot_d = (r - mu2 * s) / mu1;
        Ok(StepSolution {
            direction,
            mu1,
            mu2,
            feasible_branch: true,
            b_dot_d,
            quad_form,
        })
    } else if s <= DEGENERATE_S {
        Ok(StepSolution {
            direction: vec![0.0; hinv_b.len()],
            mu1,
            mu2,
            feasible_branch: false,
            b_dot_d: 0.0,
            quad_form: 0.0,
        })
    } else {
        let scale = (2.0 * delta / s).sqrt();
        Ok(StepSolution {
            direction: hinv_b.iter().map(|hb| -scale * hb).collect(),
            mu1,
            mu2,
            feasible_branch: false,
            b_dot_d: -(2.0 * delta * s).sqrt(),
            quad_form: delta,
        })
    }
}

/// Measurements of a candidate step used by [`line_search`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// Change of the surrogate objective relative to the old policy.
    pub improvement: f64,
    /// Value of the sampled constraint function at the candidate.
    pub constraint: f64,
    /// Mean KL divergence between candidate and old policy.
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintRule {
    Ignore,
    AtMost(f64),
    StrictlyBelow(f64),
}

/// Acceptance test applied to each probed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub kl_limit: f64,
    pub constraint: ConstraintRule,
    pub require_improvement: bool,
}

impl Acceptance {
    pub fn accepts(&self, p: &ProbeResult) -> bool {
        if !(p.kl.is_finite() && p.kl <= self.kl_limit) {
            return false;
        }
        if self.require_improvement && !(p.improvement >= 0.0) {
            return false;
        }
        match self.constraint {
            ConstraintRule::Ignore => true,
            ConstraintRule::AtMost(bound) => p.constraint <= bound,
            ConstraintRule::StrictlyBelow(bound) => p.constraint < bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub theta: Vec<f64>,
    pub accepted: bool,
    pub shrink_count: usize,
    pub scale: f64,
    /// Probe of the accepted candidate.
    pub probe: Option<ProbeResult>,
}

/// Tries `theta_old + r^j * direction` for `j = 0..=max_backtracks` and
/// returns the first candidate the acceptance test passes, or `theta_old`.
pub fn line_search<F>(
    theta_old: &[f64],
    direction: &[f64],
    mut probe: F,
    acceptance: &Acceptance,
    max_backtracks: usize,
    backtrack_ratio: f64,
) -> Result<LineSearchResult>
where
    F: FnMut(&[f64]) -> Result<ProbeResult>,
{
    let mut scale = 1.0;
    let mut candidate = vec![0.0; theta_old.len()];
    for j in 0..=max_backtracks {
        for ((c, t), d) in candidate.iter_mut().zip(theta_old).zip(direction) {
            *c = t + scale * d;
        }
        let result = probe(&candidate)?;
        if acceptance.accepts(&result) {
            return Ok(LineSearchResult {
                theta: candidate,
                accepted: true,
                shrink_count: j,
                scale,
                probe: Some(result),
            });
        }
        scale *= backtrack_ratio;
    }
    Ok(LineSearchResult {
        theta: theta_old.to_vec(),
        accepted: false,
        shrink_count: max_backtracks,
        scale: 0.0,
        probe: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity(v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }

    #[test]
    fn cg_identity_and_zero() {
        let rhs = vec![1.0, -2.0, 0.5];
        let out = conjugate_gradient(identity, &rhs, 20, 1e-10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, rhs);
        let out = conjugate_gradient(identity, &[0.0; 3], 20, 1e-10).unwrap();
        assert_eq!(out.x, vec![0.0; 3]);
    }

    #[test]
    fn cg_rejects_non_finite() {
        assert!(conjugate_gradient(identity, &[f64::NAN], 5, 1e-8).is_err());
        let bad = |_: &[f64]| Ok(vec![f64::INFINITY]);
        assert!(matches!(
            conjugate_gradient(bad, &[1.0], 5, 1e-8),
            Err(Error::CgDiverged { iteration: 1 })
        ));
    }

    #[test]
    fn cg_returns_best_iterate_when_budget_runs_out() {
        let diag = [1.0, 10.0, 100.0, 1000.0];
        let op = |v: &[f64]| Ok(v.iter().zip(&diag).map(|(a, d)| a * d).collect());
        let rhs = [1.0; 4];
        let out = conjugate_gradient(op, &rhs, 2, 1e-14).unwrap();
        assert!(!out.converged);
        let full = conjugate_gradient(op, &rhs, 10, 1e-14).unwrap();
        assert!(full.converged);
        for (x, d) in full.x.iter().zip(&diag) {
            assert_abs_diff_eq!(*x, 1.0 / d, epsilon = 1e-12);
        }
    }

    #[test]
    fn inactive_constraint_gives_trpo_step() {
        let g = vec![1.0, 0.0];
        let problem = StepProblem {
            g: g.clone(),
            b: vec![0.0, 0.0],
            c_slack: -0.5,
            delta: 0.01,
        };
        let dual = solve_dual(&problem, &g, &[0.0, 0.0]).unwrap();
        assert!(dual.feasible_branch);
        assert_eq!(dual.mu2, 0.0);
        let step = propose_step(&dual, &g, &[0.0, 0.0], 0.01).unwrap();
        assert_abs_diff_eq!(step.direction[0], (0.02f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn slack_constraint_with_identity_hessian() {
        let problem = StepProblem {
            g: vec![1.0, 0.0],
            b: vec![0.0, 1.0],
            c_slack: -1000.0,
            delta: 0.01,
        };
        let dual = solve_dual(&problem, &problem.g, &problem.b).unwrap();
        let step = propose_step(&dual, &problem.g, &problem.b, 0.01).unwrap();
        assert_abs_diff_eq!(step.direction[0], (0.02f64).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(step.direction[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_branch_with_identity_hessian() {
        let b = vec![3.0, 4.0];
        let problem = StepProblem {
            g: vec![1.0, 1.0],
            b: b.clone(),
            c_slack: 10.0,
            delta: 0.01,
        };
        let dual = solve_dual(&problem, &problem.g, &b).unwrap();
        assert!(!dual.feasible_branch);
        let step = propose_step(&dual, &problem.g, &b, 0.01).unwrap();
        let k = (0.02f64).sqrt() / 5.0;
        assert_abs_diff_eq!(step.direction[0], -k * 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(step.direction[1], -k * 4.0, epsilon = 1e-12);
        assert!(step.b_dot_d < 0.0);
        assert_abs_diff_eq!(step.b_dot_d, dot(&b, &step.direction), epsilon = 1e-12);
        assert_abs_diff_eq!(0.5 * dot(&step.direction, &step.direction), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_constraint_gradient() {
        let problem = StepProblem {
            g: vec![1.0],
            b: vec![0.0],
            c_slack: 2.0,
            delta: 0.01,
        };
        let dual = solve_dual(&problem, &[1.0], &[0.0]).unwrap();
        assert!(!dual.feasible_branch);
        let step = propose_step(&dual, &[1.0], &[0.0], 0.01).unwrap();
        assert_eq!(step.direction, vec![0.0]);

        let problem = StepProblem { c_slack: -2.0, ..problem };
        assert!(solve_dual(&problem, &[1.0], &[0.0]).unwrap().feasible_branch);
    }

    #[test]
    fn non_positive_mu1_is_a_bug() {
        let dual = DualSolution {
            mu1: 0.0,
            mu2: 0.0,
            feasible_branch: true,
            q: 1.0,
            r: 0.0,
            s: 1.0,
        };
        assert!(matches!(
            propose_step(&dual, &[1.0], &[1.0], 0.01),
            Err(Error::NonPositiveMultiplier(_))
        ));
    }

    #[test]
    fn active_constraint_hits_boundary() {
        // c > 0 but recoverable: the step must land on c + b^T x = 0
        let problem = StepProblem {
            g: vec![1.0, 0.5],
            b: vec![0.2, 1.0],
            c_slack: 0.05,
            delta: 0.01,
        };
        let dual = solve_dual(&problem, &problem.g, &problem.b).unwrap();
        assert!(dual.feasible_branch && dual.mu2 > 0.0);
        let step = propose_step(&dual, &problem.g, &problem.b, 0.01).unwrap();
        assert!(problem.c_slack + step.b_dot_d <= 1e-9);
        assert!(step.quad_form <= 0.01 * (1.0 + 1e-6));
    }

    #[test]
    fn line_search_examples() {
        let accept = Acceptance {
            kl_limit: 0.01,
            constraint: ConstraintRule::AtMost(1.0),
            require_improvement: true,
        };
        let quad = |t: &[f64]| {
            Ok(ProbeResult {
                improvement: t[0],
                constraint: 0.0,
                kl: 0.5 * t[0] * t[0],
            })
        };
        let res = line_search(&[0.0], &[0.0], quad, &accept, 10, 0.8).unwrap();
        assert!(res.accepted);
        assert_eq!(res.shrink_count, 0);
        assert_eq!(res.theta, vec![0.0]);

        // the KL bound holds first at scale 0.8^2
        let d = 0.02f64.sqrt() / 0.64 * 0.99;
        let res = line_search(&[0.0], &[d], quad, &accept, 10, 0.8).unwrap();
        assert!(res.accepted);
        assert_eq!(res.shrink_count, 2);

        let never = |_: &[f64]| {
            Ok(ProbeResult {
                improvement: -1.0,
                constraint: 0.0,
                kl: 0.0,
            })
        };
        let res = line_search(&[3.0, 4.0], &[1.0, 1.0], never, &accept, 5, 0.5).unwrap();
        assert!(!res.accepted);
        assert_eq!(res.theta, vec![3.0, 4.0]);
    }
}
