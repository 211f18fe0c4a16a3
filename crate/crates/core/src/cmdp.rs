//! Constrained MDP data model and discounted aggregates.
//!
//! A single cost signal is tracked throughout. Rewards and costs are the raw
//! per-step values emitted by an environment; discounting happens here.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One environment step `(s, a, r, c, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Raw policy action. For discrete action spaces this holds a single
    /// entry equal to the action index.
    pub action: Vec<f64>,
    pub reward: f64,
    /// Always `>= 0`.
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// True MDP termination (goal reached), not horizon truncation.
    pub terminal: bool,
}

/// An episode: consecutive transitions sharing state continuity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// The episode was cut at the horizon rather than terminating.
    pub truncated: bool,
    /// Environment reset seed, kept so a logged episode can be re-simulated.
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    pub fn costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.cost)
    }

    /// Checks continuity, terminal placement and cost sign.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.transitions.iter().enumerate() {
            if !(t.cost >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "negative or NaN cost {} at step {i}",
                    t.cost
                )));
            }
            if t.state.len() != t.next_state.len() {
                return Err(Error::DimensionMismatch {
                    context: "transition next_state",
                    expected: t.state.len(),
                    actual: t.next_state.len(),
                });
            }
            if t.terminal && i + 1 != self.transitions.len() {
                return Err(Error::InvalidConfig(format!(
                    "terminal transition at step {i} is not the last"
                )));
            }
        }
        for pair in self.transitions.windows(2) {
            if pair[0].next_state != pair[1].state {
                return Err(Error::InvalidConfig(
                    "trajectory states are not contiguous".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Discount, cost limit and horizon of the constrained problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmdpConfig {
    pub gamma: f64,
    pub cost_limit: f64,
    pub horizon: usize,
}

impl Default for CmdpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            cost_limit: 25.0,
            horizon: 200,
        }
    }
}

impl CmdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.cost_limit > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cost_limit must be positive, got {}",
                self.cost_limit
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sum_t gamma^t * values[t]`.
pub fn discounted_sum<I>(values: I, gamma: f64) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut scale = 1.0;
    let mut total = 0.0;
    for v in values {
        total += scale * v;
        scale *= gamma;
    }
    total
}

/// Discounted (return, cost) of one trajectory.
pub fn trajectory_return_and_cost(traj: &Trajectory, gamma: f64) -> (f64, f64) {
    (
        discounted_sum(traj.rewards(), gamma),
        discounted_sum(traj.costs(), gamma),
    )
}

/// Sample estimates of the discounted return and cost over a batch.
pub fn batch_estimates(trajs: &[Trajectory], gamma: f64) -> Result<(f64, f64)> {
    if trajs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = trajs.len() as f64;
    let (r, c) = trajs
        .iter()
        .map(|t| trajectory_return_and_cost(t, gamma))
        .fold((0.0, 0.0), |(ar, ac), (r, c)| (ar + r, ac + c));
    Ok((r / n, c / n))
}

/// Header of a line-delimited trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub env: String,
    pub obs_dim: usize,
    pub act_dim: usize,
}

const LOG_MAGIC: &str = "# esbcpo-trajectories v1";

/// Writes trajectories as one comma-separated transition per line:
/// `episode, step, state..., action..., reward, cost, terminal, next_state...`.
///
/// Floats use the shortest round-trip representation so a log reproduces
/// the batch bit-exactly.
pub fn write_trajectory_log<W: Write>(
    mut out: W,
    header: &LogHeader,
    trajs: &[Trajectory],
) -> Result<()> {
    writeln!(
        out,
        "{LOG_MAGIC} env={} obs_dim={} act_dim={}",
        header.env, header.obs_dim, header.act_dim
    )?;
    writeln!(
        out,
        "# columns: episode,step,state[{}],action[{}],reward,cost,terminal,next_state[{}]",
        header.obs_dim, header.act_dim, header.obs_dim
    )?;
    let mut line = String::new();
    for (ep, traj) in trajs.iter().enumerate() {
        writeln!(
            out,
            "# episode {ep} seed {} truncated {}",
            traj.seed, traj.truncated
        )?;
        for (step, t) in traj.transitions.iter().enumerate() {
            line.clear();
            let _ = write!(line, "{ep},{step}");
            for v in t.state.iter().chain(&t.action) {
                let _ = write!(line, ",{v:?}");
            }
            let _ = write!(
                line,
                ",{:?},{:?},{}",
                t.reward,
                t.cost,
                u8::from(t.terminal)
            );
            for v in &t.next_state {
                let _ = write!(line, ",{v:?}");
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Parses a log written by [`write_trajectory_log`].
pub fn read_trajectory_log<R: BufRead>(input: R) -> Result<(LogHeader, Vec<Trajectory>)> {
    let mut header: Option<LogHeader> = None;
    let mut trajs: Vec<Trajectory> = Vec::new();
    let parse_err = |line: usize, reason: String| Error::TrajectoryLog { line, reason };

    for (idx, raw) in input.lines().enumerate() {
        let lineno = idx + 1;
        let raw = raw?;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(LOG_MAGIC) {
            let mut env = None;
            let mut obs_dim = None;
            let mut act_dim = None;
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("env", v)) => env = Some(v.to_string()),
                    Some(("obs_dim", v)) => obs_dim = v.parse().ok(),
                    Some(("act_dim", v)) => act_dim = v.parse().ok(),
                    _ => {}
                }
            }
            match (env, obs_dim, act_dim) {
                (Some(env), Some(obs_dim), Some(act_dim)) => {
                    header = Some(LogHeader {
                        env,
                        obs_dim,
                        act_dim,
                    })
                }
                _ => return Err(parse_err(lineno, "incomplete header".into())),
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# episode") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let seed = fields
                .iter()
                .position(|f| *f == "seed")
                .and_then(|i| fields.get(i + 1))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(lineno, "episode line without seed".into()))?;
            let truncated = fields
                .iter()
                .position(|f| *f == "truncated")
                .and_then(|i| fields.get(i + 1))
                .map(|v| *v == "true")
                .unwrap_or(false);
            trajs.push(Trajectory {
                transitions: Vec::new(),
                truncated,
                seed,
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let h = header
            .as_ref()
            .ok_or_else(|| parse_err(lineno, "record before header".into()))?;
        let traj = trajs
            .last_mut()
            .ok_or_else(|| parse_err(lineno, "record before episode marker".into()))?;
        let fields: Vec<&str> = line.split(',').collect();
        let expected = 2 + 2 * h.obs_dim + h.act_dim + 3;
        if fields.len() != expected {
            return Err(parse_err(
                lineno,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let nums = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        let (state, rest) = nums.split_at(h.obs_dim);
        let (action, rest) = rest.split_at(h.act_dim);
        let (scalars, next_state) = rest.split_at(3);
        traj.transitions.push(Transition {
            state: state.to_vec(),
            action: action.to_vec(),
            reward: scalars[0],
            cost: scalars[1],
            terminal: scalars[2] != 0.0,
            next_state: next_state.to_vec(),
        });
    }
    let header = header.ok_or_else(|| parse_err(0, "missing header".into()))?;
    Ok((header, trajs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn traj(rewards: &[f64], costs: &[f64]) -> Trajectory {
        let transitions = rewards
            .iter()
            .zip(costs)
            .enumerate()
            .map(|(i, (&r, &c))| Transition {
                state: vec![i as f64],
                action: vec![0.0],
                reward: r,
                cost: c,
                next_state: vec![(i + 1) as f64],
                terminal: false,
            })
            .collect();
        Trajectory {
            transitions,
            truncated: true,
            seed: 7,
        }
    }

    #[test]
    fn discounted_sum_examples() {
        assert_eq!(discounted_sum(Vec::<f64>::new(), 0.9), 0.0);
        assert_eq!(discounted_sum(vec![5.0, 7.0, 11.0], 0.0), 5.0);
        assert_abs_diff_eq!(discounted_sum(vec![1.0, 1.0, 1.0], 0.9), 2.71, epsilon = 1e-12);
        assert_eq!(discounted_sum(vec![1.0, 2.0, 3.5], 1.0), 6.5);
    }

    #[test]
    fn trajectory_aggregates() {
        let t = traj(&[1.0, 2.0], &[0.0, 0.0]);
        assert_eq!(trajectory_return_and_cost(&t, 0.9).1, 0.0);

        let t = traj(&[2.0], &[3.0]);
        assert_eq!(trajectory_return_and_cost(&t, 0.37), (2.0, 3.0));

        let t = traj(&[1.0, 1.0], &[0.0, 1.0]);
        assert_eq!(trajectory_return_and_cost(&t, 0.5), (1.5, 0.5));
    }

    #[test]
    fn batch_estimate_examples() {
        assert_eq!(batch_estimates(&[], 0.9), Err(Error::EmptyBatch));

        let t = traj(&[1.0, -2.0, 0.5], &[1.0, 0.0, 1.0]);
        assert_eq!(
            batch_estimates(std::slice::from_ref(&t), 0.9).unwrap(),
            trajectory_return_and_cost(&t, 0.9)
        );

        let a = traj(&[0.0], &[4.0]);
        let b = traj(&[0.0], &[6.0]);
        assert_eq!(batch_estimates(&[a, b], 0.9).unwrap().1, 5.0);

        let many = vec![t.clone(); 9];
        let (r1, c1) = batch_estimates(&[t], 0.9).unwrap();
        let (rn, cn) = batch_estimates(&many, 0.9).unwrap();
        assert_abs_diff_eq!(r1, rn, epsilon = 1e-12);
        assert_abs_diff_eq!(c1, cn, epsilon = 1e-12);
    }

    #[test]
    fn validate_catches_broken_trajectories() {
        let mut t = traj(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(t.validate().is_ok());
        t.transitions[0].terminal = true;
        assert!(t.validate().is_err());
        let mut t = traj(&[0.0, 0.0], &[0.0, 0.0]);
        t.transitions[1].state = vec![42.0];
        assert!(t.validate().is_err());
        let mut t = traj(&[0.0], &[0.0]);
        t.transitions[0].cost = -1.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CmdpConfig::default().validate().is_ok());
        for bad in [
            CmdpConfig { gamma: 1.0, ..Default::default() },
            CmdpConfig { gamma: 0.0, ..Default::default() },
            CmdpConfig { cost_limit: 0.0, ..Default::default() },
            CmdpConfig { horizon: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn trajectory_log_round_trip() {
        let mut a = traj(&[0.1, 1.0 / 3.0], &[0.0, 1.0]);
        a.transitions[1].terminal = true;
        a.truncated = false;
        let b = traj(&[std::f64::consts::PI], &[1.0]);
        let header = LogHeader {
            env: "point-goal".into(),
            obs_dim: 1,
            act_dim: 1,
        };
        let mut buf = Vec::new();
        write_trajectory_log(&mut buf, &header, &[a.clone(), b.clone()]).unwrap();
        let (h, back) = read_trajectory_log(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn trajectory_log_rejects_short_rows() {
        let text = "# esbcpo-trajectories v1 env=x obs_dim=2 act_dim=1\n# episode 0 seed 1 truncated true\n0,0,1.0,2.0\n";
        let err = read_trajectory_log(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::TrajectoryLog { line: 3, .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn discounted_sum_is_linear(
                pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..40),
                gamma in 0.0f64..=1.0,
            ) {
                let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let sum: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
                let lhs = discounted_sum(sum, gamma);
                let rhs = discounted_sum(a, gamma) + discounted_sum(b, gamma);
                prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()).max(1.0) * 40.0);
            }

            #[test]
            fn gamma_one_is_plain_sum(values in prop::collection::vec(-5.0f64..5.0, 0..30)) {
                let plain: f64 = values.iter().sum();
                prop_assert!((discounted_sum(values, 1.0) - plain).abs() < 1e-12);
            }

            #[test]
            fn batch_estimates_permutation_invariant(
                costs in prop::collection::vec(0.0f64..5.0, 1..8),
                rot in 0usize..8,
            ) {
                let trajs: Vec<Trajectory> = costs.iter().map(|&c| traj(&[c * 0.5, 1.0], &[c, 0.0])).collect();
                let mut rotated = trajs.clone();
                rotated.rotate_left(rot % trajs.len());
                rotated.reverse();
                let (r1, c1) = batch_estimates(&trajs, 0.95).unwrap();
                let (r2, c2) = batch_estimates(&rotated, 0.95).unwrap();
                prop_assert!((r1 - r2).abs() < 1e-12);
                prop_assert!((c1 - c2).abs() < 1e-12);
            }
        }
    }
}
