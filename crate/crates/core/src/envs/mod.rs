//! Deterministic benchmark environments with sparse binary costs.
//!
//! Randomness enters only through the seeded placement at reset (and the
//! goal resampling of [`EnvKind::PointGoal`], which draws from a generator
//! seeded at reset), so a seed plus an action sequence reproduces an
//! episode bit for bit.

pub mod grid;
pub mod point;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmdp::{Trajectory, Transition};
use crate::error::{Error, Result};
use crate::policy::{forward_actor, sample_and_logprob, Head, PolicyParams};

pub use grid::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// Reach goals while avoiding hazard discs.
    PointGoal,
    /// Run counter-clockwise around the unit circle without crossing the
    /// vertical walls at `|x| = 0.8`.
    PointCircle,
    /// Navigate an 8x8 grid to the goal; the direct route crosses a wall of
    /// costly cells.
    GridNav,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::PointGoal => "point-goal",
            EnvKind::PointCircle => "point-circle",
            EnvKind::GridNav => "grid-nav",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "point-goal" | "pointgoal" => Ok(EnvKind::PointGoal),
            "point-circle" | "pointcircle" => Ok(EnvKind::PointCircle),
            "grid-nav" | "gridnav" => Ok(EnvKind::GridNav),
            _ => Err(Error::UnknownEnvironment(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Continuous { dim: usize, low: f64, high: f64 },
    Discrete { n: usize },
}

impl ActionSpace {
    /// Length of the action vector stored in a transition.
    pub fn action_len(&self) -> usize {
        match self {
            ActionSpace::Continuous { dim, .. } => *dim,
            ActionSpace::Discrete { .. } => 1,
        }
    }

    /// Policy head matching this action space.
    pub fn head(&self) -> Head {
        match *self {
            ActionSpace::Continuous { dim, .. } => Head::Gaussian { act_dim: dim },
            ActionSpace::Discrete { n } => Head::Categorical { n },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    /// Obstacle layout; only used by [`EnvKind::GridNav`].
    pub layout: Layout,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let unit_box = ActionSpace::Continuous {
            dim: 2,
            low: -1.0,
            high: 1.0,
        };
        match kind {
            EnvKind::PointGoal => Self {
                kind,
                obs_dim: point::GOAL_OBS_DIM,
                action_space: unit_box,
                horizon: 200,
                layout: Layout::default(),
            },
            EnvKind::PointCircle => Self {
                kind,
                obs_dim: point::CIRCLE_OBS_DIM,
                action_space: unit_box,
                horizon: 200,
                layout: Layout::default(),
            },
            EnvKind::GridNav => Self {
                kind,
                obs_dim: grid::OBS_DIM,
                action_space: ActionSpace::Discrete { n: grid::ACTIONS },
                horizon: 64,
                layout: Layout::Wall,
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn name(&self) -> String {
        self.kind.to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("environment dimensions and horizon must be positive".into()));
        }
        if let ActionSpace::Continuous { low, high, .. } = self.action_space {
            if !(low.is_finite() && high.is_finite() && low < high) {
                return Err(Error::InvalidConfig("action bounds must be finite with low < high".into()));
            }
        }
        Ok(())
    }

    pub fn reset(&self, seed: u64) -> Result<(EnvState, Vec<f64>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = match self.kind {
            EnvKind::PointGoal => World::Goal(Box::new(point::GoalWorld::reset(rng))),
            EnvKind::PointCircle => World::Circle(point::CircleWorld::reset(&mut rng, point::CIRCLE_X_LIMIT)),
            EnvKind::GridNav => World::Grid(grid::GridWorld::reset(&mut rng, self.layout)),
        };
        let state = EnvState {
            spec: self.clone(),
            t: 0,
            done: false,
            world,
        };
        let obs = state.observe();
        Ok((state, obs))
    }

    /// The per-step cost as a function of the observation alone.
    pub fn cost_of(&self, obs: &[f64]) -> f64 {
        match self.kind {
            EnvKind::PointGoal => point::goal_cost(obs),
            EnvKind::PointCircle => point::circle_cost(obs, point::CIRCLE_X_LIMIT),
            EnvKind::GridNav => grid::grid_cost(obs, self.layout),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum World {
    Goal(Box<point::GoalWorld>),
    Circle(point::CircleWorld),
    Grid(grid::GridWorld),
}

/// Internal state of one running episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    spec: EnvSpec,
    t: usize,
    done: bool,
    world: World,
}

/// Outcome of one [`EnvState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    /// The episode reached an absorbing state (GridNav goal).
    pub terminal: bool,
    /// The episode hit the horizon without reaching an absorbing state.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

impl EnvState {
    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Agent position (grid cells are reported as `(col, row)`).
    pub fn position(&self) -> [f64; 2] {
        match &self.world {
            World::Goal(w) => w.body.pos,
            World::Circle(w) => w.body.pos,
            World::Grid(w) => [w.col as f64, w.row as f64],
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match &self.world {
            World::Goal(w) => w.observe(),
            World::Circle(w) => w.observe(),
            World::Grid(w) => w.observe(),
        }
    }

    /// Advances one step. Continuous actions are clipped to the action
    /// bounds; a discrete action is a single entry holding the index.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let expected = self.spec.action_space.action_len();
        if action.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "action",
                expected,
                actual: action.len(),
            });
        }
        if self.done {
            return Err(Error::InvalidConfig("step called on a finished episode".into()));
        }
        let (reward, terminal) = match (&mut self.world, &self.spec.action_space) {
            (World::Goal(w), ActionSpace::Continuous { low, high, .. }) => {
                (w.step(clip2(action, *low, *high)?), false)
            }
            (World::Circle(w), ActionSpace::Continuous { low, high, .. }) => {
                (w.step(clip2(action, *low, *high)?), false)
            }
            (World::Grid(w), ActionSpace::Discrete { n }) => {
                let a = action[0];
                if !(a.is_finite() && a >= 0.0 && a.fract() == 0.0 && (a as usize) < *n) {
                    return Err(Error::InvalidConfig(format!("invalid discrete action {a}")));
                }
                w.step(a as usize)
            }
            _ => return Err(Error::InvalidConfig("action space does not match environment".into())),
        };
        self.t += 1;
        let obs = self.observe();
        let cost = self.spec.cost_of(&obs);
        let truncated = !terminal && self.t >= self.spec.horizon;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            obs,
            reward,
            cost,
            terminal,
            truncated,
        })
    }
}

fn clip2(action: &[f64], low: f64, high: f64) -> Result<[f64; 2]> {
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite("action"));
    }
    Ok([action[0].clamp(low, high), action[1].clamp(low, high)])
}

/// Runs complete episodes until at least `n_steps` transitions have been
/// collected. Episode `k` is reset from the `k`-th draw of a generator seeded
/// with `seed`; actions come from `act`, which receives a separate generator
/// stream.
pub fn rollout_with<F>(spec: &EnvSpec, seed: u64, n_steps: usize, mut act: F) -> Result<Vec<Trajectory>>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> Result<Vec<f64>>,
{
    use rand::Rng;
    if n_steps == 0 {
        return Err(Error::InvalidConfig("rollout needs at least one step".into()));
    }
    let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed);
    action_rng.set_stream(1);
    let mut trajs = Vec::new();
    let mut total = 0;
    while total < n_steps {
        let ep_seed: u64 = episode_rng.random();
        let (mut state, mut obs) = spec.reset(ep_seed)?;
        let mut transitions = Vec::with_capacity(spec.horizon);
        let truncated = loop {
            let action = act(&obs, &mut action_rng)?;
            let out = state.step(&action)?;
            let done = out.done();
            let truncated = out.truncated;
            transitions.push(Transition {
                state: std::mem::replace(&mut obs, out.obs.clone()),
                action,
                reward: out.reward,
                cost: out.cost,
                next_state: out.obs,
                terminal: out.terminal,
            });
            if done {
                break truncated;
            }
        };
        total += transitions.len();
        trajs.push(Trajectory {
            transitions,
            truncated,
            seed: ep_seed,
        });
    }
    Ok(trajs)
}

/// Samples actions from `policy`; see [`rollout_with`].
pub fn rollout(policy: &PolicyParams, spec: &EnvSpec, seed: u64, n_steps: usize) -> Result<Vec<Trajectory>> {
    check_policy(policy, spec)?;
    rollout_with(spec, seed, n_steps, |obs, rng| {
        let dist = forward_actor(policy, obs)?;
        Ok(sample_and_logprob(&dist, rng).0)
    })
}

/// Uses the most likely action of `policy` at every step.
pub fn rollout_greedy(policy: &PolicyParams, spec: &EnvSpec, seed: u64, n_steps: usize) -> Result<Vec<Trajectory>> {
    check_policy(policy, spec)?;
    rollout_with(spec, seed, n_steps, |obs, _| Ok(forward_actor(policy, obs)?.mode()))
}

fn check_policy(policy: &PolicyParams, spec: &EnvSpec) -> Result<()> {
    if policy.obs_dim() != spec.obs_dim {
        return Err(Error::DimensionMismatch {
            context: "policy input",
            expected: spec.obs_dim,
            actual: policy.obs_dim(),
        });
    }
    if policy.head != spec.action_space.head() {
        return Err(Error::InvalidConfig(format!(
            "policy head {} does not match environment {}",
            policy.head, spec.kind
        )));
    }
    Ok(())
}

/// Re-simulates a logged episode from its seed and actions.
pub fn replay(spec: &EnvSpec, traj: &Trajectory) -> Result<Trajectory> {
    let (mut state, mut obs) = spec.reset(traj.seed)?;
    let mut transitions = Vec::with_capacity(traj.len());
    let mut truncated = false;
    for logged in &traj.transitions {
        let out = state.step(&logged.action)?;
        truncated = out.truncated;
        transitions.push(Transition {
            state: std::mem::replace(&mut obs, out.obs.clone()),
            action: logged.action.clone(),
            reward: out.reward,
            cost: out.cost,
            next_state: out.obs,
            terminal: out.terminal,
        });
    }
    Ok(Trajectory {
        transitions,
        truncated,
        seed: traj.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn reset_is_deterministic() {
        for kind in [EnvKind::PointGoal, EnvKind::PointCircle, EnvKind::GridNav] {
            let spec = EnvSpec::new(kind);
            let (a, oa) = spec.reset(42).unwrap();
            let (b, ob) = spec.reset(42).unwrap();
            assert_eq!(oa, ob);
            assert_eq!(a, b);
            assert_eq!(a.step_count(), 0);
            assert_eq!(oa.len(), spec.obs_dim);
        }
    }

    #[test]
    fn distinct_seeds_place_distinct_goals() {
        let spec = EnvSpec::new(EnvKind::PointGoal);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut distinct = 0;
        for _ in 0..100 {
            let (s1, s2): (u64, u64) = (rng.random(), rng.random());
            let (_, o1) = spec.reset(s1).unwrap();
            let (_, o2) = spec.reset(s2).unwrap();
            let g1 = [o1[0] + o1[4], o1[1] + o1[5]];
            let g2 = [o2[0] + o2[4], o2[1] + o2[5]];
            if g1 != g2 {
                distinct += 1;
            }
        }
        assert!(distinct >= 99);
    }

    #[test]
    fn unknown_environment() {
        assert!(matches!(EnvSpec::by_name("cart-pole"), Err(Error::UnknownEnvironment(_))));
        assert_eq!(EnvSpec::by_name("PointCircle").unwrap().kind, EnvKind::PointCircle);
    }

    #[test]
    fn zero_action_from_rest() {
        let spec = EnvSpec::new(EnvKind::PointGoal);
        let (mut s, o) = spec.reset(5).unwrap();
        let out = s.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.obs, o);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn action_dimension_is_checked() {
        let spec = EnvSpec::new(EnvKind::PointCircle);
        let (mut s, _) = spec.reset(0).unwrap();
        assert!(matches!(s.step(&[0.0]), Err(Error::DimensionMismatch { .. })));
        let spec = EnvSpec::new(EnvKind::GridNav);
        let (mut s, _) = spec.reset(0).unwrap();
        assert!(s.step(&[4.0]).is_err());
        assert!(s.step(&[1.5]).is_err());
    }

    #[test]
    fn horizon_truncates() {
        let spec = EnvSpec::new(EnvKind::PointCircle);
        let trajs = rollout_with(&spec, 3, spec.horizon, |_, _| Ok(vec![0.0, 0.0])).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), spec.horizon);
        assert!(trajs[0].truncated);
        assert!(trajs[0].validate().is_ok());
    }

    #[test]
    fn policy_rollout_is_deterministic_and_long_enough() {
        let spec = EnvSpec::new(EnvKind::PointGoal);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicyParams::init(spec.obs_dim, &[8], spec.action_space.head(), -0.5, &mut rng);
        let a = rollout(&p, &spec, 17, 450).unwrap();
        let b = rollout(&p, &spec, 17, 450).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().map(Trajectory::len).sum::<usize>() >= 450);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn grid_random_policy_pays_costs() {
        let spec = EnvSpec::new(EnvKind::GridNav);
        let trajs = rollout_with(&spec, 0, 10_000, |_, rng| Ok(vec![rng.random_range(0..4) as f64])).unwrap();
        let total: f64 = trajs.iter().flat_map(|t| t.costs()).sum();
        assert!(total / trajs.len() as f64 > 0.0);
        assert!(trajs.iter().any(|t| t.transitions.last().unwrap().terminal));
    }

    #[test]
    fn replay_reproduces_costs_bit_exactly() {
        for kind in [EnvKind::PointGoal, EnvKind::PointCircle, EnvKind::GridNav] {
            let spec = EnvSpec::new(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let p = PolicyParams::init(spec.obs_dim, &[8], spec.action_space.head(), 0.5, &mut rng);
            let trajs = rollout(&p, &spec, 99, 600).unwrap();
            for t in &trajs {
                assert_eq!(&replay(&spec, t).unwrap(), t);
                for tr in &t.transitions {
                    assert_eq!(spec.cost_of(&tr.next_state).to_bits(), tr.cost.to_bits());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn physics_stays_bounded(
            seed in any::<u64>(),
            actions in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..300),
            circle in any::<bool>(),
        ) {
            let kind = if circle { EnvKind::PointCircle } else { EnvKind::PointGoal };
            let mut spec = EnvSpec::new(kind);
            spec.horizon = 400;
            let (mut s, _) = spec.reset(seed).unwrap();
            for (ax, ay) in actions {
                let out = s.step(&[ax, ay]).unwrap();
                prop_assert!(out.reward.is_finite());
                prop_assert!(out.cost == 0.0 || out.cost == 1.0);
                let p = s.position();
                prop_assert!(p[0].hypot(p[1]) <= point::ARENA * 2f64.sqrt() + 1.0);
            }
        }
    }
}
