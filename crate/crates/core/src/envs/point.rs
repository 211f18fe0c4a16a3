//! Point-mass tasks in a square arena.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ARENA: f64 = 2.0;
pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.9;
pub const HAZARD_COUNT: usize = 4;
pub const HAZARD_RADIUS: f64 = 0.3;
pub const GOAL_RADIUS: f64 = 0.3;
pub const CAPTURE_BONUS: f64 = 5.0;
pub const CIRCLE_RADIUS: f64 = 1.0;
pub const CIRCLE_X_LIMIT: f64 = 0.8;
pub const RADIAL_PENALTY: f64 = 0.1;

pub const GOAL_OBS_DIM: usize = 6 + 2 * HAZARD_COUNT;
pub const CIRCLE_OBS_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl Body {
    /// Damped velocity update followed by position integration; the walls
    /// clamp the position and zero the velocity component that hit them.
    pub fn integrate(&mut self, accel: [f64; 2]) {
        for (i, a) in accel.iter().enumerate() {
            let a = a.clamp(-1.0, 1.0);
            self.vel[i] = DAMPING * self.vel[i] + DT * a;
            let p = self.pos[i] + DT * self.vel[i];
            if p > ARENA {
                self.pos[i] = ARENA;
                self.vel[i] = 0.0;
            } else if p < -ARENA {
                self.pos[i] = -ARENA;
                self.vel[i] = 0.0;
            } else {
                self.pos[i] = p;
            }
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn uniform_point<R: Rng>(rng: &mut R, half: f64) -> [f64; 2] {
    [rng.random_range(-half..half), rng.random_range(-half..half)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalWorld {
    pub body: Body,
    pub goal: [f64; 2],
    pub hazards: [[f64; 2]; HAZARD_COUNT],
    pub rng: ChaCha8Rng,
}

impl GoalWorld {
    pub fn reset(mut rng: ChaCha8Rng) -> Self {
        let mut hazards = [[0.0; 2]; HAZARD_COUNT];
        for i in 0..HAZARD_COUNT {
            loop {
                let h = uniform_point(&mut rng, 1.5);
                if hazards[..i].iter().all(|o| dist(*o, h) > 2.0 * HAZARD_RADIUS) {
                    hazards[i] = h;
                    break;
                }
            }
        }
        let pos = loop {
            let p = uniform_point(&mut rng, 1.8);
            if hazards.iter().all(|h| dist(*h, p) > HAZARD_RADIUS + 0.1) {
                break p;
            }
        };
        let mut world = Self {
            body: Body { pos, vel: [0.0; 2] },
            goal: [0.0; 2],
            hazards,
            rng,
        };
        world.resample_goal();
        world
    }

    fn resample_goal(&mut self) {
        loop {
            let g = uniform_point(&mut self.rng, 1.8);
            let clear = self.hazards.iter().all(|h| dist(*h, g) > HAZARD_RADIUS + GOAL_RADIUS);
            if clear && dist(g, self.body.pos) > 2.0 * GOAL_RADIUS {
                self.goal = g;
                return;
            }
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let Body { pos, vel } = self.body;
        let mut obs = Vec::with_capacity(GOAL_OBS_DIM);
        obs.extend_from_slice(&pos);
        obs.extend_from_slice(&vel);
        obs.push(self.goal[0] - pos[0]);
        obs.push(self.goal[1] - pos[1]);
        for h in &self.hazards {
            obs.push(h[0] - pos[0]);
            obs.push(h[1] - pos[1]);
        }
        obs
    }

    /// Advances one step and returns the reward.
    pub fn step(&mut self, accel: [f64; 2]) -> f64 {
        let before = dist(self.goal, self.body.pos);
        self.body.integrate(accel);
        let after = dist(self.goal, self.body.pos);
        let mut reward = before - after;
        if after < GOAL_RADIUS {
            reward += CAPTURE_BONUS;
            self.resample_goal();
        }
        reward
    }
}

/// Hazard indicator evaluated on a PointGoal observation.
pub fn goal_cost(obs: &[f64]) -> f64 {
    let inside = obs[6..6 + 2 * HAZARD_COUNT]
        .chunks_exact(2)
        .any(|d| d[0].hypot(d[1]) < HAZARD_RADIUS);
    if inside {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleWorld {
    pub body: Body,
    pub x_limit: f64,
}

impl CircleWorld {
    pub fn reset(rng: &mut ChaCha8Rng, x_limit: f64) -> Self {
        Self {
            body: Body {
                pos: uniform_point(rng, 0.5),
                vel: [0.0; 2],
            },
            x_limit,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let Body { pos, vel } = self.body;
        vec![pos[0], pos[1], vel[0], vel[1]]
    }

    /// Counter-clockwise speed along the circle minus the radial error penalty.
    pub fn step(&mut self, accel: [f64; 2]) -> f64 {
        self.body.integrate(accel);
        let Body { pos, vel } = self.body;
        let r = pos[0].hypot(pos[1]);
        let tangential = if r > 1e-9 {
            (-pos[1] * vel[0] + pos[0] * vel[1]) / r
        } else {
            0.0
        };
        tangential - RADIAL_PENALTY * (r - CIRCLE_RADIUS).abs()
    }
}

/// Wall-crossing indicator evaluated on a PointCircle observation.
pub fn circle_cost(obs: &[f64], x_limit: f64) -> f64 {
    if obs[0].abs() > x_limit {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn integration_by_hand() {
        let mut b = Body::default();
        b.integrate([1.0, -1.0]);
        assert_eq!(b.vel, [0.1, -0.1]);
        assert_eq!(b.pos, [0.1 * 0.1, -0.1 * 0.1]);
        b.integrate([5.0, 0.0]);
        assert_eq!(b.vel[0], 0.9 * 0.1 + 0.1);
    }

    #[test]
    fn walls_clamp_and_stop() {
        let mut b = Body {
            pos: [1.99, 0.0],
            vel: [1.0, 0.0],
        };
        b.integrate([1.0, 0.0]);
        assert_eq!(b.pos[0], ARENA);
        assert_eq!(b.vel[0], 0.0);
    }

    #[test]
    fn reset_places_agent_outside_hazards() {
        for seed in 0..200 {
            let w = GoalWorld::reset(ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(goal_cost(&w.observe()), 0.0);
        }
    }

    #[test]
    fn hazard_indicator() {
        let mut w = GoalWorld::reset(ChaCha8Rng::seed_from_u64(3));
        w.body.pos = [w.hazards[2][0] + 0.1, w.hazards[2][1]];
        assert_eq!(goal_cost(&w.observe()), 1.0);
        w.body.pos = [w.hazards[2][0] + 0.31, w.hazards[2][1]];
        let others_far = w.hazards.iter().enumerate().all(|(i, h)| i == 2 || dist(*h, w.body.pos) >= 0.3);
        if others_far {
            assert_eq!(goal_cost(&w.observe()), 0.0);
        }
    }

    #[test]
    fn capture_pays_bonus_and_moves_goal() {
        let mut w = GoalWorld::reset(ChaCha8Rng::seed_from_u64(9));
        w.goal = [w.body.pos[0] + 0.001, w.body.pos[1]];
        let old_goal = w.goal;
        let r = w.step([0.0, 0.0]);
        assert!((r - CAPTURE_BONUS).abs() < 1e-12);
        assert_ne!(w.goal, old_goal);
    }

    #[test]
    fn circle_reward_by_hand() {
        let mut w = CircleWorld {
            body: Body {
                pos: [1.0, 0.0],
                vel: [0.0, 1.0],
            },
            x_limit: CIRCLE_X_LIMIT,
        };
        let r = w.step([0.0, 0.0]);
        // moving up on the positive x axis is counter-clockwise
        let pos: [f64; 2] = [1.0, 0.09];
        let rad = pos[0].hypot(pos[1]);
        let expected = 0.9 / rad - RADIAL_PENALTY * (rad - 1.0);
        assert!((r - expected).abs() < 1e-12);
        assert_eq!(circle_cost(&w.observe(), CIRCLE_X_LIMIT), 1.0);
        assert_eq!(circle_cost(&[0.8, 0.0, 0.0, 0.0], CIRCLE_X_LIMIT), 0.0);
    }
}
