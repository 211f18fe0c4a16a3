//! Small grid world with a wall that can be crossed at a price or walked
//! around through a gap.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::Error;

pub const SIZE: i32 = 8;
pub const GOAL: (i32, i32) = (7, 4);
pub const WALL_COLUMN: i32 = 4;
pub const STEP_REWARD: f64 = -0.05;
pub const GOAL_REWARD: f64 = 1.0;
pub const OBS_DIM: usize = 2;
pub const ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Obstacles fill the middle column except for a gap in the bottom row.
    #[default]
    Wall,
    /// No obstacles.
    Open,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Wall => "wall",
            Layout::Open => "open",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "wall" => Ok(Layout::Wall),
            "open" => Ok(Layout::Open),
            other => Err(Error::InvalidConfig(format!("unknown grid layout `{other}`"))),
        }
    }
}

impl Layout {
    pub fn is_obstacle(self, col: i32, row: i32) -> bool {
        match self {
            Layout::Wall => col == WALL_COLUMN && row >= 1,
            Layout::Open => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridWorld {
    pub col: i32,
    pub row: i32,
    pub layout: Layout,
}

impl GridWorld {
    /// Starts in a random row of the leftmost column.
    pub fn reset<R: Rng>(rng: &mut R, layout: Layout) -> Self {
        Self {
            col: 0,
            row: rng.random_range(0..SIZE),
            layout,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let scale = (SIZE - 1) as f64;
        vec![self.col as f64 / scale, self.row as f64 / scale]
    }

    /// Moves up, down, left or right (0..4); moves off the grid keep the
    /// agent in place. Returns `(reward, reached_goal)`.
    pub fn step(&mut self, action: usize) -> (f64, bool) {
        let (dc, dr) = match action {
            0 => (0, 1),
            1 => (0, -1),
            2 => (-1, 0),
            _ => (1, 0),
        };
        self.col = (self.col + dc).clamp(0, SIZE - 1);
        self.row = (self.row + dr).clamp(0, SIZE - 1);
        if (self.col, self.row) == GOAL {
            (STEP_REWARD + GOAL_REWARD, true)
        } else {
            (STEP_REWARD, false)
        }
    }
}

/// Obstacle indicator evaluated on a GridNav observation.
pub fn grid_cost(obs: &[f64], layout: Layout) -> f64 {
    let scale = (SIZE - 1) as f64;
    let col = (obs[0] * scale).round() as i32;
    let row = (obs[1] * scale).round() as i32;
    if layout.is_obstacle(col, row) {
        1.0
    } else {
        0.0
    }
}
