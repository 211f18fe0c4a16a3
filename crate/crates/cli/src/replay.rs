//! Re-simulation of logged trajectories.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use esbcpo::cmdp::read_trajectory_log;

use crate::run::spec_from_label;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplayReport {
    pub episodes: usize,
    pub transitions: usize,
    /// Transitions whose re-simulated cost differs from the log.
    pub cost_mismatches: usize,
    /// Transitions whose reward or successor state differs.
    pub other_mismatches: usize,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.cost_mismatches == 0 && self.other_mismatches == 0
    }
}

/// Replays every episode of a trajectory log from its reset seed with the
/// logged actions and compares the outcome transition by transition.
pub fn replay(path: &Path) -> Result<ReplayReport> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (header, trajs) = read_trajectory_log(BufReader::new(file))?;
    let spec = spec_from_label(&header.env)?;
    let mut report = ReplayReport {
        episodes: trajs.len(),
        ..Default::default()
    };
    for traj in &trajs {
        let again = esbcpo::envs::replay(&spec, traj)?;
        if again.len() != traj.len() {
            bail!("episode with seed {} replays to a different length", traj.seed);
        }
        for (a, b) in traj.transitions.iter().zip(&again.transitions) {
            report.transitions += 1;
            if a.cost != b.cost {
                report.cost_mismatches += 1;
            }
            if a.reward != b.reward || a.next_state != b.next_state || a.terminal != b.terminal {
                report.other_mismatches += 1;
            }
        }
    }
    Ok(report)
}
