use std::fmt;
use std::str::FromStr;

use crate::adaptation::AlphaState;
use crate::cmdp::CmdpConfig;
use crate::error::{Error, Result};
use crate::policy::CriticFitConfig;
use crate::trustregion::TrustConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Constraint weighted by the Lyapunov-based advantage with adaptive
    /// `alpha` and per-step `beta`.
    EsbCpo,
    /// As [`Algorithm::EsbCpo`] with `beta` fixed at 1, so only the stability
    /// gap remains.
    EsbCpoG1,
    /// Constraint weighted by the plain cost advantage.
    Cpo,
    /// Unconstrained natural-gradient step.
    Trpo,
    /// Reward-minus-penalty objective with a multiplier on the cost advantage.
    TrpoLagrangian,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::EsbCpo,
        Algorithm::EsbCpoG1,
        Algorithm::Cpo,
        Algorithm::Trpo,
        Algorithm::TrpoLagrangian,
    ];

    /// Whether the cost enters as a trust-region constraint.
    pub fn is_constrained(self) -> bool {
        matches!(self, Algorithm::EsbCpo | Algorithm::EsbCpoG1 | Algorithm::Cpo)
    }

    pub fn uses_lae(self) -> bool {
        matches!(self, Algorithm::EsbCpo | Algorithm::EsbCpoG1)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::EsbCpo => "esb-cpo",
            Algorithm::EsbCpoG1 => "esb-cpo-g1",
            Algorithm::Cpo => "cpo",
            Algorithm::Trpo => "trpo",
            Algorithm::TrpoLagrangian => "trpo-lagrangian",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

/// Everything one training run needs besides the environment and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub gae_lambda: f64,
    pub cmdp: CmdpConfig,
    pub trust: TrustConfig,
    /// Initial multiplier, `k` and step size of the `alpha` schedule.
    pub adaptation: AlphaState,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub critic: CriticFitConfig,
    /// Fraction of each batch held out from critic fitting for diagnostics.
    pub holdout_fraction: f64,
    pub lagrangian_init: f64,
    pub lagrangian_lr: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::EsbCpo,
            steps_per_epoch: 1000,
            epochs: 100,
            gae_lambda: 0.95,
            cmdp: CmdpConfig::default(),
            trust: TrustConfig::default(),
            adaptation: AlphaState::default(),
            hidden: vec![64, 64],
            log_std_init: -0.5,
            critic: CriticFitConfig::default(),
            holdout_fraction: 0.1,
            lagrangian_init: 0.0,
            lagrangian_lr: 0.01,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        self.cmdp.validate()?;
        self.trust.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps_per_epoch < self.cmdp.horizon {
            return bad("steps_per_epoch must be at least the horizon");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        if !(self.adaptation.k > 0.0 && self.adaptation.eta > 0.0 && self.adaptation.lambda >= 0.0) {
            return bad("adaptation needs k > 0, eta > 0 and lambda >= 0");
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 0.5)");
        }
        if self.critic.epochs == 0 || self.critic.minibatch == 0 || !(self.critic.lr > 0.0) {
            return bad("critic fitting needs positive epochs, minibatch and lr");
        }
        if !(self.lagrangian_init >= 0.0 && self.lagrangian_lr >= 0.0) {
            return bad("lagrangian multiplier and rate must be non-negative");
        }
        if !self.log_std_init.is_finite() {
            return bad("log_std_init must be finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sppo".parse::<Algorithm>().is_err());
    }

    #[test]
    fn default_is_valid() {
        assert!(AlgoConfig::default().validate().is_ok());
        let short = AlgoConfig {
            steps_per_epoch: 10,
            ..AlgoConfig::default()
        };
        assert!(short.validate().is_err());
    }
}
