/// Per-epoch diagnostics. Returns and costs are undiscounted per-episode
/// sums averaged over the episodes of the batch; `disc_cost` is the
/// discounted estimate compared against the cost limit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub episodes: usize,
    pub avg_return: f64,
    pub avg_cost: f64,
    pub disc_cost: f64,
    /// Mean KL of the accepted step; 0 when the line search rejected.
    pub kl: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub p_value: f64,
    pub g1: f64,
    pub g2: f64,
    pub esb_total: f64,
    pub mean_beta: f64,
    pub feasible: bool,
    pub accepted: bool,
    pub mu1: f64,
    pub mu2: f64,
    pub shrink_count: usize,
    pub b_dot_d: f64,
    pub c_slack: f64,
    pub penalty: f64,
    pub reward_loss: f64,
    pub cost_loss: f64,
    /// Held-out errors of the critics before this epoch's fit.
    pub holdout_reward_loss_pre: f64,
    pub holdout_cost_loss_pre: f64,
    /// Held-out errors after the fit.
    pub holdout_reward_loss: f64,
    pub holdout_cost_loss: f64,
}

impl EpochMetrics {
    pub const COLUMNS: [&'static str; 27] = [
        "epoch",
        "episodes",
        "avg_return",
        "avg_cost",
        "disc_cost",
        "kl",
        "alpha",
        "lambda",
        "p_value",
        "g1",
        "g2",
        "esb_total",
        "mean_beta",
        "feasible",
        "accepted",
        "mu1",
        "mu2",
        "shrink_count",
        "b_dot_d",
        "c_slack",
        "penalty",
        "reward_loss",
        "cost_loss",
        "holdout_reward_loss_pre",
        "holdout_cost_loss_pre",
        "holdout_reward_loss",
        "holdout_cost_loss",
    ];

    /// Values in [`Self::COLUMNS`] order; floats use the shortest
    /// representation that parses back exactly.
    pub fn row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:?}");
        let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
        vec![
            self.epoch.to_string(),
            self.episodes.to_string(),
            f(self.avg_return),
            f(self.avg_cost),
            f(self.disc_cost),
            f(self.kl),
            f(self.alpha),
            f(self.lambda),
            f(self.p_value),
            f(self.g1),
            f(self.g2),
            f(self.esb_total),
            f(self.mean_beta),
            b(self.feasible),
            b(self.accepted),
            f(self.mu1),
            f(self.mu2),
            self.shrink_count.to_string(),
            f(self.b_dot_d),
            f(self.c_slack),
            f(self.penalty),
            f(self.reward_loss),
            f(self.cost_loss),
            f(self.holdout_reward_loss_pre),
            f(self.holdout_cost_loss_pre),
            f(self.holdout_reward_loss),
            f(self.holdout_cost_loss),
        ]
    }

    /// Numeric view of [`Self::row`], booleans as 0/1.
    pub fn values(&self) -> Vec<f64> {
        self.row().iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_matches_columns() {
        let m = EpochMetrics {
            epoch: 3,
            avg_return: 0.1,
            accepted: true,
            ..Default::default()
        };
        let row = m.row();
        assert_eq!(row.len(), EpochMetrics::COLUMNS.len());
        assert_eq!(row[0], "3");
        assert_eq!(row[2], "0.1");
        assert_eq!(row[14], "1");
        assert_eq!(m.values()[2], 0.1);
    }
}
