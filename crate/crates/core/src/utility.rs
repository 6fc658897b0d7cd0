//! Production utility components: success probability `q` (Beta posterior
//! mean), goal-reach probability `r` (pluggable heuristic) and expected
//! cost `C` (running mean with a prior).

/// Heuristic for `r`, the probability of reaching the goal once the
/// production has succeeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RMode {
    Constant(f64),
    /// `max(0, 1 - spent / budget)`: the more already spent, the less likely.
    CostDiscount {
        budget: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityStats {
    pub q_alpha: f64,
    pub q_beta: f64,
    pub cost_sum: f64,
    pub cost_n: u64,
    pub cost_prior: f64,
    pub r_mode: RMode,
}

impl Default for UtilityStats {
    fn default() -> Self {
        UtilityStats::new(1.0, 1.0, 0.05, RMode::Constant(1.0))
    }
}

impl UtilityStats {
    pub fn new(q_alpha: f64, q_beta: f64, cost_prior: f64, r_mode: RMode) -> Self {
        UtilityStats {
            q_alpha,
            q_beta,
            cost_sum: 0.0,
            cost_n: 0,
            cost_prior,
            r_mode,
        }
    }

    pub fn update_q(&mut self, success: bool) {
        if success {
            self.q_alpha += 1.0;
        } else {
            self.q_beta += 1.0;
        }
    }

    pub fn estimate_q(&self) -> f64 {
        self.q_alpha / (self.q_alpha + self.q_beta)
    }

    pub fn estimate_r(&self, spent_cost: f64) -> f64 {
        match self.r_mode {
            RMode::Constant(r) => r,
            RMode::CostDiscount { budget } => (1.0 - spent_cost.max(0.0) / budget).max(0.0),
        }
    }

    /// `p = q * r`.
    pub fn estimate_p(&self, spent_cost: f64) -> f64 {
        self.estimate_q() * self.estimate_r(spent_cost)
    }

    pub fn update_cost(&mut self, observed: f64) {
        self.cost_sum += observed;
        self.cost_n += 1;
    }

    pub fn estimate_c(&self) -> f64 {
        if self.cost_n == 0 {
            self.cost_prior
        } else {
            self.cost_sum / self.cost_n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_of_succession() {
        let mut u = UtilityStats::default();
        assert_eq!(u.estimate_q(), 0.5);
        u.update_q(true);
        assert!((u.estimate_q() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn seven_successes_three_failures() {
        let mut u = UtilityStats::default();
        for _ in 0..7 {
            u.update_q(true);
        }
        for _ in 0..3 {
            u.update_q(false);
        }
        assert!((u.estimate_q() - 8.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn r_modes() {
        let u = UtilityStats::default();
        assert_eq!(u.estimate_r(123.0), 1.0);
        let u = UtilityStats::new(1.0, 1.0, 0.0, RMode::CostDiscount { budget: 10.0 });
        assert_eq!(u.estimate_r(5.0), 0.5);
        assert_eq!(u.estimate_r(10.0), 0.0);
        assert_eq!(u.estimate_r(25.0), 0.0);
    }

    #[test]
    fn cost_running_mean() {
        let mut u = UtilityStats::default();
        assert_eq!(u.estimate_c(), 0.05);
        u.update_cost(1.0);
        assert_eq!(u.estimate_c(), 1.0);
        u.update_cost(3.0);
        assert_eq!(u.estimate_c(), 2.0);
    }
}
