//! Forward-process noise schedule: per-step beta_n, alpha_n = 1 - beta_n and
//! the cumulative product alpha_bar_n, for n = 1..=N.

use crate::error::{Error, Result};

/// Terminal state is considered near-isotropic when alpha_bar_N is below this.
pub const TERMINAL_ALPHA_BAR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Build a schedule. Hard invariants (0 < beta < 1, beta nondecreasing,
    /// alpha_bar strictly decreasing) are enforced here; the near-isotropic
    /// terminal condition is a property of a *pipeline* schedule and is
    /// checked separately via [`NoiseSchedule::validate_terminal`], because
    /// short diagnostic schedules legitimately stop earlier.
    pub fn build(kind: ScheduleKind, n_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        if !(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max {
            return Err(Error::config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..n_steps)
                .map(|i| {
                    if n_steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * i as f64 / (n_steps - 1) as f64
                    }
                })
                .collect(),
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(n_steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        for w in alpha_bar.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::config("alpha_bar must be strictly decreasing"));
            }
        }
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.beta.len()
    }

    /// beta_n for n in 1..=N.
    pub fn beta(&self, n: usize) -> f64 {
        self.beta[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n - 1]
    }

    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bar[n - 1]
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().unwrap()
    }

    /// Near-isotropic terminal check for schedules used by training/sampling.
    pub fn validate_terminal(&self) -> Result<()> {
        let t = self.terminal_alpha_bar();
        if t >= TERMINAL_ALPHA_BAR {
            return Err(Error::config(format!(
                "terminal alpha_bar {t:.4} >= {TERMINAL_ALPHA_BAR}; raise beta_max or N so the \
                 forward process ends near an isotropic Gaussian"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_step_schedule_matches_direct_product() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        // Independent direct product.
        let mut prod = 1.0;
        for i in 0..100 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 99.0;
            prod *= 1.0 - beta;
        }
        assert!((s.terminal_alpha_bar() - prod).abs() < 1e-15);
        assert!(s.terminal_alpha_bar() < 0.37);
        assert!((s.alpha_bar(1) - (1.0 - 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        for n in 2..=100 {
            assert!(s.alpha_bar(n) < s.alpha_bar(n - 1));
        }
    }

    #[test]
    fn classic_thousand_step_schedule_is_terminal() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
        s.validate_terminal().unwrap();
        assert!(s.terminal_alpha_bar() < 1e-4);
    }

    #[test]
    fn short_mild_schedule_fails_terminal_check_only() {
        let s = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        assert!(s.validate_terminal().is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::build(ScheduleKind::Linear, 10, 0.5, 0.2).is_err());
    }
}
