use std::f64::consts::PI;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};

/// One-step bandit with a small mode of height `ε` around `μ0` and a large
/// mode of height `1 − ε` around `μ0 + 4α`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalBandit {
    pub mu0: f64,
    pub alpha: f64,
    pub epsilon: f64,
    spec: EnvSpec,
}

impl Default for MultiModalBandit {
    fn default() -> Self {
        Self::new(0.0, 1.0, 0.2).expect("default parameters are valid")
    }
}

impl MultiModalBandit {
    pub fn new(mu0: f64, alpha: f64, epsilon: f64) -> Result<Self> {
        if !mu0.is_finite() || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("bandit needs finite mu0 and alpha > 0, got {mu0}, {alpha}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0 / 3.0) {
            return Err(Error::invalid(format!("bandit epsilon {epsilon} outside (0, 1/3)")));
        }
        let spec = EnvSpec {
            state_dim: 1,
            action_dim: 1,
            action_low: vec![mu0 - 4.0 * alpha],
            action_high: vec![mu0 + 8.0 * alpha],
            horizon: 1,
            gamma: 0.99,
        };
        Ok(Self { mu0, alpha, epsilon, spec })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// `|cos(2π(a − μ0)/(8α))| · (ε·W[μ0−2α, μ0+2α](a) + (1−ε)·W[μ0+2α, μ0+6α](a))`
    /// with closed windows. Defined on all of ℝ.
    pub fn reward(&self, a: f64) -> f64 {
        let (m, al) = (self.mu0, self.alpha);
        let inside = |lo: f64, hi: f64| if a >= lo && a <= hi { 1.0 } else { 0.0 };
        let weight = self.epsilon * inside(m - 2.0 * al, m + 2.0 * al)
            + (1.0 - self.epsilon) * inside(m + 2.0 * al, m + 6.0 * al);
        if weight == 0.0 {
            return 0.0;
        }
        (2.0 * PI / (8.0 * al) * (a - m)).cos().abs() * weight
    }

    pub fn best_action(&self) -> f64 {
        self.mu0 + 4.0 * self.alpha
    }

    pub fn max_reward(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// `exp(−(a₂ − sin(2a₁))² / 0.02)` on `[-1, 1]²`.
pub fn correlated_bandit_reward(a: &[f64]) -> Result<f64> {
    if a.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "correlated_bandit_reward",
            expected: vec![2],
            actual: vec![a.len()],
        });
    }
    if a.iter().any(|x| !(-1.0..=1.0).contains(x)) {
        return Err(Error::invalid(format!("action ({}, {}) outside [-1, 1]^2", a[0], a[1])));
    }
    let d = a[1] - (2.0 * a[0]).sin();
    Ok((-d * d / 0.02).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelatedBandit {
    spec: EnvSpec,
}

impl Default for CorrelatedBandit {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 1,
                action_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                horizon: 1,
                gamma: 0.99,
            },
        }
    }
}

impl CorrelatedBandit {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reward(&self, a: &[f64]) -> Result<f64> {
        correlated_bandit_reward(a)
    }
}
