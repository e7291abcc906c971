//! Quantile-regression losses and implicit quantile actors.

mod actor;
mod embedding;
mod fit;

pub use actor::{Actor, ActorConfig, ActorKind, QuantileBatch};
pub use embedding::{cosine_features, CosineEmbedding, COSINE_FEATURES};
pub use fit::{actor_samples, fit_distribution, FitOptions, FitReport, TargetDistribution};

use crate::error::{Error, Result};
use crate::numerics::{huber_quantile_grad, huber_quantile_value};

/// Default Huber threshold κ.
pub const HUBER_KAPPA: f64 = 1.0;

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level {tau} outside [0, 1]")))
    }
}

/// Pinball loss `(τ − 1{u ≤ 0})·u`.
pub fn quantile_loss(tau: f64, u: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(huber_quantile_value(tau, u, 0.0))
}

/// `|τ − 1{u ≤ 0}| · L_κ(u) / κ` with the Huber function
/// `L_κ(u) = u²/2` for `|u| ≤ κ` and `κ(|u| − κ/2)` beyond.
pub fn huber_quantile_loss(tau: f64, u: f64, kappa: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!("huber threshold {kappa} must be positive")));
    }
    Ok(huber_quantile_value(tau, u, kappa))
}

/// Derivative of [`huber_quantile_loss`] in `u`.
pub fn huber_quantile_loss_grad(tau: f64, u: f64, kappa: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!("huber threshold {kappa} must be positive")));
    }
    Ok(huber_quantile_grad(tau, u, kappa))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(quantile_loss(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(quantile_loss(0.5, -1.0).unwrap(), 0.5);
        assert_eq!(quantile_loss(0.3, 0.0).unwrap(), 0.0);
        assert!((quantile_loss(0.9, -1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((quantile_loss(0.9, 1.0).unwrap() - 0.9).abs() < 1e-15);
        assert!(quantile_loss(1.2, 1.0).is_err());
        assert!(quantile_loss(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber_quantile_loss(0.7, 0.0, 1.0).unwrap(), 0.0);
        assert!((huber_quantile_loss(0.5, 2.0, 1.0).unwrap() - 0.75).abs() < 1e-15);
        for u in [-1.0, 1.0] {
            for tau in [0.1, 0.5, 0.9] {
                let h = huber_quantile_loss(tau, u, 1e-6).unwrap();
                assert!((h - quantile_loss(tau, u).unwrap()).abs() < 1e-5);
            }
        }
        assert!(huber_quantile_loss(0.5, 1.0, 0.0).is_err());
        assert!(huber_quantile_loss(0.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn huber_is_convex_on_grid() {
        for &tau in &[0.05, 0.3, 0.5, 0.95] {
            for &kappa in &[0.1, 1.0, 2.0] {
                let h = 1e-3;
                let f = |u: f64| huber_quantile_loss(tau, u, kappa).unwrap();
                for i in -3000..3000 {
                    let u = i as f64 * h;
                    let second = f(u + h) - 2.0 * f(u) + f(u - h);
                    assert!(second >= -1e-9, "tau {tau} kappa {kappa} u {u}: {second}");
                }
            }
        }
    }

    #[test]
    fn huber_gradient_matches_differences() {
        for &u in &[-2.5, -0.4, 0.3, 1.7] {
            let g = huber_quantile_loss_grad(0.3, u, 1.0).unwrap();
            let h = 1e-6;
            let fd = (huber_quantile_loss(0.3, u + h, 1.0).unwrap() - huber_quantile_loss(0.3, u - h, 1.0).unwrap()) / (2.0 * h);
            assert!((g - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative(tau in 0.0f64..=1.0, u in -10.0f64..10.0, kappa in 0.01f64..5.0) {
            prop_assert!(quantile_loss(tau, u).unwrap() >= 0.0);
            prop_assert!(huber_quantile_loss(tau, u, kappa).unwrap() >= 0.0);
        }

        #[test]
        fn huber_below_pinball(tau in 0.0f64..=1.0, u in -10.0f64..10.0, kappa in 0.01f64..5.0) {
            // L_κ(u)/κ ≤ |u|, so the smoothed loss never exceeds the pinball loss.
            prop_assert!(huber_quantile_loss(tau, u, kappa).unwrap() <= quantile_loss(tau, u).unwrap() + 1e-12);
        }
    }
}
