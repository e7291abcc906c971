//! Continuous-action environments.
//!
//! Environments are immutable descriptions; episode state is owned by the
//! caller as an [`EnvState`], so any number of episodes may run side by side.

mod bandit;
mod discrete;
mod pointmass;

use rand::Rng;

pub use bandit::{correlated_bandit_reward, CorrelatedBandit, MultiModalBandit};
pub use discrete::{discretize, discretize_range, DiscreteMdp, MAX_TABULAR_ENTRIES};
pub use pointmass::PointMass;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::invalid("env dimensions and horizon must be positive"));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::invalid("action bounds do not match action_dim"));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("action_low must be below action_high"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }

    pub fn clip(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }

    /// Maps `[-1, 1]` per dimension affinely onto the action box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(u, (l, h))| l + 0.5 * (u + 1.0) * (h - l))
            .collect()
    }

    /// Inverse of [`EnvSpec::from_unit`].
    pub fn to_unit(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (l, h))| 2.0 * (a - l) / (h - l) - 1.0)
            .collect()
    }
}

/// Caller-owned episode state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// True when the episode ended only because the horizon ran out; the
    /// value of `next_state` is still meaningful for bootstrapping.
    pub truncated: bool,
}

impl Transition {
    /// Whether the learner should bootstrap from `next_state`.
    pub fn bootstrap(&self) -> bool {
        !self.done || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    Prop1(MultiModalBandit),
    Ridge(CorrelatedBandit),
    PointMass(PointMass),
}

impl Env {
    pub const NAMES: [&'static str; 3] = ["bandit_prop1", "bandit_ridge2d", "pointmass"];

    /// Builds an environment with default parameters from its config name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bandit_prop1" => Ok(Env::Prop1(MultiModalBandit::default())),
            "bandit_ridge2d" => Ok(Env::Ridge(CorrelatedBandit::default())),
            "pointmass" => Ok(Env::PointMass(PointMass::default())),
            other => Err(Error::invalid(format!(
                "unknown env `{other}` (expected one of {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::Prop1(_) => "bandit_prop1",
            Env::Ridge(_) => "bandit_ridge2d",
            Env::PointMass(_) => "pointmass",
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::Prop1(b) => b.spec(),
            Env::Ridge(b) => b.spec(),
            Env::PointMass(p) => p.spec(),
        }
    }

    pub fn is_bandit(&self) -> bool {
        !matches!(self, Env::PointMass(_))
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        match self {
            Env::Prop1(_) | Env::Ridge(_) => EnvState { obs: vec![1.0], t: 0 },
            Env::PointMass(p) => p.reset(rng),
        }
    }

    /// Advances one step. The action is clipped to the action box first.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<(Transition, EnvState)> {
        let spec = self.spec();
        if action.len() != spec.action_dim {
            return Err(Error::ShapeMismatch {
                op: "env_step",
                expected: vec![spec.action_dim],
                actual: vec![action.len()],
            });
        }
        if let Some(a) = action.iter().find(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("action component {a}")));
        }
        if state.obs.len() != spec.state_dim {
            return Err(Error::ShapeMismatch {
                op: "env_step",
                expected: vec![spec.state_dim],
                actual: vec![state.obs.len()],
            });
        }
        let action = spec.clip(action);
        match self {
            Env::Prop1(b) => {
                let r = b.reward(action[0]);
                Ok(bandit_transition(state, action, r))
            }
            Env::Ridge(b) => {
                let r = b.reward(&action)?;
                Ok(bandit_transition(state, action, r))
            }
            Env::PointMass(p) => p.step(state, &action),
        }
    }
}

fn bandit_transition(state: &EnvState, action: Vec<f64>, reward: f64) -> (Transition, EnvState) {
    let next = EnvState { obs: state.obs.clone(), t: state.t + 1 };
    let tr = Transition {
        state: state.obs.clone(),
        action,
        reward,
        next_state: next.obs.clone(),
        done: true,
        truncated: false,
    };
    (tr, next)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn names_round_trip() {
        for name in Env::NAMES {
            let env = Env::by_name(name).unwrap();
            assert_eq!(env.name(), name);
            env.spec().validate().unwrap();
        }
        assert!(Env::by_name("cartpole").is_err());
    }

    #[test]
    fn bandit_step_is_terminal() {
        let env = Env::by_name("bandit_prop1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.reset(&mut rng);
        let (tr, _) = env.step(&s, &[4.0]).unwrap();
        assert!(tr.done && !tr.bootstrap());
        assert!((tr.reward - 0.8).abs() < 1e-12);
    }

    #[test]
    fn step_clips_and_rejects_nan() {
        let env = Env::by_name("bandit_prop1").unwrap();
        let s = EnvState { obs: vec![1.0], t: 0 };
        let (tr, _) = env.step(&s, &[100.0]).unwrap();
        assert_eq!(tr.action, vec![8.0]);
        assert!(matches!(env.step(&s, &[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn unit_box_maps_round_trip() {
        let spec = Env::by_name("bandit_prop1").unwrap().spec().clone();
        assert_eq!(spec.from_unit(&[-1.0]), vec![-4.0]);
        assert_eq!(spec.from_unit(&[1.0]), vec![8.0]);
        let a = spec.to_unit(&[3.3]);
        assert!((spec.from_unit(&a)[0] - 3.3).abs() < 1e-12);
    }
}
