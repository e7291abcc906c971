use rand::Rng;

use crate::envs::{EnvSpec, EnvState, Transition};
use crate::error::{Error, Result};

/// 2-D point mass driven by a velocity command.
///
/// `next = pos + clamp(a)·dt`, reward `−‖next − goal‖²`. Episodes start
/// uniformly in the square `goal ± start_half_width` and end after
/// `horizon` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub goal: [f64; 2],
    pub start_half_width: f64,
    spec: EnvSpec,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new(0.1, 50, 0.99, [0.0, 0.0], 0.75, 1.0).expect("default parameters are valid")
    }
}

impl PointMass {
    pub fn new(
        dt: f64,
        horizon: usize,
        gamma: f64,
        goal: [f64; 2],
        start_half_width: f64,
        max_speed: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || !(start_half_width >= 0.0) || !(max_speed > 0.0) {
            return Err(Error::invalid("pointmass needs dt > 0, max_speed > 0, start_half_width >= 0"));
        }
        let spec = EnvSpec {
            state_dim: 2,
            action_dim: 2,
            action_low: vec![-max_speed; 2],
            action_high: vec![max_speed; 2],
            horizon,
            gamma,
        };
        spec.validate()?;
        Ok(Self { dt, goal, start_half_width, spec })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let w = self.start_half_width;
        let obs = self
            .goal
            .iter()
            .map(|g| g + if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 })
            .collect();
        EnvState { obs, t: 0 }
    }

    /// Next position and reward for an action already inside the box.
    pub fn dynamics(&self, pos: &[f64], action: &[f64]) -> ([f64; 2], f64) {
        let next = [pos[0] + action[0] * self.dt, pos[1] + action[1] * self.dt];
        (next, self.reward_at(&next))
    }

    pub fn reward_at(&self, pos: &[f64]) -> f64 {
        let dx = pos[0] - self.goal[0];
        let dy = pos[1] - self.goal[1];
        -(dx * dx + dy * dy)
    }

    pub(crate) fn step(&self, state: &EnvState, action: &[f64]) -> Result<(Transition, EnvState)> {
        if state.t >= self.spec.horizon {
            return Err(Error::invalid(format!("episode already ended at t = {}", state.t)));
        }
        let (next, reward) = self.dynamics(&state.obs, action);
        let t = state.t + 1;
        let done = t >= self.spec.horizon;
        let tr = Transition {
            state: state.obs.clone(),
            action: action.to_vec(),
            reward,
            next_state: next.to_vec(),
            done,
            truncated: done,
        };
        Ok((tr, EnvState { obs: next.to_vec(), t }))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::envs::Env;

    #[test]
    fn hand_dynamics() {
        let env = Env::PointMass(PointMass::default());
        let s = EnvState { obs: vec![1.0, 0.0], t: 0 };
        let (tr, next) = env.step(&s, &[-1.0, 0.0]).unwrap();
        assert!((next.obs[0] - 0.9).abs() < 1e-15 && next.obs[1] == 0.0);
        assert!((tr.reward + 0.81).abs() < 1e-12);
        assert!(!tr.done);
    }

    #[test]
    fn resting_at_goal_costs_nothing() {
        let env = Env::PointMass(PointMass::default());
        let s = EnvState { obs: vec![0.0, 0.0], t: 0 };
        let (tr, _) = env.step(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(tr.reward, 0.0);
    }

    #[test]
    fn action_is_clamped() {
        let env = Env::PointMass(PointMass::default());
        let s = EnvState { obs: vec![0.0, 0.0], t: 0 };
        let (tr, next) = env.step(&s, &[5.0, -5.0]).unwrap();
        assert_eq!(tr.action, vec![1.0, -1.0]);
        assert!((next.obs[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn episode_ends_at_horizon() {
        let env = Env::PointMass(PointMass::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = env.reset(&mut rng);
        for t in 0..50 {
            let (tr, next) = env.step(&s, &[0.0, 0.0]).unwrap();
            assert_eq!(tr.done, t == 49);
            s = next;
        }
        assert!(env.step(&s, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn step_is_pure() {
        let env = Env::PointMass(PointMass::default());
        let s = EnvState { obs: vec![0.3, -0.2], t: 4 };
        let a = env.step(&s, &[0.4, 0.1]).unwrap();
        let b = env.step(&s, &[0.4, 0.1]).unwrap();
        assert_eq!(a, b);
    }
}
