use crate::envs::Env;
use crate::error::{Error, Result};

/// Largest `n_states · n_actions` that [`discretize`] will build.
pub const MAX_TABULAR_ENTRIES: usize = 4_000_000;

/// Explicit finite MDP. Transitions are lists of `(next_state, probability)`;
/// an empty list marks a terminal step.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Row-major `[state][action]`.
    pub rewards: Vec<f64>,
    pub transitions: Vec<Vec<(usize, f64)>>,
    /// Continuous action represented by each discrete action.
    pub actions: Vec<Vec<f64>>,
    /// Continuous observation represented by each discrete state.
    pub states: Vec<Vec<f64>>,
}

impl DiscreteMdp {
    /// Builds a one-state bandit with the given arm rewards.
    pub fn bandit(rewards: Vec<f64>, gamma: f64) -> Result<Self> {
        let n = rewards.len();
        let mdp = Self {
            n_states: 1,
            n_actions: n,
            gamma,
            rewards,
            transitions: vec![Vec::new(); n],
            actions: (0..n).map(|a| vec![a as f64]).collect(),
            states: vec![vec![1.0]],
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states * self.n_actions;
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::invalid("mdp needs at least one state and one action"));
        }
        if self.rewards.len() != n || self.transitions.len() != n {
            return Err(Error::ShapeMismatch {
                op: "discrete_mdp",
                expected: vec![n, n],
                actual: vec![self.rewards.len(), self.transitions.len()],
            });
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.iter().any(|&(s, p)| s >= self.n_states || !(p >= 0.0)) {
                return Err(Error::invalid(format!("bad transition row {i}")));
            }
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if !row.is_empty() && (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {i} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// `E_{s′}[v(s′)]` after taking `a` in `s`; zero for terminal steps.
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transitions(s, a).iter().map(|&(n, p)| p * v[n]).sum()
    }

    /// One-step lookahead `r + γ E v(s′)` for every state-action pair.
    pub fn q_from_v(&self, v: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                q[s * self.n_actions + a] = self.reward(s, a) + self.gamma * self.expected_next(s, a, v);
            }
        }
        q
    }
}

/// Discretizes the action box into `bins` centers per dimension.
pub fn discretize(env: &Env, bins: usize) -> Result<DiscreteMdp> {
    let spec = env.spec();
    discretize_range(env, bins, &spec.action_low, &spec.action_high)
}

/// As [`discretize`], with bin centers spread over `[low, high]` instead of
/// the full action box: center `j` of `b` is `low + (j + ½)(high − low)/b`.
///
/// Bandits become one-state MDPs. The point mass becomes a grid world whose
/// cells are spaced `max_speed·dt` apart around the goal, just wide enough to
/// hold the start square; next positions are snapped to the nearest cell and
/// the horizon is dropped in favour of infinite discounting.
pub fn discretize_range(env: &Env, bins: usize, low: &[f64], high: &[f64]) -> Result<DiscreteMdp> {
    let spec = env.spec();
    if bins == 0 {
        return Err(Error::invalid("bins must be at least 1"));
    }
    if low.len() != spec.action_dim || high.len() != spec.action_dim {
        return Err(Error::invalid("discretization range does not match action_dim"));
    }
    if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
        return Err(Error::invalid("discretization range is empty"));
    }
    let n_actions = bins
        .checked_pow(spec.action_dim as u32)
        .filter(|&n| n <= MAX_TABULAR_ENTRIES)
        .ok_or_else(|| Error::invalid(format!("{bins}^{} actions is not enumerable", spec.action_dim)))?;
    let actions: Vec<Vec<f64>> = (0..n_actions)
        .map(|mut idx| {
            (0..spec.action_dim)
                .map(|d| {
                    let j = idx % bins;
                    idx /= bins;
                    low[d] + (j as f64 + 0.5) * (high[d] - low[d]) / bins as f64
                })
                .collect()
        })
        .collect();

    match env {
        Env::Prop1(b) => {
            let rewards = actions.iter().map(|a| b.reward(a[0])).collect();
            bandit_mdp(rewards, actions, spec.gamma)
        }
        Env::Ridge(b) => {
            let rewards = actions
                .iter()
                .map(|a| b.reward(&spec.clip(a)))
                .collect::<Result<Vec<_>>>()?;
            bandit_mdp(rewards, actions, spec.gamma)
        }
        Env::PointMass(p) => {
            let step = spec.action_high[0] * p.dt;
            let half = (p.start_half_width / step).ceil() as usize;
            let side = 2 * half + 1;
            let n_states = side * side;
            if n_states.saturating_mul(n_actions) > MAX_TABULAR_ENTRIES {
                return Err(Error::invalid(format!(
                    "{n_states} grid states × {n_actions} actions is not enumerable"
                )));
            }
            let coord = |i: usize, d: usize| p.goal[d] + (i as f64 - half as f64) * step;
            let snap = |x: f64, d: usize| {
                let i = ((x - p.goal[d]) / step + half as f64).round();
                i.clamp(0.0, (side - 1) as f64) as usize
            };
            let states: Vec<Vec<f64>> = (0..n_states)
                .map(|s| vec![coord(s % side, 0), coord(s / side, 1)])
                .collect();
            let mut rewards = Vec::with_capacity(n_states * n_actions);
            let mut transitions = Vec::with_capacity(n_states * n_actions);
            for pos in &states {
                for a in &actions {
                    let (next, _) = p.dynamics(pos, &spec.clip(a));
                    let (ix, iy) = (snap(next[0], 0), snap(next[1], 1));
                    let snapped = [coord(ix, 0), coord(iy, 1)];
                    rewards.push(p.reward_at(&snapped));
                    transitions.push(vec![(iy * side + ix, 1.0)]);
                }
            }
            let mdp = DiscreteMdp {
                n_states,
                n_actions,
                gamma: spec.gamma,
                rewards,
                transitions,
                actions,
                states,
            };
            mdp.validate()?;
            Ok(mdp)
        }
    }
}

fn bandit_mdp(rewards: Vec<f64>, actions: Vec<Vec<f64>>, gamma: f64) -> Result<DiscreteMdp> {
    let mut mdp = DiscreteMdp::bandit(rewards, gamma)?;
    mdp.actions = actions;
    Ok(mdp)
}
