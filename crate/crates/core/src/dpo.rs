//! Tabular three-timescale distributional policy optimization.
//!
//! Each iteration moves the policy π toward a target distribution built from
//! the advantages of the delayed policy π′, evaluates π′ with a tabular
//! critic (Q, v), and drags π′ toward π:
//!
//! ```text
//! π  ← (1 − α_k) π + α_k D(Q − v)
//! Q  ← Q + β_k (r + γ E v(s′) − Q)
//! v  ← v + β_k Σ_a π′(a) (Q(s, a) − v(s))
//! π′ ← π′ + δ_k (π − π′)
//! ```
//!
//! The updates are applied in this order and each one sees the tables
//! already updated earlier in the same iteration.

use std::fmt;

use crate::envs::DiscreteMdp;
use crate::error::{Error, Result};
use crate::targets::{weight_batch, TargetKind};

/// Step-size sequence indexed from `k = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    /// `scale / (1 + k)^exponent`.
    Power { scale: f64, exponent: f64 },
    Constant(f64),
    /// Explicit values; running past the end is an error.
    Table(Vec<f64>),
}

impl Schedule {
    pub fn power(exponent: f64) -> Self {
        Schedule::Power { scale: 1.0, exponent }
    }

    pub fn at(&self, k: usize) -> Result<f64> {
        match self {
            Schedule::Power { scale, exponent } => Ok(scale / (1.0 + k as f64).powf(*exponent)),
            Schedule::Constant(c) => Ok(*c),
            Schedule::Table(t) => t.get(k).copied().ok_or_else(|| {
                Error::invalid(format!("schedule exhausted at k = {k} (length {})", t.len()))
            }),
        }
    }

    /// `Σ x_k = ∞` and `Σ x_k² < ∞`. Only power schedules with
    /// `0.5 < exponent ≤ 1` and positive scale qualify.
    pub fn robbins_monro(&self) -> bool {
        match self {
            Schedule::Power { scale, exponent } => *scale > 0.0 && *exponent > 0.5 && *exponent <= 1.0,
            _ => false,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Power { scale, exponent } => write!(f, "{scale}/(1+k)^{exponent}"),
            Schedule::Constant(c) => write!(f, "{c}"),
            Schedule::Table(t) => write!(f, "table[{}]", t.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub alpha: Schedule,
    pub beta: Schedule,
    pub delta: Schedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            alpha: Schedule::power(0.6),
            beta: Schedule::power(0.75),
            delta: Schedule::power(0.9),
        }
    }
}

/// Which step-size assumptions a schedule triple satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleReport {
    pub robbins_monro: [bool; 3],
    /// `α_k/β_k` and `β_k/δ_k` both non-decreasing without bound, i.e. the
    /// policy runs fastest and the delayed policy slowest.
    pub policy_fastest: bool,
}

impl Schedules {
    pub fn report(&self) -> ScheduleReport {
        let robbins_monro = [
            self.alpha.robbins_monro(),
            self.beta.robbins_monro(),
            self.delta.robbins_monro(),
        ];
        let policy_fastest = match (&self.alpha, &self.beta, &self.delta) {
            (
                Schedule::Power { exponent: a, .. },
                Schedule::Power { exponent: b, .. },
                Schedule::Power { exponent: d, .. },
            ) => a < b && b < d,
            _ => false,
        };
        ScheduleReport { robbins_monro, policy_fastest }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueUpdate {
    /// `v ← v + β Σ_a π′(a)(Q − v)`: evaluation of the delayed policy.
    DelayedWeighted,
    /// `v ← v + β mean_a (Q − v)`: the unweighted integral over actions,
    /// normalized by the action count.
    Unweighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpoConfig {
    pub target: TargetKind,
    pub schedules: Schedules,
    pub value_update: ValueUpdate,
    /// Replace the Q/v updates by exact evaluation of π′ each iteration.
    pub exact_critic: bool,
}

impl DpoConfig {
    pub fn new(target: TargetKind) -> Self {
        Self {
            target,
            schedules: Schedules::default(),
            value_update: ValueUpdate::DelayedWeighted,
            exact_critic: false,
        }
    }
}

/// Tables of the tabular iteration; rows are states.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularState {
    pub n_states: usize,
    pub n_actions: usize,
    pub pi: Vec<f64>,
    pub pi_delayed: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub k: usize,
}

impl TabularState {
    /// Uniform policies, zero critic.
    pub fn new(mdp: &DiscreteMdp) -> Self {
        let (s, a) = (mdp.n_states, mdp.n_actions);
        let u = 1.0 / a as f64;
        Self {
            n_states: s,
            n_actions: a,
            pi: vec![u; s * a],
            pi_delayed: vec![u; s * a],
            q: vec![0.0; s * a],
            v: vec![0.0; s],
            k: 0,
        }
    }

    pub fn pi_row(&self, s: usize) -> &[f64] {
        &self.pi[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn delayed_row(&self, s: usize) -> &[f64] {
        &self.pi_delayed[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn check_against(&self, mdp: &DiscreteMdp) -> Result<()> {
        let (s, a) = (mdp.n_states, mdp.n_actions);
        if self.n_states != s
            || self.n_actions != a
            || self.pi.len() != s * a
            || self.pi_delayed.len() != s * a
            || self.q.len() != s * a
            || self.v.len() != s
        {
            return Err(Error::ShapeMismatch {
                op: "dpo_step",
                expected: vec![s, a],
                actual: vec![self.n_states, self.n_actions],
            });
        }
        for (name, table) in [("pi", &self.pi), ("pi_delayed", &self.pi_delayed)] {
            for (st, row) in table.chunks_exact(a).enumerate() {
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("{name} row {st} is not a distribution")));
                }
            }
        }
        Ok(())
    }
}

/// One iteration of the three-timescale update.
pub fn dpo_step(state: &mut TabularState, mdp: &DiscreteMdp, config: &DpoConfig) -> Result<()> {
    state.check_against(mdp)?;
    let k = state.k;
    let alpha = config.schedules.alpha.at(k)?;
    let beta = config.schedules.beta.at(k)?;
    let delta = config.schedules.delta.at(k)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);

    if config.exact_critic {
        state.v = evaluate_policy(mdp, &state.pi_delayed)?;
        state.q = mdp.q_from_v(&state.v);
    }

    let mut adv = vec![0.0; na];
    for s in 0..ns {
        for a in 0..na {
            adv[a] = state.q[s * na + a] - state.v[s];
        }
        let d = weight_batch(config.target, &adv)?;
        for (p, t) in state.pi[s * na..(s + 1) * na].iter_mut().zip(&d) {
            *p = (1.0 - alpha) * *p + alpha * t;
        }
    }

    if !config.exact_critic {
        let q_target = mdp.q_from_v(&state.v);
        for (q, t) in state.q.iter_mut().zip(&q_target) {
            *q += beta * (t - *q);
        }
        for s in 0..ns {
            let q = &state.q[s * na..(s + 1) * na];
            let v = state.v[s];
            let step = match config.value_update {
                ValueUpdate::DelayedWeighted => {
                    let w = &state.pi_delayed[s * na..(s + 1) * na];
                    q.iter().zip(w).map(|(q, w)| w * (q - v)).sum::<f64>()
                }
                ValueUpdate::Unweighted => q.iter().map(|q| q - v).sum::<f64>() / na as f64,
            };
            state.v[s] += beta * step;
        }
    }

    for (d, p) in state.pi_delayed.iter_mut().zip(&state.pi) {
        *d += delta * (p - *d);
    }
    for row in state.pi.chunks_exact_mut(na).chain(state.pi_delayed.chunks_exact_mut(na)) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    state.k += 1;
    Ok(())
}

/// `v^π` for a stochastic policy given as `[state][action]` probabilities.
///
/// Solves `(I − γ P_π) v = r_π` directly for up to 1500 states and by
/// fixed-point iteration beyond that.
pub fn evaluate_policy(mdp: &DiscreteMdp, pi: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if pi.len() != ns * na {
        return Err(Error::ShapeMismatch {
            op: "evaluate_policy",
            expected: vec![ns, na],
            actual: vec![pi.len()],
        });
    }
    let mut r_pi = vec![0.0; ns];
    let mut p_pi = vec![0.0; ns * ns];
    for s in 0..ns {
        for a in 0..na {
            let w = pi[s * na + a];
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.reward(s, a);
            for &(n, p) in mdp.transitions(s, a) {
                p_pi[s * ns + n] += w * p;
            }
        }
    }
    if ns <= 1500 {
        let mut m = vec![0.0; ns * ns];
        for i in 0..ns {
            for j in 0..ns {
                m[i * ns + j] = if i == j { 1.0 } else { 0.0 } - mdp.gamma * p_pi[i * ns + j];
            }
        }
        solve_dense(ns, &mut m, &mut r_pi)?;
        return Ok(r_pi);
    }
    let mut v = vec![0.0; ns];
    for _ in 0..1_000_000 {
        let mut diff: f64 = 0.0;
        let next: Vec<f64> = (0..ns)
            .map(|s| r_pi[s] + mdp.gamma * (0..ns).map(|n| p_pi[s * ns + n] * v[n]).sum::<f64>())
            .collect();
        for (a, b) in v.iter().zip(&next) {
            diff = diff.max((a - b).abs());
        }
        v = next;
        if diff < 1e-13 {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence { what: "policy evaluation", iterations: 1_000_000 })
}

/// Gaussian elimination with partial pivoting; the solution replaces `b`.
fn solve_dense(n: usize, m: &mut [f64], b: &mut [f64]) -> Result<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .expect("non-empty range");
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::invalid("singular policy-evaluation system"));
        }
        if pivot != col {
            for j in 0..n {
                m.swap(pivot * n + j, col * n + j);
            }
            b.swap(pivot, col);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= m[col * n + j] * b[j];
        }
        b[col] = acc / m[col * n + col];
    }
    Ok(())
}

/// Optimal values by value iteration and the greedy deterministic policy.
///
/// Iterates until successive sweeps differ by less than
/// `1e-10·(1 − γ)/γ`, which bounds the distance to `v*` by `1e-10`.
pub fn brute_force_optimal(mdp: &DiscreteMdp) -> Result<(Vec<usize>, Vec<f64>)> {
    const CAP: usize = 200_000;
    mdp.validate()?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let tol = if mdp.gamma > 0.0 { 1e-10 * (1.0 - mdp.gamma) / mdp.gamma } else { f64::INFINITY };
    let mut v = vec![0.0; ns];
    let mut iterations = 0;
    loop {
        let q = mdp.q_from_v(&v);
        let next: Vec<f64> = q
            .chunks_exact(na)
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let diff = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if diff <= tol || mdp.gamma == 0.0 {
            break;
        }
        if iterations >= CAP {
            return Err(Error::NonConvergence { what: "value iteration", iterations });
        }
    }
    let q = mdp.q_from_v(&v);
    let policy = q
        .chunks_exact(na)
        .map(|row| {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok((policy, v))
}

/// One recorded iteration of a tabular run.
#[derive(Clone, Debug, PartialEq)]
pub struct DpoRecord {
    pub k: usize,
    /// `v^{π′}` per state.
    pub values: Vec<f64>,
    /// `max_s |v^{π′}(s) − v*(s)|`.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpoRun {
    pub records: Vec<DpoRecord>,
    /// First iteration count at which the distance fell within `tol`.
    pub converged_at: Option<usize>,
    pub optimal_values: Vec<f64>,
    pub final_state: TabularState,
}

/// Runs up to `max_iters` iterations from uniform policies, checking the
/// exact value of π′ every `check_every` iterations and stopping once it is
/// within `tol` of `v*` everywhere. Every check is recorded.
pub fn run_dpo(
    mdp: &DiscreteMdp,
    config: &DpoConfig,
    max_iters: usize,
    tol: f64,
    check_every: usize,
) -> Result<DpoRun> {
    let (_, v_star) = brute_force_optimal(mdp)?;
    let mut state = TabularState::new(mdp);
    let mut records = Vec::new();
    let mut converged_at = None;
    let check_every = check_every.max(1);
    let record = |state: &TabularState| -> Result<DpoRecord> {
        let values = evaluate_policy(mdp, &state.pi_delayed)?;
        let distance = values.iter().zip(&v_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(DpoRecord { k: state.k, values, distance })
    };
    records.push(record(&state)?);
    while state.k < max_iters {
        dpo_step(&mut state, mdp, config)?;
        if state.k.is_multiple_of(check_every) || state.k == max_iters {
            let r = record(&state)?;
            let done = r.distance <= tol;
            records.push(r);
            if done {
                converged_at = Some(state.k);
                break;
            }
        }
    }
    Ok(DpoRun { records, converged_at, optimal_values: v_star, final_state: state })
}
