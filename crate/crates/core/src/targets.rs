//! Advantages, the positive-advantage support, and target weightings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Mlp, Tensor};
use crate::quantile::Actor;

/// `min(Q₁(s, a), Q₂(s, a)) − v(s)` row by row. Critics read `[s, a]`.
pub fn advantage(q1: &Mlp, q2: &Mlp, value: &Mlp, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
    if states.rows() != actions.rows() {
        return Err(Error::ShapeMismatch {
            op: "advantage",
            expected: vec![states.rows()],
            actual: vec![actions.rows()],
        });
    }
    let sa = concat_cols(states, actions)?;
    let a = q1.forward(&sa)?;
    let b = q2.forward(&sa)?;
    let v = value.forward(states)?;
    let out: Vec<f64> = (0..states.rows())
        .map(|i| a.data()[i].min(b.data()[i]) - v.data()[i])
        .collect();
    if let Some(x) = out.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("advantage {x}")));
    }
    Ok(out)
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, cb) = (a.cols(), b.cols());
    let mut data = Vec::with_capacity(a.rows() * (ca + cb));
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::matrix(a.rows(), ca + cb, data)
}

/// Target distribution over the positive-advantage actions of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetKind {
    Argmax,
    Linear,
    /// `exp(A/β)` on the support; with `clip`, `min(exp(A/β), clip)`.
    Boltzmann { beta: f64, clip: Option<f64> },
    Uniform,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Argmax => "argmax",
            TargetKind::Linear => "linear",
            TargetKind::Boltzmann { .. } => "boltzmann",
            TargetKind::Uniform => "uniform",
        })
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    /// Parses the kind name; Boltzmann starts with `β = 1` and no clip.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(TargetKind::Argmax),
            "linear" => Ok(TargetKind::Linear),
            "boltzmann" => Ok(TargetKind::Boltzmann { beta: 1.0, clip: None }),
            "uniform" => Ok(TargetKind::Uniform),
            other => Err(Error::invalid(format!(
                "unknown target kind `{other}` (argmax, linear, boltzmann, uniform)"
            ))),
        }
    }
}

/// Weights of one batch together with what produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetWeighting {
    pub kind: TargetKind,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
    /// Number of strictly positive advantages.
    pub support: usize,
    /// True when the support was empty and the argmax one-hot was used.
    pub fallback: bool,
}

impl TargetWeighting {
    pub fn new(kind: TargetKind, advantages: &[f64]) -> Result<Self> {
        let weights = weight_batch(kind, advantages)?;
        let support = advantages.iter().filter(|&&a| a > 0.0).count();
        Ok(Self {
            kind,
            advantages: advantages.to_vec(),
            weights,
            support,
            fallback: support == 0,
        })
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Normalized per-batch weights for the given target kind.
///
/// Weights vanish exactly where the advantage is not positive and sum to one.
/// With no positive advantage, all mass goes to the largest advantage. Ties
/// for argmax resolve to the first index.
pub fn weight_batch(kind: TargetKind, advantages: &[f64]) -> Result<Vec<f64>> {
    if advantages.is_empty() {
        return Err(Error::invalid("weight_batch needs at least one action"));
    }
    if let Some(a) = advantages.iter().find(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("advantage {a}")));
    }
    let n = advantages.len();
    let best = argmax(advantages);
    let one_hot = || {
        let mut w = vec![0.0; n];
        w[best] = 1.0;
        w
    };
    if advantages[best] <= 0.0 {
        return Ok(one_hot());
    }
    let raw: Vec<f64> = match kind {
        TargetKind::Argmax => return Ok(one_hot()),
        TargetKind::Linear => advantages.iter().map(|&a| a.max(0.0)).collect(),
        TargetKind::Uniform => advantages.iter().map(|&a| if a > 0.0 { 1.0 } else { 0.0 }).collect(),
        TargetKind::Boltzmann { beta, clip } => {
            if !(beta > 0.0) {
                return Err(Error::invalid(format!("boltzmann beta {beta} must be positive")));
            }
            match clip {
                Some(c) if !(c > 0.0) => {
                    return Err(Error::invalid(format!("boltzmann clip {c} must be positive")));
                }
                Some(c) => advantages
                    .iter()
                    .map(|&a| if a > 0.0 { (a / beta).exp().min(c) } else { 0.0 })
                    .collect(),
                None => {
                    let top = advantages[best];
                    advantages
                        .iter()
                        .map(|&a| if a > 0.0 { ((a - top) / beta).exp() } else { 0.0 })
                        .collect()
                }
            }
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Candidate actions for every state: per state, `k/2` uniform draws from the
/// box `[low, high]` followed by `k/2` draws from `actor` (fresh τ each),
/// clipped to the box.
///
/// Returns `[states.rows() · k, action_dim]` row-major, state-major.
pub fn sample_candidate_actions<R: Rng + ?Sized>(
    actor: &Actor,
    states: &Tensor,
    k: usize,
    low: &[f64],
    high: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::invalid(format!("candidate count {k} must be even and at least 2")));
    }
    let n = actor.action_dim();
    if low.len() != n || high.len() != n {
        return Err(Error::invalid("candidate bounds do not match action_dim"));
    }
    let half = k / 2;
    let m = states.rows();
    let rows: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, half)).collect();
    let taus: Vec<f64> = (0..m * half * n).map(|_| rng.random::<f64>()).collect();
    let policy = actor.sample(states, &rows, &taus)?;
    let mut out = Vec::with_capacity(m * k * n);
    for i in 0..m {
        for _ in 0..half {
            for d in 0..n {
                out.push(low[d] + (high[d] - low[d]) * rng.random::<f64>());
            }
        }
        for j in 0..half {
            let row = &policy[(i * half + j) * n..(i * half + j + 1) * n];
            out.extend(row.iter().enumerate().map(|(d, a)| a.clamp(low[d], high[d])));
        }
    }
    Ok(out)
}
