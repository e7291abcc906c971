use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evalstats::SampleSet;
use crate::numerics::{clip_grad_norm, Adam, Module, Tensor};
use crate::quantile::{Actor, QuantileBatch};

/// Fixed distributions used to exercise actor fitting.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetDistribution {
    PointMass(Vec<f64>),
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Equal-weight mixture of isotropic Gaussians.
    GaussianMixture { means: Vec<Vec<f64>>, std: f64 },
    /// `a₁ ~ U[−1, 1]`, `a₂ = sin(2a₁) + noise·N(0, 1)`.
    Ridge { noise: f64 },
}

impl TargetDistribution {
    pub fn dim(&self) -> usize {
        match self {
            TargetDistribution::PointMass(p) => p.len(),
            TargetDistribution::Uniform { low, .. } => low.len(),
            TargetDistribution::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            TargetDistribution::Ridge { .. } => 2,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            TargetDistribution::PointMass(p) => p.clone(),
            TargetDistribution::Uniform { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            TargetDistribution::GaussianMixture { means, std } => {
                let m = &means[rng.random_range(0..means.len())];
                m.iter().map(|mu| mu + std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
            TargetDistribution::Ridge { noise } => {
                let a1: f64 = rng.random_range(-1.0..=1.0);
                let a2 = (2.0 * a1).sin() + noise * rng.sample::<f64, _>(StandardNormal);
                vec![a1, a2]
            }
        }
    }

    pub fn sample_set<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleSet> {
        let data = (0..n).flat_map(|_| self.sample(rng)).collect();
        SampleSet::from_flat(self.dim(), data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub kappa: f64,
    pub grad_clip: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { steps: 5000, batch: 64, lr: 1e-3, kappa: 0.01, grad_clip: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Mean loss over the final tenth of the steps.
    pub final_loss: f64,
}

/// Trains `actor` by weighted quantile regression on i.i.d. draws from
/// `target`, with a constant all-ones state and uniform weights.
pub fn fit_distribution<R: Rng + ?Sized>(
    actor: &mut Actor,
    target: &TargetDistribution,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitReport> {
    let n = actor.action_dim();
    if target.dim() != n {
        return Err(Error::ShapeMismatch {
            op: "fit_distribution",
            expected: vec![n],
            actual: vec![target.dim()],
        });
    }
    if options.batch == 0 || !(options.lr > 0.0) {
        return Err(Error::invalid("fit needs batch > 0 and lr > 0"));
    }
    let states = Tensor::full(&[1, actor.state_dim()], 1.0);
    let rows = vec![0; options.batch];
    let weights = vec![1.0 / options.batch as f64; options.batch];
    let mut adam = Adam::new(options.lr);
    let tail = (options.steps / 10).max(1);
    let mut tail_loss = 0.0;
    for step in 0..options.steps {
        let actions: Vec<f64> = (0..options.batch).flat_map(|_| target.sample(rng)).collect();
        let taus: Vec<f64> = (0..options.batch * n).map(|_| rng.random::<f64>()).collect();
        let batch = QuantileBatch { states: &states, rows: &rows, actions: &actions, taus: &taus, weights: &weights };
        actor.zero_grad();
        let loss = actor.accumulate_quantile_grads(&batch, options.kappa)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("fit loss at step {step}")));
        }
        if let Some(c) = options.grad_clip {
            clip_grad_norm(actor.params_mut(), c);
        }
        adam.step_module(actor)?;
        if step + tail >= options.steps {
            tail_loss += loss;
        }
    }
    Ok(FitReport { final_loss: tail_loss / tail as f64 })
}

/// Draws `n` free-running samples from `actor` at the all-ones state.
pub fn actor_samples<R: Rng + ?Sized>(actor: &Actor, n: usize, rng: &mut R) -> Result<SampleSet> {
    let d = actor.action_dim();
    let states = Tensor::full(&[1, actor.state_dim()], 1.0);
    let mut out = Vec::with_capacity(n * d);
    let chunk = 1024;
    let mut left = n;
    while left > 0 {
        let m = left.min(chunk);
        let taus: Vec<f64> = (0..m * d).map(|_| rng.random::<f64>()).collect();
        out.extend(actor.sample(&states, &vec![0; m], &taus)?);
        left -= m;
    }
    SampleSet::from_flat(d, out)
}
