//! Gaussian policy gradient on the multi-modal bandit.
//!
//! With fixed σ the update is `μ ← μ + lr · E_{a∼N(μ,σ²)}[(a − μ) r(a)] / (2σ²)`,
//! estimated from `M` samples per step. Also the uniform random policy used
//! as the floor for control tasks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::{Env, MultiModalBandit};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianPolicy {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
            return Err(Error::invalid(format!("gaussian policy needs finite mu and sigma > 0, got {mu}, {sigma}")));
        }
        Ok(Self { mu, sigma })
    }
}

/// One Monte-Carlo policy-gradient step with `batch` samples. Sampled
/// actions are clipped to the bandit's action box before the reward is read.
/// Returns the gradient estimate that was applied.
pub fn pg_step<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    bandit: &MultiModalBandit,
    batch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::invalid("pg_step needs at least one sample"));
    }
    let (lo, hi) = (bandit.spec().action_low[0], bandit.spec().action_high[0]);
    let sigma = policy.sigma;
    let mut acc = 0.0;
    for _ in 0..batch {
        let z: f64 = rng.sample(StandardNormal);
        let a = policy.mu + sigma * z;
        acc += sigma * z * bandit.reward(a.clamp(lo, hi));
    }
    let grad = acc / batch as f64 / (2.0 * sigma * sigma);
    policy.mu += lr * grad;
    Ok(grad)
}

/// Expected drift `E[(a − μ) r(a)] / (2σ²)` at every grid point, i.e. the
/// mean of the gradient estimate applied by [`pg_step`].
pub fn exact_pg_field(bandit: &MultiModalBandit, grid: &[f64], sigma: f64) -> Result<Vec<f64>> {
    GaussianPolicy::new(0.0, sigma)?;
    grid.iter()
        .map(|&mu| gaussian_expectation(bandit, mu, sigma, |a| a - mu).map(|e| e / (2.0 * sigma * sigma)))
        .collect()
}

/// `E_{a∼N(μ,σ²)}[r(a)]`.
pub fn expected_reward(bandit: &MultiModalBandit, mu: f64, sigma: f64) -> Result<f64> {
    gaussian_expectation(bandit, mu, sigma, |_| 1.0)
}

/// `∫ φ_σ(a − μ) r(a) f(a) da` over `μ ± 8σ`, integrated piecewise between the
/// window edges (where `r` is not smooth) by composite Simpson with panel
/// doubling until successive estimates agree to 1e-13.
fn gaussian_expectation(bandit: &MultiModalBandit, mu: f64, sigma: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (lo, hi) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
    let (m, al) = (bandit.mu0, bandit.alpha);
    let (box_lo, box_hi) = (bandit.spec().action_low[0], bandit.spec().action_high[0]);
    let mut cuts = vec![lo];
    for b in [m - 2.0 * al, m + 2.0 * al, m + 6.0 * al, box_lo, box_hi] {
        if b > lo && b < hi {
            cuts.push(b);
        }
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let g = |a: f64| {
        let z = (a - mu) / sigma;
        norm * (-0.5 * z * z).exp() * bandit.reward(a.clamp(box_lo, box_hi)) * f(a)
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += simpson(&g, w[0], w[1])?;
    }
    Ok(total)
}

/// Composite Simpson on the open interval `(a, b)`: the end points are
/// nudged inward so one-sided limits are used at discontinuities.
fn simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let eps = (b - a) * 1e-15;
    let (a0, b0) = (a + eps, b - eps);
    let rule = |n: usize| {
        let h = (b0 - a0) / n as f64;
        let mut s = g(a0) + g(b0);
        for i in 1..n {
            s += g(a0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let mut n = 64;
    let mut prev = rule(n);
    while n < 1 << 22 {
        n *= 2;
        let next = rule(n);
        if (next - prev).abs() <= 1e-13 * next.abs().max(1e-3) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence { what: "pg field quadrature", iterations: n })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgRunConfig {
    pub mu_init: f64,
    pub sigma: f64,
    pub batch: usize,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgRun {
    pub final_mu: f64,
    pub min_mu: f64,
    pub max_mu: f64,
    /// Expected reward of the final policy.
    pub final_reward: f64,
}

pub fn run_pg<R: Rng + ?Sized>(bandit: &MultiModalBandit, config: &PgRunConfig, rng: &mut R) -> Result<PgRun> {
    let mut policy = GaussianPolicy::new(config.mu_init, config.sigma)?;
    let (mut min_mu, mut max_mu) = (policy.mu, policy.mu);
    for _ in 0..config.steps {
        pg_step(&mut policy, bandit, config.batch, config.lr, rng)?;
        min_mu = min_mu.min(policy.mu);
        max_mu = max_mu.max(policy.mu);
    }
    Ok(PgRun {
        final_mu: policy.mu,
        min_mu,
        max_mu,
        final_reward: expected_reward(bandit, policy.mu, policy.sigma)?,
    })
}

/// Undiscounted returns of `episodes` episodes with actions drawn uniformly
/// from the action box.
pub fn random_policy_returns<R: Rng + ?Sized>(env: &Env, episodes: usize, rng: &mut R) -> Result<Vec<f64>> {
    let spec = env.spec();
    (0..episodes)
        .map(|_| {
            let mut state = env.reset(rng);
            let mut total = 0.0;
            loop {
                let a: Vec<f64> = spec
                    .action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(&l, &h)| rng.random_range(l..=h))
                    .collect();
                let (tr, next) = env.step(&state, &a)?;
                total += tr.reward;
                if tr.done {
                    return Ok(total);
                }
                state = next;
            }
        })
        .collect()
}
