use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::gac::Batch;
use crate::numerics::{clip_grad_norm, copy_params, polyak_update, Activation, Adam, Checkpoint, Mlp, Module, Tape, Tensor};
use crate::quantile::{Actor, ActorConfig, ActorKind, QuantileBatch};
use crate::targets::{concat_cols, sample_candidate_actions, weight_batch, TargetKind};

/// Learner hyperparameters. Actions live in the unit box `[-1, 1]^n`; the
/// exploration scale is a fraction of each action range.
#[derive(Clone, Debug, PartialEq)]
pub struct GacConfig {
    pub actor: ActorConfig,
    pub critic_hidden: Vec<usize>,
    pub batch_size: usize,
    /// Candidates per state in the actor update (half uniform, half policy).
    pub candidates: usize,
    /// Delayed-actor samples per state in the value target.
    pub value_samples: usize,
    pub polyak: f64,
    pub exploration_std: f64,
    pub buffer_capacity: usize,
    pub critic_lr: f64,
    pub value_lr: f64,
    pub actor_lr: f64,
    pub actor_grad_clip: Option<f64>,
    /// Uniform-random steps before learning starts.
    pub warmup: usize,
    pub target: TargetKind,
    pub kappa: f64,
    pub gamma: f64,
}

impl GacConfig {
    pub fn new(kind: ActorKind, spec: &EnvSpec) -> Self {
        Self {
            actor: ActorConfig::new(kind, spec.state_dim, spec.action_dim),
            critic_hidden: vec![64, 64],
            batch_size: 128,
            candidates: 64,
            value_samples: 64,
            polyak: 0.005,
            exploration_std: 0.1,
            buffer_capacity: 100_000,
            critic_lr: 1e-3,
            value_lr: 1e-3,
            actor_lr: 1e-4,
            actor_grad_clip: None,
            warmup: 1000,
            target: TargetKind::Linear,
            kappa: crate::quantile::HUBER_KAPPA,
            gamma: spec.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.actor.validate()?;
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return Err(Error::invalid("critic hidden widths must be non-empty and positive"));
        }
        if self.batch_size == 0 || self.value_samples == 0 || self.buffer_capacity == 0 {
            return Err(Error::invalid("batch size, value samples and buffer capacity must be positive"));
        }
        if self.candidates < 2 || !self.candidates.is_multiple_of(2) {
            return Err(Error::invalid(format!("candidate count {} must be even and at least 2", self.candidates)));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::invalid(format!("polyak rate {} outside (0, 1]", self.polyak)));
        }
        if !(self.exploration_std >= 0.0 && self.exploration_std.is_finite()) {
            return Err(Error::invalid(format!("exploration std {}", self.exploration_std)));
        }
        for (name, lr) in [("critic_lr", self.critic_lr), ("value_lr", self.value_lr), ("actor_lr", self.actor_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} {lr} must be positive")));
            }
        }
        if let Some(c) = self.actor_grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("gradient clip {c} must be positive")));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid(format!("huber threshold {} is negative", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }

    pub fn header_entries(&self) -> Vec<(String, String)> {
        let mut out = self.actor.header_entries("actor");
        let hidden: Vec<String> = self.critic_hidden.iter().map(usize::to_string).collect();
        out.push(("critic_hidden".into(), hidden.join(",")));
        out.push(("batch_size".into(), self.batch_size.to_string()));
        out.push(("candidates".into(), self.candidates.to_string()));
        out.push(("value_samples".into(), self.value_samples.to_string()));
        out.push(("polyak".into(), self.polyak.to_string()));
        out.push(("target".into(), self.target.to_string()));
        out.push(("kappa".into(), self.kappa.to_string()));
        out.push(("gamma".into(), self.gamma.to_string()));
        out
    }
}

/// Losses of one learning step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub critic: f64,
    pub value: f64,
    pub actor: f64,
}

/// Actor, twin critics on `[s, a]`, state-value network, and a delayed copy
/// of each.
#[derive(Clone, Debug)]
pub struct GacAgent {
    config: GacConfig,
    actor: Actor,
    actor_delayed: Actor,
    critics: [Mlp; 2],
    critics_delayed: [Mlp; 2],
    value: Mlp,
    value_delayed: Mlp,
    opt_actor: Adam,
    opt_critics: [Adam; 2],
    opt_value: Adam,
}

impl GacAgent {
    pub fn new<R: Rng + ?Sized>(config: GacConfig, actor_rng: &mut R, critic_rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = Actor::new(config.actor.clone(), actor_rng)?;
        let (sd, ad) = (config.actor.state_dim, config.actor.action_dim);
        let q1 = Mlp::with_hidden(sd + ad, &config.critic_hidden, 1, Activation::Relu, critic_rng)?;
        let q2 = Mlp::with_hidden(sd + ad, &config.critic_hidden, 1, Activation::Relu, critic_rng)?;
        let value = Mlp::with_hidden(sd, &config.critic_hidden, 1, Activation::Relu, critic_rng)?;
        Ok(Self {
            actor_delayed: actor.clone(),
            critics_delayed: [q1.clone(), q2.clone()],
            value_delayed: value.clone(),
            actor,
            critics: [q1, q2],
            value,
            opt_actor: Adam::new(config.actor_lr),
            opt_critics: [Adam::new(config.critic_lr), Adam::new(config.critic_lr)],
            opt_value: Adam::new(config.value_lr),
            config,
        })
    }

    pub fn config(&self) -> &GacConfig {
        &self.config
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Actor {
        &mut self.actor
    }

    pub fn actor_delayed(&self) -> &Actor {
        &self.actor_delayed
    }

    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }

    pub fn critics_delayed(&self) -> &[Mlp; 2] {
        &self.critics_delayed
    }

    pub fn critics_delayed_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.critics_delayed
    }

    pub fn value(&self) -> &Mlp {
        &self.value
    }

    pub fn value_delayed(&self) -> &Mlp {
        &self.value_delayed
    }

    pub fn value_delayed_mut(&mut self) -> &mut Mlp {
        &mut self.value_delayed
    }

    pub fn actor_delayed_mut(&mut self) -> &mut Actor {
        &mut self.actor_delayed
    }

    /// Makes every delayed network an exact copy of its live network.
    pub fn sync_delayed(&mut self) -> Result<()> {
        copy_params(&mut self.actor_delayed, &self.actor)?;
        for i in 0..2 {
            copy_params(&mut self.critics_delayed[i], &self.critics[i])?;
        }
        copy_params(&mut self.value_delayed, &self.value)
    }

    fn action_dim(&self) -> usize {
        self.config.actor.action_dim
    }

    /// Policy sample in the unit box with a fresh τ, no noise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let tau: Vec<f64> = (0..self.action_dim()).map(|_| rng.random::<f64>()).collect();
        let a = self.actor.sample_action(state, &tau)?;
        Ok(a.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect())
    }

    /// `clip(π(τ|s) + ε)` in the unit box, `ε ~ N(0, σ²)` per dimension with
    /// σ = `exploration_std` times the unit range of 2.
    pub fn act_explore<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let tau: Vec<f64> = (0..self.action_dim()).map(|_| rng.random::<f64>()).collect();
        let a = self.actor.sample_action(state, &tau)?;
        let sigma = 2.0 * self.config.exploration_std;
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(a.into_iter()
            .map(|x| (x + if sigma > 0.0 { noise.sample(rng) } else { 0.0 }).clamp(-1.0, 1.0))
            .collect())
    }

    /// Both critics regress to `r + γ v′(s′)` (`r` alone where the batch
    /// does not bootstrap). Returns the mean of the two losses.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.critic_targets(batch)?;
        let sa = concat_cols(&batch.states, &batch.actions)?;
        let mut total = 0.0;
        for (q, opt) in self.critics.iter_mut().zip(&mut self.opt_critics) {
            total += regress(q, opt, &sa, &targets)?;
        }
        Ok(0.5 * total)
    }

    pub fn critic_targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let n = batch.rewards.len();
        if n == 0 {
            return Err(Error::invalid("critic update on an empty batch"));
        }
        let next_v = self.value_delayed.forward(&batch.next_states)?;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                let boot = if batch.bootstrap[i] { self.config.gamma * next_v.data()[i] } else { 0.0 };
                batch.rewards[i] + boot
            })
            .collect();
        if let Some(y) = targets.iter().find(|y| !y.is_finite()) {
            return Err(Error::NonFinite(format!("critic target {y}")));
        }
        Ok(targets)
    }

    /// `y_v = min_i (1/K) Σ_j Q′ᵢ(s, ãⱼ)`, `ãⱼ` from the delayed actor; `v`
    /// regresses to `y_v`.
    pub fn value_update<R: Rng + ?Sized>(&mut self, states: &Tensor, rng: &mut R) -> Result<f64> {
        let targets = self.value_targets(states, rng)?;
        regress(&mut self.value, &mut self.opt_value, states, &targets)
    }

    pub fn value_targets<R: Rng + ?Sized>(&self, states: &Tensor, rng: &mut R) -> Result<Vec<f64>> {
        let (m, k, n) = (states.rows(), self.config.value_samples, self.action_dim());
        let rows: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let taus: Vec<f64> = (0..m * k * n).map(|_| rng.random::<f64>()).collect();
        let actions: Vec<f64> = self
            .actor_delayed
            .sample(states, &rows, &taus)?
            .into_iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect();
        let sa = concat_rows(states, &rows, &actions, n)?;
        let q: Vec<Tensor> = self.critics_delayed.iter().map(|c| c.forward(&sa)).collect::<Result<_>>()?;
        Ok((0..m)
            .map(|i| {
                let mean = |t: &Tensor| t.data()[i * k..(i + 1) * k].iter().sum::<f64>() / k as f64;
                mean(&q[0]).min(mean(&q[1]))
            })
            .collect())
    }

    /// Candidate actions, delayed-network advantages, target weights, and one
    /// Adam step on the weighted quantile loss. Only the actor changes.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, states: &Tensor, rng: &mut R) -> Result<f64> {
        let (m, k, n) = (states.rows(), self.config.candidates, self.action_dim());
        let low = vec![-1.0; n];
        let high = vec![1.0; n];
        let candidates = sample_candidate_actions(&self.actor_delayed, states, k, &low, &high, rng)?;
        let weights = self.candidate_weights(states, &candidates)?;
        let rows: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let taus: Vec<f64> = (0..m * k * n).map(|_| rng.random::<f64>()).collect();
        let batch = QuantileBatch {
            states,
            rows: &rows,
            actions: &candidates,
            taus: &taus,
            weights: &weights,
        };
        self.actor.zero_grad();
        let loss = self.actor.accumulate_quantile_grads(&batch, self.config.kappa)?;
        if let Some(c) = self.config.actor_grad_clip {
            clip_grad_norm(self.actor.params_mut(), c);
        }
        self.opt_actor.step_module(&mut self.actor)?;
        self.actor.zero_grad();
        self.actor.check_finite()?;
        Ok(loss)
    }

    /// Per-state target weights over `k` candidates, each state's block
    /// summing to `1/m`.
    pub fn candidate_weights(&self, states: &Tensor, candidates: &[f64]) -> Result<Vec<f64>> {
        let (m, k, n) = (states.rows(), self.config.candidates, self.action_dim());
        let rows: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let sa = concat_rows(states, &rows, candidates, n)?;
        let q1 = self.critics_delayed[0].forward(&sa)?;
        let q2 = self.critics_delayed[1].forward(&sa)?;
        let v = self.value_delayed.forward(states)?;
        let mut weights = Vec::with_capacity(m * k);
        for i in 0..m {
            let adv: Vec<f64> = (i * k..(i + 1) * k)
                .map(|j| q1.data()[j].min(q2.data()[j]) - v.data()[i])
                .collect();
            if let Some(a) = adv.iter().find(|a| !a.is_finite()) {
                return Err(Error::NonFinite(format!("advantage {a}")));
            }
            weights.extend(weight_batch(self.config.target, &adv)?.into_iter().map(|w| w / m as f64));
        }
        Ok(weights)
    }

    /// Polyak averaging of all four delayed networks.
    pub fn polyak_update(&mut self) -> Result<()> {
        let rate = self.config.polyak;
        polyak_update(&mut self.actor_delayed, &self.actor, rate)?;
        for i in 0..2 {
            polyak_update(&mut self.critics_delayed[i], &self.critics[i], rate)?;
        }
        polyak_update(&mut self.value_delayed, &self.value, rate)
    }

    /// Critics, value, actor, then Polyak averaging.
    pub fn learn<R: Rng + ?Sized>(&mut self, batch: &Batch, value_rng: &mut R, candidate_rng: &mut R) -> Result<StepLosses> {
        let critic = self.critic_update(batch)?;
        let value = self.value_update(&batch.states, value_rng)?;
        let actor = self.actor_update(&batch.states, candidate_rng)?;
        self.polyak_update()?;
        Ok(StepLosses { critic, value, actor })
    }

    const NETS: [&'static str; 8] = ["actor", "actor_delayed", "q1", "q2", "q1_delayed", "q2_delayed", "value", "value_delayed"];

    /// Parameters and optimizer state of every network.
    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        for (k, v) in self.config.header_entries() {
            ck.set_header(k, v);
        }
        ck.push_module(Self::NETS[0], &self.actor);
        ck.push_module(Self::NETS[1], &self.actor_delayed);
        ck.push_module(Self::NETS[2], &self.critics[0]);
        ck.push_module(Self::NETS[3], &self.critics[1]);
        ck.push_module(Self::NETS[4], &self.critics_delayed[0]);
        ck.push_module(Self::NETS[5], &self.critics_delayed[1]);
        ck.push_module(Self::NETS[6], &self.value);
        ck.push_module(Self::NETS[7], &self.value_delayed);
        ck.push_adam("actor", &self.opt_actor);
        ck.push_adam("q1", &self.opt_critics[0]);
        ck.push_adam("q2", &self.opt_critics[1]);
        ck.push_adam("value", &self.opt_value);
    }

    /// Restores an agent built with the same configuration.
    pub fn read_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        for (k, v) in self.config.header_entries() {
            if let Some(found) = ck.header_value(&k) {
                if found != v {
                    return Err(Error::Checkpoint(format!("`{k}` is `{found}`, agent has `{v}`")));
                }
            }
        }
        ck.load_module(Self::NETS[0], &mut self.actor)?;
        ck.load_module(Self::NETS[1], &mut self.actor_delayed)?;
        ck.load_module(Self::NETS[2], &mut self.critics[0])?;
        ck.load_module(Self::NETS[3], &mut self.critics[1])?;
        ck.load_module(Self::NETS[4], &mut self.critics_delayed[0])?;
        ck.load_module(Self::NETS[5], &mut self.critics_delayed[1])?;
        ck.load_module(Self::NETS[6], &mut self.value)?;
        ck.load_module(Self::NETS[7], &mut self.value_delayed)?;
        ck.load_adam("actor", &mut self.opt_actor)?;
        ck.load_adam("q1", &mut self.opt_critics[0])?;
        ck.load_adam("q2", &mut self.opt_critics[1])?;
        ck.load_adam("value", &mut self.opt_value)
    }
}

/// One Adam step on the mean squared error of a scalar-output network.
fn regress(net: &mut Mlp, opt: &mut Adam, x: &Tensor, targets: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let xv = tape.input(x);
    let pred = net.forward_vars(&mut tape, &vars, xv);
    let loss = tape.mse(pred, targets);
    tape.check()?;
    let grads = tape.backward(loss)?;
    net.zero_grad();
    net.accumulate_grads(&grads, &vars)?;
    opt.step_module(net)?;
    net.zero_grad();
    net.check_finite()?;
    Ok(tape.scalar(loss))
}

/// `[states[rows[j]], actions[j]]` for every `j`.
fn concat_rows(states: &Tensor, rows: &[usize], actions: &[f64], n: usize) -> Result<Tensor> {
    let sd = states.cols();
    let mut data = Vec::with_capacity(rows.len() * (sd + n));
    for (j, &r) in rows.iter().enumerate() {
        data.extend_from_slice(states.row(r));
        data.extend_from_slice(&actions[j * n..(j + 1) * n]);
    }
    Tensor::matrix(rows.len(), sd + n, data)
}
