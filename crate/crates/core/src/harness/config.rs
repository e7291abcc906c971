//! Experiment configuration: `key = value` lines, `#` starts a comment.
//!
//! Every key must appear in [`SCHEMA`]; values are checked against the key's
//! type when the file is parsed, so a bad value is reported with its key.
//! Keys left out take the default listed in the schema. `env` has no default.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dpo::{DpoConfig, Schedule, Schedules, ValueUpdate};
use crate::envs::{Env, MultiModalBandit};
use crate::error::{Error, Result};
use crate::gac::{GacConfig, TrainOptions};
use crate::quantile::{ActorKind, FitOptions, TargetDistribution};
use crate::targets::TargetKind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueKind {
    Choice(&'static [&'static str]),
    Usize,
    U64,
    F64,
    Bool,
    /// Comma-separated positive integers.
    UsizeList,
    /// Comma-separated reals.
    F64List,
    /// A real, or the given word meaning "not set".
    F64Or(&'static str),
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: ValueKind,
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

const fn key(key: &'static str, kind: ValueKind, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, kind, default: Some(default), doc }
}

pub const AGENTS: [&str; 5] = ["gac_aiqn", "gac_iqn", "pg_gaussian", "dpo_tabular", "random"];

use ValueKind::*;

pub const SCHEMA: &[KeySpec] = &[
    KeySpec {
        key: "env",
        kind: Choice(&Env::NAMES),
        default: None,
        doc: "environment",
    },
    key("agent", Choice(&AGENTS), "gac_aiqn", "learner"),
    key("seed", U64, "0", "master seed; multi-seed commands use seed, seed+1, ..."),
    key("seeds", Usize, "5", "number of seeds for multi-seed commands"),
    key("steps", Usize, "50000", "environment steps (T)"),
    key("eval_interval", Usize, "5000", "steps between evaluations"),
    key("eval_episodes", Usize, "10", "noise-free episodes per evaluation"),
    key("log_wall_time", Bool, "false", "write elapsed ms into metrics (breaks byte-identical reruns)"),
    key("gamma", F64Or("env"), "env", "discount; `env` keeps the environment's"),
    // learner
    key("critic_hidden", UsizeList, "64,64", "hidden widths of critics and value net"),
    key("actor_features", Usize, "32", "cosine features of the τ embedding"),
    key("actor_width", Usize, "32", "state/τ embedding width"),
    key("actor_hidden", Usize, "32", "actor hidden width"),
    key("actor_recurrent", Usize, "16", "AIQN recurrent width"),
    key("batch_size", Usize, "128", "replay minibatch N"),
    key("candidates", Usize, "64", "candidate actions K per state (even)"),
    key("value_samples", Usize, "64", "delayed-actor samples per state for the value target"),
    key("polyak", F64, "0.005", "delayed-network averaging rate"),
    key("exploration_std", F64, "0.1", "Gaussian exploration std as a fraction of the action range"),
    key("buffer_capacity", Usize, "100000", "replay capacity"),
    key("critic_lr", F64, "0.001", "critic Adam step size"),
    key("value_lr", F64, "0.001", "value Adam step size"),
    key("actor_lr", F64, "0.0001", "actor Adam step size"),
    key("actor_grad_clip", F64Or("none"), "none", "actor gradient norm clip"),
    key("warmup", Usize, "1000", "uniform-random steps before learning"),
    key("target", Choice(&["argmax", "linear", "boltzmann", "uniform"]), "linear", "target weighting"),
    key("boltzmann_beta", F64, "1", "Boltzmann temperature"),
    key("boltzmann_clip", F64Or("none"), "none", "cap on exp(A/β)"),
    key("kappa", F64, "1", "Huber threshold of the quantile loss"),
    // policy-gradient baseline
    key("pg_sigma", F64, "0.05", "fixed Gaussian std"),
    key("pg_batch", Usize, "64", "samples per gradient step (M)"),
    key("pg_lr", F64, "1", "step size"),
    key("pg_mu_init", F64, "0", "initial mean"),
    key("pg_steps", Usize, "100000", "policy-gradient steps in the prop1 comparison"),
    key("drift_sigmas", F64List, "0.02,0.05", "stds at which the drift field is tabulated"),
    key("drift_grid", Usize, "801", "grid points of the drift field"),
    // tabular
    key("bins", Usize, "11", "bins per action dimension"),
    key("dpo_alpha", F64, "0.6", "policy step exponent"),
    key("dpo_beta", F64, "0.75", "delayed policy step exponent"),
    key("dpo_delta", F64, "0.9", "critic step exponent"),
    key("value_update", Choice(&["weighted", "unweighted"]), "weighted", "tabular value update"),
    key("exact_critic", Bool, "false", "replace the critic recursion by exact evaluation"),
    key("max_iters", Usize, "100000", "iteration cap"),
    key("tol", F64, "0.001", "convergence threshold on max |v − v*|"),
    key("check_every", Usize, "1", "iterations between convergence checks (and CSV rows)"),
    // distribution fitting
    key("fit_target", Choice(&["mixture", "ridge", "uniform"]), "mixture", "target distribution"),
    key("fit_actor", Choice(&["iqn", "aiqn", "both"]), "both", "actors to fit"),
    key("fit_steps", Usize, "20000", "gradient steps"),
    key("fit_batch", Usize, "64", "samples per step"),
    key("fit_lr", F64, "0.001", "Adam step size"),
    key("fit_samples", Usize, "10000", "samples per side for distances"),
    key("projections", Usize, "64", "sliced Wasserstein directions"),
    key("ridge_noise", F64, "0.1", "std of a₂ around sin(2a₁)"),
    // gradient check
    key("gradcheck_seeds", Usize, "100", "seeds of the finite-difference suite"),
];

pub fn spec_for(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    let bad = |what: &str| Err(Error::config(spec.key, format!("`{value}` is not {what}")));
    match spec.kind {
        Choice(opts) => {
            if !opts.contains(&value) {
                return bad(&format!("one of {}", opts.join(", ")));
            }
        }
        Usize => {
            if value.parse::<usize>().is_err() {
                return bad("a non-negative integer");
            }
        }
        U64 => {
            if value.parse::<u64>().is_err() {
                return bad("a non-negative integer");
            }
        }
        F64 => {
            if !value.parse::<f64>().is_ok_and(f64::is_finite) {
                return bad("a finite number");
            }
        }
        Bool => {
            if value != "true" && value != "false" {
                return bad("true or false");
            }
        }
        UsizeList => {
            if value.split(',').any(|p| !p.trim().parse::<usize>().is_ok_and(|n| n > 0)) {
                return bad("a comma-separated list of positive integers");
            }
        }
        F64List => {
            if value.split(',').any(|p| !p.trim().parse::<f64>().is_ok_and(f64::is_finite)) {
                return bad("a comma-separated list of numbers");
            }
        }
        F64Or(word) => {
            if value != word && !value.parse::<f64>().is_ok_and(f64::is_finite) {
                return bad(&format!("a number or `{word}`"));
            }
        }
    }
    Ok(())
}

/// A validated set of explicit settings; everything else resolves to the
/// schema default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<&'static str, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {} is not `key = value`", n + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if cfg.values.keys().any(|existing| *existing == k) {
                return Err(Error::config(k, format!("set twice (line {})", n + 1)));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets or overrides one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = spec_for(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        check_value(spec, value)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Explicit value or schema default.
    pub fn get(&self, key: &str) -> Result<&str> {
        let spec = spec_for(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        match self.values.get(key) {
            Some(v) => Ok(v),
            None => spec.default.ok_or_else(|| Error::config(key, "missing required key")),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::config(key, format!("cannot read `{v}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    /// `None` when the key holds its "not set" word.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match spec_for(key).map(|s| s.kind) {
            Some(F64Or(word)) if self.get(key)? == word => Ok(None),
            _ => self.f64(key).map(Some),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)?
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::config(key, format!("cannot read `{p}`"))))
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)?
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::config(key, format!("cannot read `{p}`"))))
            .collect()
    }

    /// Every schema key with its effective value, in schema order. Parsing
    /// the result gives back an equivalent configuration.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for spec in SCHEMA {
            match self.get(spec.key) {
                Ok(v) => writeln!(out, "{} = {}", spec.key, v).expect("string write"),
                Err(_) => writeln!(out, "# {} is not set", spec.key).expect("string write"),
            }
        }
        out
    }

    pub fn env(&self) -> Result<Env> {
        Env::by_name(self.get("env")?).map_err(|e| Error::config("env", e.to_string()))
    }

    pub fn agent(&self) -> Result<&str> {
        self.get("agent")
    }

    pub fn gamma(&self, env: &Env) -> Result<f64> {
        Ok(self.opt_f64("gamma")?.unwrap_or(env.spec().gamma))
    }

    pub fn target_kind(&self) -> Result<TargetKind> {
        Ok(match self.get("target")? {
            "argmax" => TargetKind::Argmax,
            "linear" => TargetKind::Linear,
            "uniform" => TargetKind::Uniform,
            _ => TargetKind::Boltzmann {
                beta: self.f64("boltzmann_beta")?,
                clip: self.opt_f64("boltzmann_clip")?,
            },
        })
    }

    pub fn gac_config(&self, env: &Env, kind: ActorKind) -> Result<GacConfig> {
        let mut c = GacConfig::new(kind, env.spec());
        c.actor.features = self.usize("actor_features")?;
        c.actor.width = self.usize("actor_width")?;
        c.actor.hidden = self.usize("actor_hidden")?;
        c.actor.recurrent = self.usize("actor_recurrent")?;
        c.critic_hidden = self.usize_list("critic_hidden")?;
        c.batch_size = self.usize("batch_size")?;
        c.candidates = self.usize("candidates")?;
        c.value_samples = self.usize("value_samples")?;
        c.polyak = self.f64("polyak")?;
        c.exploration_std = self.f64("exploration_std")?;
        c.buffer_capacity = self.usize("buffer_capacity")?;
        c.critic_lr = self.f64("critic_lr")?;
        c.value_lr = self.f64("value_lr")?;
        c.actor_lr = self.f64("actor_lr")?;
        c.actor_grad_clip = self.opt_f64("actor_grad_clip")?;
        c.warmup = self.usize("warmup")?;
        c.target = self.target_kind()?;
        c.kappa = self.f64("kappa")?;
        c.gamma = self.gamma(env)?;
        c.validate().map_err(|e| Error::config("agent", e.to_string()))?;
        Ok(c)
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let opts = TrainOptions {
            steps: self.usize("steps")?,
            eval_interval: self.usize("eval_interval")?,
            eval_episodes: self.usize("eval_episodes")?,
            log_wall_time: self.bool("log_wall_time")?,
        };
        if opts.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be positive"));
        }
        if opts.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be positive"));
        }
        Ok(opts)
    }

    pub fn dpo_config(&self) -> Result<DpoConfig> {
        let mut c = DpoConfig::new(self.target_kind()?);
        c.schedules = Schedules {
            alpha: Schedule::power(self.f64("dpo_alpha")?),
            beta: Schedule::power(self.f64("dpo_beta")?),
            delta: Schedule::power(self.f64("dpo_delta")?),
        };
        c.value_update = match self.get("value_update")? {
            "unweighted" => ValueUpdate::Unweighted,
            _ => ValueUpdate::DelayedWeighted,
        };
        c.exact_critic = self.bool("exact_critic")?;
        Ok(c)
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        Ok(FitOptions {
            steps: self.usize("fit_steps")?,
            batch: self.usize("fit_batch")?,
            lr: self.f64("fit_lr")?,
            kappa: self.f64("kappa")?,
            grad_clip: None,
        })
    }

    pub fn fit_target(&self) -> Result<TargetDistribution> {
        Ok(match self.get("fit_target")? {
            "mixture" => TargetDistribution::GaussianMixture {
                means: vec![vec![-0.5], vec![0.5]],
                std: 0.05,
            },
            "ridge" => TargetDistribution::Ridge { noise: self.f64("ridge_noise")? },
            _ => TargetDistribution::Uniform { low: vec![-1.0], high: vec![1.0] },
        })
    }

    pub fn fit_actors(&self) -> Result<Vec<ActorKind>> {
        Ok(match self.get("fit_actor")? {
            "iqn" => vec![ActorKind::Iqn],
            "aiqn" => vec![ActorKind::Aiqn],
            _ => vec![ActorKind::Aiqn, ActorKind::Iqn],
        })
    }

    /// The multi-modal bandit, or an error naming `env` for other envs.
    pub fn prop1_bandit(&self) -> Result<MultiModalBandit> {
        match self.env()? {
            Env::Prop1(b) => Ok(b),
            other => Err(Error::config("env", format!("`{}` is not bandit_prop1", other.name()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_env_names_the_key() {
        let cfg = ExperimentConfig::parse("agent = gac_iqn\n").unwrap();
        match cfg.env() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "env"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_with_their_key() {
        for (text, key) in [
            ("env = pointmass\nlearning_rate = 3\n", "learning_rate"),
            ("env = moon\n", "env"),
            ("steps = -4\n", "steps"),
            ("polyak = fast\n", "polyak"),
            ("critic_hidden = 64,0\n", "critic_hidden"),
            ("steps = 1\nsteps = 2\n", "steps"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn comments_blank_lines_and_defaults() {
        let cfg = ExperimentConfig::parse("# run\n\nenv = bandit_prop1   # the bandit\nseed = 7\n").unwrap();
        assert_eq!(cfg.u64("seed").unwrap(), 7);
        assert_eq!(cfg.usize("batch_size").unwrap(), 128);
        assert_eq!(cfg.opt_f64("actor_grad_clip").unwrap(), None);
        assert_eq!(cfg.gamma(&cfg.env().unwrap()).unwrap(), 0.99);
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = ExperimentConfig::parse("env = pointmass\ncandidates = 16\ngamma = 0.9\n").unwrap();
        let text = cfg.resolved_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.resolved_text(), text);
        assert_eq!(back.usize("candidates").unwrap(), 16);
        assert!(text.lines().count() >= SCHEMA.len());
    }

    #[test]
    fn typed_sections_build() {
        let cfg = ExperimentConfig::parse("env = pointmass\ntarget = boltzmann\nboltzmann_clip = 20\n").unwrap();
        let env = cfg.env().unwrap();
        let g = cfg.gac_config(&env, ActorKind::Aiqn).unwrap();
        assert_eq!(g.target, TargetKind::Boltzmann { beta: 1.0, clip: Some(20.0) });
        assert_eq!(g.actor.action_dim, 2);
        assert!(cfg.prop1_bandit().is_err());
        let bad = ExperimentConfig::parse("env = pointmass\ncandidates = 3\n").unwrap();
        assert!(bad.gac_config(&env, ActorKind::Iqn).is_err());
    }

    #[test]
    fn every_default_is_valid() {
        for spec in SCHEMA {
            if let Some(d) = spec.default {
                check_value(spec, d).unwrap();
            }
        }
    }
}
