use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{Env, EnvState};
use crate::error::{Error, Result};
use crate::evalstats::{mean, std_dev};
use crate::gac::{GacAgent, GacConfig, ReplayBuffer, StepLosses};
use crate::numerics::Checkpoint;
use crate::seed::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Record elapsed milliseconds in metrics rows; otherwise 0, which keeps
    /// the output byte-identical across runs.
    pub log_wall_time: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 50_000,
            eval_interval: 1000,
            eval_episodes: 10,
            log_wall_time: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// Mean losses over the learning steps since the previous row, NaN if
    /// there were none.
    pub critic_loss: f64,
    pub value_loss: f64,
    pub actor_loss: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 7] = [
        "step",
        "eval_return_mean",
        "eval_return_std",
        "critic_loss",
        "value_loss",
        "actor_loss",
        "wall_ms",
    ];

    pub fn fields(&self) -> [String; 7] {
        [
            self.step.to_string(),
            self.eval_return_mean.to_string(),
            self.eval_return_std.to_string(),
            self.critic_loss.to_string(),
            self.value_loss.to_string(),
            self.actor_loss.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Runs the learner against an environment. Every source of randomness has
/// its own stream derived from `seed`.
pub struct Trainer {
    env: Env,
    agent: GacAgent,
    buffer: ReplayBuffer,
    seed: u64,
    state: EnvState,
    steps_done: usize,
    env_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    value_rng: ChaCha8Rng,
    candidate_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(env: Env, config: GacConfig, seed: u64) -> Result<Self> {
        let spec = env.spec();
        if config.actor.state_dim != spec.state_dim || config.actor.action_dim != spec.action_dim {
            return Err(Error::invalid(format!(
                "agent dimensions {}x{} do not match env `{}` ({}x{})",
                config.actor.state_dim,
                config.actor.action_dim,
                env.name(),
                spec.state_dim,
                spec.action_dim
            )));
        }
        let buffer = ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim)?;
        let mut actor_rng = stream_rng(seed, Stream::ActorInit);
        let mut critic_rng = stream_rng(seed, Stream::CriticInit);
        let agent = GacAgent::new(config, &mut actor_rng, &mut critic_rng)?;
        let mut env_rng = stream_rng(seed, Stream::Env);
        let state = env.reset(&mut env_rng);
        Ok(Self {
            env,
            agent,
            buffer,
            seed,
            state,
            steps_done: 0,
            env_rng,
            explore_rng: stream_rng(seed, Stream::Exploration),
            replay_rng: stream_rng(seed, Stream::Replay),
            value_rng: stream_rng(seed, Stream::ValueSamples),
            candidate_rng: stream_rng(seed, Stream::Candidates),
            eval_rng: stream_rng(seed, Stream::Evaluation),
        })
    }

    pub fn agent(&self) -> &GacAgent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut GacAgent {
        &mut self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// One environment step followed by one learning step once warmup is
    /// over and the buffer holds a full batch.
    pub fn step(&mut self) -> Result<Option<StepLosses>> {
        let spec = self.env.spec().clone();
        let unit = if self.steps_done < self.agent.config().warmup {
            (0..spec.action_dim).map(|_| self.explore_rng.random_range(-1.0..=1.0)).collect()
        } else {
            self.agent.act_explore(&self.state.obs, &mut self.explore_rng)?
        };
        let (tr, next) = self.env.step(&self.state, &spec.from_unit(&unit))?;
        self.buffer.push(&tr.state, &unit, tr.reward, &tr.next_state, tr.bootstrap())?;
        self.state = if tr.done { self.env.reset(&mut self.env_rng) } else { next };
        self.steps_done += 1;

        let cfg = self.agent.config();
        if self.steps_done <= cfg.warmup || self.buffer.len() < cfg.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(cfg.batch_size, &mut self.replay_rng)?;
        self.agent
            .learn(&batch, &mut self.value_rng, &mut self.candidate_rng)
            .map(Some)
    }

    /// Mean and sample std of undiscounted returns over noise-free episodes.
    /// Uses only the evaluation stream and never touches the buffer.
    pub fn evaluate(&mut self, episodes: usize) -> Result<(f64, f64)> {
        let returns = evaluate_policy(&self.env, &self.agent, episodes, &mut self.eval_rng)?;
        Ok((mean(&returns), std_dev(&returns)))
    }

    /// Trains for `opts.steps` steps, calling `on_row` for every metrics row.
    /// Errors carry the step index and seed.
    pub fn run(&mut self, opts: &TrainOptions, mut on_row: impl FnMut(&MetricsRow) -> Result<()>) -> Result<Vec<MetricsRow>> {
        if opts.eval_interval == 0 || opts.eval_episodes == 0 {
            return Err(Error::invalid("eval_interval and eval_episodes must be positive"));
        }
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut acc = (StepLosses::default(), 0usize);
        for _ in 0..opts.steps {
            let wrap = |e: Error, step: usize, seed: u64| Error::Training { step, seed, source: Box::new(e) };
            let (step, seed) = (self.steps_done, self.seed);
            if let Some(l) = self.step().map_err(|e| wrap(e, step, seed))? {
                acc.0.critic += l.critic;
                acc.0.value += l.value;
                acc.0.actor += l.actor;
                acc.1 += 1;
            }
            if self.steps_done.is_multiple_of(opts.eval_interval) {
                let (m, s) = self.evaluate(opts.eval_episodes).map_err(|e| wrap(e, step, seed))?;
                let avg = |x: f64| if acc.1 == 0 { f64::NAN } else { x / acc.1 as f64 };
                let row = MetricsRow {
                    step: self.steps_done,
                    eval_return_mean: m,
                    eval_return_std: s,
                    critic_loss: avg(acc.0.critic),
                    value_loss: avg(acc.0.value),
                    actor_loss: avg(acc.0.actor),
                    wall_ms: if opts.log_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
                };
                on_row(&row)?;
                rows.push(row);
                acc = (StepLosses::default(), 0);
            }
        }
        Ok(rows)
    }

    /// Agent parameters, optimizer moments, and every RNG stream.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_header("env", self.env.name());
        ck.set_header("seed", self.seed);
        ck.set_header("steps_done", self.steps_done);
        self.agent.write_checkpoint(&mut ck);
        for (name, rng) in [
            ("env", &self.env_rng),
            ("exploration", &self.explore_rng),
            ("replay", &self.replay_rng),
            ("value_samples", &self.value_rng),
            ("candidates", &self.candidate_rng),
            ("evaluation", &self.eval_rng),
        ] {
            ck.push_rng(name, rng);
        }
        ck
    }
}

/// Undiscounted returns of `episodes` noise-free episodes. τ is still drawn
/// fresh for every action, from `rng`.
pub fn evaluate_policy<R: Rng + ?Sized>(env: &Env, agent: &GacAgent, episodes: usize, rng: &mut R) -> Result<Vec<f64>> {
    let spec = env.spec();
    (0..episodes)
        .map(|_| {
            let mut state = env.reset(rng);
            let mut total = 0.0;
            loop {
                let a = agent.act(&state.obs, rng)?;
                let (tr, next) = env.step(&state, &spec.from_unit(&a))?;
                total += tr.reward;
                if tr.done {
                    return Ok(total);
                }
                state = next;
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_param_gap, Module};
    use crate::quantile::ActorKind;

    fn tiny(env: &str) -> (Env, GacConfig) {
        let env = Env::by_name(env).unwrap();
        let mut cfg = GacConfig::new(ActorKind::Aiqn, env.spec());
        cfg.critic_hidden = vec![16];
        cfg.batch_size = 8;
        cfg.candidates = 4;
        cfg.value_samples = 2;
        cfg.warmup = 40;
        (env, cfg)
    }

    fn opts(steps: usize) -> TrainOptions {
        TrainOptions {
            steps,
            eval_interval: 50,
            eval_episodes: 3,
            log_wall_time: false,
        }
    }

    #[test]
    fn same_seed_gives_identical_metrics() {
        let run = |seed| {
            let (env, cfg) = tiny("pointmass");
            let mut t = Trainer::new(env, cfg, seed).unwrap();
            t.run(&opts(150), |_| Ok(())).unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a.len(), 3);
        let bits = |rows: &[MetricsRow]| -> Vec<[String; 7]> { rows.iter().map(MetricsRow::fields).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&run(4)));
    }

    #[test]
    fn zero_steps_leaves_initialization() {
        let (env, cfg) = tiny("bandit_prop1");
        let mut t = Trainer::new(env.clone(), cfg.clone(), 1).unwrap();
        let rows = t.run(&opts(0), |_| Ok(())).unwrap();
        assert!(rows.is_empty());
        let fresh = Trainer::new(env, cfg, 1).unwrap();
        assert_eq!(max_param_gap(t.agent().actor(), fresh.agent().actor()), 0.0);
        assert_eq!(t.checkpoint(), fresh.checkpoint());
    }

    #[test]
    fn rows_come_at_eval_interval_with_losses_after_warmup() {
        let (env, cfg) = tiny("bandit_prop1");
        let mut t = Trainer::new(env, cfg, 2).unwrap();
        let mut seen = 0;
        let rows = t
            .run(&opts(100), |_| {
                seen += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, 2);
        assert_eq!(rows[0].step, 50);
        assert_eq!(rows[1].step, 100);
        assert!(rows[0].critic_loss.is_finite());
        assert!(rows.iter().all(|r| r.wall_ms == 0));
        assert_eq!(t.buffer().len(), 100);
    }

    #[test]
    fn evaluation_never_touches_the_buffer_or_learner() {
        let (env, cfg) = tiny("pointmass");
        let mut t = Trainer::new(env, cfg, 5).unwrap();
        t.run(&opts(60), |_| Ok(())).unwrap();
        let before = (t.buffer().inserted(), t.agent().actor().clone());
        t.evaluate(4).unwrap();
        assert_eq!(t.buffer().inserted(), before.0);
        assert_eq!(max_param_gap(t.agent().actor(), &before.1), 0.0);
    }

    #[test]
    fn pointmass_evaluation_returns_are_costs() {
        // Returns are sums of −‖p‖² over the full horizon.
        let (env, cfg) = tiny("pointmass");
        let mut t = Trainer::new(env, cfg, 6).unwrap();
        let (m, s) = t.evaluate(5).unwrap();
        assert!(m < 0.0 && s >= 0.0);
    }

    #[test]
    fn failures_report_step_and_seed() {
        let (env, mut cfg) = tiny("bandit_prop1");
        cfg.warmup = 0;
        let mut t = Trainer::new(env, cfg, 9).unwrap();
        t.run(&opts(3), |_| Ok(())).unwrap();
        for p in t.agent_mut().actor_mut().params_mut() {
            p.data_mut().fill(f64::NAN);
        }
        match t.run(&opts(3), |_| Ok(())) {
            Err(Error::Training { step, seed, .. }) => assert_eq!((step, seed), (3, 9)),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let (_, cfg) = tiny("pointmass");
        assert!(Trainer::new(Env::by_name("bandit_prop1").unwrap(), cfg, 0).is_err());
    }
}
