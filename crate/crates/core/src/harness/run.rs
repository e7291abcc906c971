use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::baselines::{exact_pg_field, expected_reward, pg_step, random_policy_returns, GaussianPolicy};
use crate::dpo::{run_dpo, DpoRun};
use crate::envs::{discretize, discretize_range, DiscreteMdp, Env, MultiModalBandit};
use crate::error::{Error, Result};
use crate::evalstats::{correlation, mean, sliced_wasserstein, std_dev, wasserstein1_1d};
use crate::gac::{MetricsRow, TrainOptions, Trainer};
use crate::gradcheck::{run_suite, SuiteReport, TOLERANCE};
use crate::harness::config::ExperimentConfig;
use crate::harness::write_atomic;
use crate::numerics::{Checkpoint, Tensor};
use crate::quantile::{actor_samples, fit_distribution, Actor, ActorConfig, ActorKind, TargetDistribution};
use crate::seed::{stream_rng, Stream};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RESOLVED_FILE: &str = "config.resolved";

/// Receives one human-readable line per finished unit of work.
pub type Progress<'a> = &'a mut dyn FnMut(String);

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), msg: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv { path: path.to_path_buf(), msg: e.to_string() })?;
    write_atomic(path, &bytes)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv(path, &MetricsRow::HEADER, rows.iter().map(|r| r.fields().to_vec()))
}

fn prepare(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join(RESOLVED_FILE), cfg.resolved_text().as_bytes())
}

fn gac_kind(agent: &str) -> ActorKind {
    if agent == "gac_iqn" {
        ActorKind::Iqn
    } else {
        ActorKind::Aiqn
    }
}

/// Result of a `train` run; `files` lists what was written.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub rows: Vec<MetricsRow>,
    pub files: Vec<PathBuf>,
}

/// Trains the configured agent and writes `metrics.csv`, `config.resolved`
/// and, for learners, `checkpoint.bin` into `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<TrainOutput> {
    let env = cfg.env()?;
    let opts = cfg.train_options()?;
    let seed = cfg.u64("seed")?;
    let agent = cfg.agent()?;
    prepare(out, cfg)?;
    let mut on_row = |r: &MetricsRow| {
        progress(format!("step {} return {:.4} ± {:.4}", r.step, r.eval_return_mean, r.eval_return_std));
        Ok(())
    };
    let (rows, ck) = match agent {
        "gac_aiqn" | "gac_iqn" => {
            let config = cfg.gac_config(&env, gac_kind(agent))?;
            let mut trainer = Trainer::new(env, config, seed)?;
            let rows = trainer.run(&opts, &mut on_row)?;
            (rows, Some(trainer.checkpoint()))
        }
        "pg_gaussian" => {
            let bandit = cfg.prop1_bandit()?;
            let (rows, policy) = train_pg(&bandit, cfg, seed, &opts, opts.steps, &mut on_row)?;
            let mut ck = Checkpoint::new();
            ck.set_header("env", env.name());
            ck.set_header("seed", seed);
            ck.push("mu", &Tensor::scalar(policy.mu));
            ck.push("sigma", &Tensor::scalar(policy.sigma));
            (rows, Some(ck))
        }
        "random" => (train_random(&env, seed, &opts, &mut on_row)?, None),
        other => {
            return Err(Error::config("agent", format!("`{other}` is run by the dpo-tabular command, not train")));
        }
    };
    let mut files = vec![out.join(RESOLVED_FILE), out.join(METRICS_FILE)];
    write_metrics(&files[1], &rows)?;
    if let Some(ck) = ck {
        let path = out.join(CHECKPOINT_FILE);
        ck.save(&path)?;
        files.push(path);
    }
    Ok(TrainOutput { rows, files })
}

/// Gaussian policy gradient with evaluation rows every `eval_interval`
/// steps. An evaluation draws `eval_episodes` actions from the policy.
fn train_pg(
    bandit: &MultiModalBandit,
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &TrainOptions,
    steps: usize,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<(Vec<MetricsRow>, GaussianPolicy)> {
    let mut policy = GaussianPolicy::new(cfg.f64("pg_mu_init")?, cfg.f64("pg_sigma")?)?;
    let (batch, lr) = (cfg.usize("pg_batch")?, cfg.f64("pg_lr")?);
    let mut rng = stream_rng(seed, Stream::PolicyGradient);
    let mut eval_rng = stream_rng(seed, Stream::Evaluation);
    let mut rows = Vec::new();
    for t in 1..=steps {
        pg_step(&mut policy, bandit, batch, lr, &mut rng)
            .map_err(|e| Error::Training { step: t - 1, seed, source: Box::new(e) })?;
        if t % opts.eval_interval == 0 {
            let rewards: Vec<f64> = (0..opts.eval_episodes)
                .map(|_| {
                    let z: f64 = eval_rng.sample(StandardNormal);
                    bandit.reward(policy.mu + policy.sigma * z)
                })
                .collect();
            let row = MetricsRow {
                step: t,
                eval_return_mean: mean(&rewards),
                eval_return_std: std_dev(&rewards),
                critic_loss: f64::NAN,
                value_loss: f64::NAN,
                actor_loss: f64::NAN,
                wall_ms: 0,
            };
            on_row(&row)?;
            rows.push(row);
        }
    }
    Ok((rows, policy))
}

/// Evaluation rows of the uniform random policy at the configured interval.
fn train_random(
    env: &Env,
    seed: u64,
    opts: &TrainOptions,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    let mut rng = stream_rng(seed, Stream::Evaluation);
    let mut rows = Vec::new();
    for step in (opts.eval_interval..=opts.steps).step_by(opts.eval_interval) {
        let returns = random_policy_returns(env, opts.eval_episodes, &mut rng)?;
        let row = MetricsRow {
            step,
            eval_return_mean: mean(&returns),
            eval_return_std: std_dev(&returns),
            critic_loss: f64::NAN,
            value_loss: f64::NAN,
            actor_loss: f64::NAN,
            wall_ms: 0,
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// The tabular MDP used by `dpo-tabular`. On the multi-modal bandit the bins
/// span both reward windows, `[μ0 − 2α, μ0 + 6α]`.
pub fn tabular_mdp(env: &Env, bins: usize) -> Result<DiscreteMdp> {
    match env {
        Env::Prop1(b) => discretize_range(env, bins, &[b.mu0 - 2.0 * b.alpha], &[b.mu0 + 6.0 * b.alpha]),
        _ => discretize(env, bins),
    }
}

pub const DPO_FILE: &str = "dpo.csv";

/// Runs the tabular solver and writes one row per convergence check:
/// `k`, `v_<s>` for every state, `distance`.
pub fn dpo_tabular(cfg: &ExperimentConfig, out: &Path) -> Result<DpoRun> {
    let env = cfg.env()?;
    let mdp = tabular_mdp(&env, cfg.usize("bins")?)?;
    let dpo = cfg.dpo_config()?;
    let check_every = cfg.usize("check_every")?;
    if check_every == 0 {
        return Err(Error::config("check_every", "must be positive"));
    }
    prepare(out, cfg)?;
    let run = run_dpo(&mdp, &dpo, cfg.usize("max_iters")?, cfg.f64("tol")?, check_every)?;
    let value_cols: Vec<String> = (0..mdp.n_states).map(|s| format!("v_{s}")).collect();
    let mut header = vec!["k"];
    header.extend(value_cols.iter().map(String::as_str));
    header.push("distance");
    let rows = run.records.iter().map(|r| {
        let mut row = vec![r.k.to_string()];
        row.extend(r.values.iter().map(f64::to_string));
        row.push(r.distance.to_string());
        row
    });
    write_csv(&out.join(DPO_FILE), &header, rows)?;
    Ok(run)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub agent: &'static str,
    pub final_reward: f64,
    /// The final reward beats ε, the best any policy inside the left window
    /// can earn.
    pub escaped: bool,
}

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const DRIFT_FILE: &str = "drift_field.csv";

/// Policy gradient and GAC on the same bandit for `seeds` consecutive seeds,
/// plus the exact drift field of the policy gradient.
///
/// PG's final reward is the exact expected reward of its final policy; GAC's
/// is its last evaluation mean.
pub fn prop1(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<Vec<ComparisonRow>> {
    let env = cfg.env()?;
    let bandit = cfg.prop1_bandit()?;
    let opts = cfg.train_options()?;
    let (seed0, seeds) = (cfg.u64("seed")?, cfg.usize("seeds")?);
    let pg_steps = cfg.usize("pg_steps")?;
    let gac_agent = match cfg.agent()? {
        "gac_iqn" => "gac_iqn",
        _ => "gac_aiqn",
    };
    let gac_config = cfg.gac_config(&env, gac_kind(gac_agent))?;
    prepare(out, cfg)?;
    write_drift_field(cfg, &bandit, &out.join(DRIFT_FILE))?;
    let mut rows = Vec::new();
    for seed in seed0..seed0 + seeds as u64 {
        let dir = out.join("runs").join(format!("seed{seed}_pg_gaussian"));
        fs::create_dir_all(&dir)?;
        let (metrics, policy) = train_pg(&bandit, cfg, seed, &opts, pg_steps, &mut |_| Ok(()))?;
        write_metrics(&dir.join(METRICS_FILE), &metrics)?;
        let final_reward = expected_reward(&bandit, policy.mu, policy.sigma)?;
        progress(format!("seed {seed} pg_gaussian: μ {:.4}, reward {final_reward:.4}", policy.mu));
        rows.push(ComparisonRow { seed, agent: "pg_gaussian", final_reward, escaped: final_reward > bandit.epsilon });

        let dir = out.join("runs").join(format!("seed{seed}_{gac_agent}"));
        fs::create_dir_all(&dir)?;
        let mut trainer = Trainer::new(env.clone(), gac_config.clone(), seed)?;
        let metrics = trainer.run(&opts, |_| Ok(()))?;
        write_metrics(&dir.join(METRICS_FILE), &metrics)?;
        let final_reward = match metrics.last() {
            Some(r) => r.eval_return_mean,
            None => trainer.evaluate(opts.eval_episodes)?.0,
        };
        progress(format!("seed {seed} {gac_agent}: reward {final_reward:.4}"));
        rows.push(ComparisonRow { seed, agent: gac_agent, final_reward, escaped: final_reward > bandit.epsilon });
    }
    write_csv(
        &out.join(COMPARISON_FILE),
        &["seed", "agent", "final_reward", "escaped"],
        rows.iter().map(|r| vec![r.seed.to_string(), r.agent.to_string(), r.final_reward.to_string(), r.escaped.to_string()]),
    )?;
    Ok(rows)
}

/// `sigma, mu, drift` over an even grid of the action box, for each
/// configured σ (in units of α).
fn write_drift_field(cfg: &ExperimentConfig, bandit: &MultiModalBandit, path: &Path) -> Result<()> {
    let n = cfg.usize("drift_grid")?;
    if n < 2 {
        return Err(Error::config("drift_grid", "needs at least 2 points"));
    }
    let (lo, hi) = (bandit.spec().action_low[0], bandit.spec().action_high[0]);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut rows = Vec::new();
    for s in cfg.f64_list("drift_sigmas")? {
        let sigma = s * bandit.alpha;
        let field = exact_pg_field(bandit, &grid, sigma).map_err(|e| Error::config("drift_sigmas", e.to_string()))?;
        rows.extend(grid.iter().zip(field).map(|(m, d)| vec![sigma.to_string(), m.to_string(), d.to_string()]));
    }
    write_csv(path, &["sigma", "mu", "drift"], rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub actor: ActorKind,
    pub final_loss: f64,
    /// 1-D targets only; NaN otherwise.
    pub w1: f64,
    pub sliced_w1: f64,
    /// `corr(a₂, sin 2a₁)` of the fitted samples on the ridge target, NaN
    /// otherwise.
    pub ridge_corr: f64,
}

pub const FIT_FILE: &str = "fitcheck.csv";

/// Fits each configured actor to the target distribution with the same seed
/// and budget, then compares `fit_samples` draws against as many target
/// draws.
pub fn fitcheck(cfg: &ExperimentConfig, out: &Path, progress: Progress) -> Result<Vec<FitRow>> {
    let target = cfg.fit_target()?;
    let opts = cfg.fit_options()?;
    let (seed, n, projections) = (cfg.u64("seed")?, cfg.usize("fit_samples")?, cfg.usize("projections")?);
    prepare(out, cfg)?;
    let mut rows = Vec::new();
    for kind in cfg.fit_actors()? {
        let mut ac = ActorConfig::new(kind, 1, target.dim());
        ac.features = cfg.usize("actor_features")?;
        ac.width = cfg.usize("actor_width")?;
        ac.hidden = cfg.usize("actor_hidden")?;
        ac.recurrent = cfg.usize("actor_recurrent")?;
        let mut actor = Actor::new(ac, &mut stream_rng(seed, Stream::ActorInit))?;
        let report = fit_distribution(&mut actor, &target, &opts, &mut stream_rng(seed, Stream::Fit))?;
        let mut eval_rng = stream_rng(seed, Stream::Evaluation);
        let xs = actor_samples(&actor, n, &mut eval_rng)?;
        let ys = target.sample_set(n, &mut eval_rng)?;
        let w1 = if target.dim() == 1 { wasserstein1_1d(&xs.column(0), &ys.column(0))? } else { f64::NAN };
        let sliced_w1 = sliced_wasserstein(&xs, &ys, projections, &mut stream_rng(seed, Stream::Projections))?;
        let ridge_corr = match target {
            TargetDistribution::Ridge { .. } => {
                let s: Vec<f64> = xs.column(0).iter().map(|a| (2.0 * a).sin()).collect();
                correlation(&xs.column(1), &s)?
            }
            _ => f64::NAN,
        };
        progress(format!("{kind}: W1 {w1:.4}, sliced {sliced_w1:.4}, ridge corr {ridge_corr:.4}"));
        rows.push(FitRow { actor: kind, final_loss: report.final_loss, w1, sliced_w1, ridge_corr });
    }
    let target_name = cfg.get("fit_target")?;
    write_csv(
        &out.join(FIT_FILE),
        &["actor", "target", "steps", "final_loss", "w1", "sliced_w1", "ridge_corr"],
        rows.iter().map(|r| {
            vec![
                r.actor.to_string(),
                target_name.to_string(),
                opts.steps.to_string(),
                r.final_loss.to_string(),
                r.w1.to_string(),
                r.sliced_w1.to_string(),
                r.ridge_corr.to_string(),
            ]
        }),
    )?;
    Ok(rows)
}

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// The finite-difference suite over `gradcheck_seeds` seeds starting at
/// `seed`. Failing cases are reported in the CSV, not as an error.
pub fn gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<SuiteReport> {
    let seed = cfg.u64("seed")?;
    let n = cfg.usize("gradcheck_seeds")? as u64;
    prepare(out, cfg)?;
    let report = run_suite(seed..seed + n)?;
    write_csv(
        &out.join(GRADCHECK_FILE),
        &["case", "seed", "checked", "skipped", "max_rel_error", "passed"],
        report.cases.iter().map(|c| {
            vec![
                c.case.to_string(),
                c.seed.to_string(),
                c.report.checked.to_string(),
                c.report.skipped.to_string(),
                c.report.max_rel_error.to_string(),
                c.passed(TOLERANCE).to_string(),
            ]
        }),
    )?;
    Ok(report)
}
