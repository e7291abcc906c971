//! Finite-difference checks of every differentiable component.
//!
//! Each case builds a small randomly initialized module and loss from a seed
//! and compares tape gradients with central differences. Coordinates whose
//! perturbation flips a ReLU or Huber branch are skipped and counted.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{check_gradients, Activation, GradCheckReport, GruCell, Linear, Mlp, Tape, Tensor, Var};
use crate::quantile::{Actor, ActorConfig, ActorKind, CosineEmbedding, QuantileBatch};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const MAX_UNROLL: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub case: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl CaseReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < tol
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed(tol))
    }

    pub fn worst(&self) -> Option<&CaseReport> {
        self.cases
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }

    pub fn totals(&self) -> GradCheckReport {
        let mut t = GradCheckReport::default();
        for c in &self.cases {
            t.merge(&c.report);
        }
        t
    }
}

pub const CASES: [&str; 9] = [
    "linear_mse",
    "mlp_mse",
    "mlp_huber_quantile",
    "mlp_pinball",
    "cosine_embedding",
    "gru_bptt",
    "iqn_actor",
    "aiqn_actor",
    "aiqn_actor_free_running",
];

/// Runs every case for every seed in `seeds`.
pub fn run_suite(seeds: Range<u64>) -> Result<SuiteReport> {
    let mut out = SuiteReport::default();
    for seed in seeds {
        for case in CASES {
            let report = run_case(case, seed)?;
            out.cases.push(CaseReport { case, seed, report });
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn run_case(case: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..5usize);
    match case {
        "linear_mse" => {
            let (i, o) = (rng.random_range(1..5), rng.random_range(1..5));
            let mut layer = Linear::new(i, o, &mut rng);
            let x = Tensor::matrix(rows, i, uniform(&mut rng, rows * i, -1.0, 1.0))?;
            let y = uniform(&mut rng, rows * o, -1.0, 1.0);
            check_gradients(
                &mut layer,
                |m, tape, vars| {
                    let xv = tape.input(&x);
                    let p = m.forward_vars(tape, vars, xv);
                    tape.mse(p, &y)
                },
                FD_STEP,
            )
        }
        "mlp_mse" | "mlp_huber_quantile" | "mlp_pinball" => {
            let widths = [rng.random_range(1..4), rng.random_range(2..7), rng.random_range(2..7), rng.random_range(1..4)];
            let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
            let mut net = Mlp::new(&widths, &acts, &mut rng)?;
            let x = Tensor::matrix(rows, widths[0], uniform(&mut rng, rows * widths[0], -1.0, 1.0))?;
            let out = rows * widths[3];
            let y = uniform(&mut rng, out, -1.0, 1.0);
            let taus = uniform(&mut rng, out, 0.0, 1.0);
            let weights = uniform(&mut rng, rows, 0.1, 1.0);
            let kappa = match case {
                "mlp_mse" => None,
                "mlp_pinball" => Some(0.0),
                _ => Some(rng.random_range(0.05..1.0)),
            };
            check_gradients(
                &mut net,
                |m, tape, vars| {
                    let xv = tape.input(&x);
                    let p = m.forward_vars(tape, vars, xv);
                    match kappa {
                        None => tape.mse(p, &y),
                        Some(k) => tape.weighted_huber_quantile(p, &y, &taus, &weights, k),
                    }
                },
                FD_STEP,
            )
        }
        "cosine_embedding" => {
            let mut psi = CosineEmbedding::new(rng.random_range(2..9), rng.random_range(1..6), &mut rng);
            let taus = uniform(&mut rng, rows, 0.0, 1.0);
            let y = uniform(&mut rng, rows * psi.width(), -1.0, 1.0);
            check_gradients(
                &mut psi,
                |m, tape, vars| {
                    let p = m.forward_vars(tape, vars, &taus);
                    tape.mse(p, &y)
                },
                FD_STEP,
            )
        }
        "gru_bptt" => {
            let depth = 1 + (seed as usize % MAX_UNROLL);
            let (i, h) = (rng.random_range(1..4), rng.random_range(1..5));
            let mut cell = GruCell::new(i, h, &mut rng);
            let xs: Vec<Tensor> = (0..depth)
                .map(|_| Tensor::matrix(rows, i, uniform(&mut rng, rows * i, -1.0, 1.0)))
                .collect::<Result<_>>()?;
            let h0 = Tensor::matrix(rows, h, uniform(&mut rng, rows * h, -0.5, 0.5))?;
            let y = uniform(&mut rng, rows * h, -1.0, 1.0);
            check_gradients(
                &mut cell,
                |m, tape, vars| {
                    let mut hv = tape.input(&h0);
                    for x in &xs {
                        let xv = tape.input(x);
                        hv = m.step_vars(tape, vars, xv, hv);
                    }
                    tape.mse(hv, &y)
                },
                FD_STEP,
            )
        }
        "iqn_actor" | "aiqn_actor" | "aiqn_actor_free_running" => {
            let kind = if case == "iqn_actor" { ActorKind::Iqn } else { ActorKind::Aiqn };
            let (sd, ad) = (rng.random_range(1..3), rng.random_range(1..=MAX_UNROLL.min(4)));
            let mut cfg = ActorConfig::new(kind, sd, ad);
            cfg.features = 4;
            cfg.width = 4;
            cfg.hidden = 4;
            cfg.recurrent = 3;
            let mut actor = Actor::new(cfg, &mut rng)?;
            let states = Tensor::matrix(2, sd, uniform(&mut rng, 2 * sd, -1.0, 1.0))?;
            let sel: Vec<usize> = (0..rows).map(|r| r % 2).collect();
            let actions = uniform(&mut rng, rows * ad, -1.0, 1.0);
            let taus = uniform(&mut rng, rows * ad, 0.0, 1.0);
            let weights = uniform(&mut rng, rows, 0.1, 1.0);
            let kappa = rng.random_range(0.05..1.0);
            if case == "aiqn_actor_free_running" {
                return check_gradients(
                    &mut actor,
                    |m: &Actor, tape: &mut Tape, vars: &[Var]| {
                        let p = m.predict_vars(tape, vars, &states, &sel, &taus, None);
                        tape.mse(p, &actions)
                    },
                    FD_STEP,
                );
            }
            let batch = QuantileBatch {
                states: &states,
                rows: &sel,
                actions: &actions,
                taus: &taus,
                weights: &weights,
            };
            check_gradients(
                &mut actor,
                |m: &Actor, tape: &mut Tape, vars: &[Var]| {
                    m.quantile_loss_vars(tape, vars, &batch, kappa)
                        .expect("batch validated by construction")
                },
                FD_STEP,
            )
        }
        other => Err(crate::Error::invalid(format!("unknown gradcheck case `{other}`"))),
    }
}
