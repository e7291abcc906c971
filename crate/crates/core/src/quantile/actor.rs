use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, GruCell, Mlp, Module, Tape, Tensor, Var};
use crate::quantile::CosineEmbedding;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActorKind {
    /// All dimensions from one joint head.
    Iqn,
    /// Dimension `i` from `(s, τⁱ, a¹..aⁱ⁻¹)` through a recurrent cell.
    Aiqn,
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActorKind::Iqn => "iqn",
            ActorKind::Aiqn => "aiqn",
        })
    }
}

impl FromStr for ActorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iqn" => Ok(ActorKind::Iqn),
            "aiqn" => Ok(ActorKind::Aiqn),
            other => Err(Error::invalid(format!("unknown actor kind `{other}` (iqn, aiqn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorConfig {
    pub kind: ActorKind,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Cosine features entering ψ.
    pub features: usize,
    /// Width of the state encoding and of ψ(τ).
    pub width: usize,
    /// Hidden width of the encoder and the output head.
    pub hidden: usize,
    /// Recurrent state width (AIQN only).
    pub recurrent: usize,
}

impl ActorConfig {
    pub fn new(kind: ActorKind, state_dim: usize, action_dim: usize) -> Self {
        Self {
            kind,
            state_dim,
            action_dim,
            features: super::COSINE_FEATURES,
            width: 32,
            hidden: 32,
            recurrent: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.state_dim, self.action_dim, self.features, self.width, self.hidden, self.recurrent];
        if dims.contains(&0) {
            return Err(Error::invalid(format!("actor widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn header_entries(&self, prefix: &str) -> Vec<(String, String)> {
        vec![
            (format!("{prefix}.kind"), self.kind.to_string()),
            (format!("{prefix}.state_dim"), self.state_dim.to_string()),
            (format!("{prefix}.action_dim"), self.action_dim.to_string()),
            (format!("{prefix}.features"), self.features.to_string()),
            (format!("{prefix}.width"), self.width.to_string()),
            (format!("{prefix}.hidden"), self.hidden.to_string()),
            (format!("{prefix}.recurrent"), self.recurrent.to_string()),
            (format!("{prefix}.ordering"), "natural".to_string()),
        ]
    }
}

/// One weighted quantile-regression batch.
///
/// `rows[j]` selects the state of sample `j` from `states`; `actions` and
/// `taus` are `[rows.len(), action_dim]` row-major; one weight per sample.
#[derive(Clone, Copy, Debug)]
pub struct QuantileBatch<'a> {
    pub states: &'a Tensor,
    pub rows: &'a [usize],
    pub actions: &'a [f64],
    pub taus: &'a [f64],
    pub weights: &'a [f64],
}

/// Implicit quantile actor mapping `(s, τ)` to an action.
///
/// The state encoding `e(s)` is combined with `ψ(τⁱ)` by a Hadamard product.
/// The IQN head reads all dimensions at once. The AIQN runs a recurrent cell
/// over `[aⁱ⁻¹, onehot(i)]` starting from a zero state, and a shared head
/// reads `[e(s) ⊙ ψ(τⁱ), hᵢ]` for each dimension. Output `i` sees `τʲ`,
/// `j < i`, only through the earlier actions, and never sees later ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    config: ActorConfig,
    encoder: Mlp,
    psi: CosineEmbedding,
    gru: Option<GruCell>,
    head: Mlp,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(config: ActorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let encoder = Mlp::new(&[c.state_dim, c.hidden, c.width], &[Activation::Relu, Activation::Relu], rng)?;
        let psi = CosineEmbedding::new(c.features, c.width, rng);
        let (gru, head) = match c.kind {
            ActorKind::Iqn => {
                let head = Mlp::with_hidden(c.action_dim * c.width, &[c.hidden], c.action_dim, Activation::Relu, rng)?;
                (None, head)
            }
            ActorKind::Aiqn => {
                let gru = GruCell::new(1 + c.action_dim, c.recurrent, rng);
                let head = Mlp::with_hidden(c.width + c.recurrent, &[c.hidden], 1, Activation::Relu, rng)?;
                (Some(gru), head)
            }
        };
        Ok(Self { config, encoder, psi, gru, head })
    }

    pub fn config(&self) -> &ActorConfig {
        &self.config
    }

    pub fn kind(&self) -> ActorKind {
        self.config.kind
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn recurrent_cell(&self) -> Option<&GruCell> {
        self.gru.as_ref()
    }

    /// Predicted quantiles, `[rows.len(), action_dim]`.
    ///
    /// With `teacher` the recurrence is fed the given earlier action
    /// dimensions; without it, the actor's own outputs (free running).
    pub fn predict_vars(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        states: &Tensor,
        rows: &[usize],
        taus: &[f64],
        teacher: Option<&[f64]>,
    ) -> Var {
        let n = self.config.action_dim;
        let b = rows.len();
        let n_enc = self.encoder.num_tensors();
        let (enc_vars, rest) = vars.split_at(n_enc);
        let (psi_vars, rest) = rest.split_at(2);
        let (gru_vars, head_vars) = rest.split_at(if self.gru.is_some() { 10 } else { 0 });

        let s = tape.input(states);
        let mut e = self.encoder.forward_vars(tape, enc_vars, s);
        let identity = rows.len() == states.rows() && rows.iter().enumerate().all(|(i, &r)| i == r);
        if !identity {
            e = tape.gather_rows(e, rows);
        }
        let mixed: Vec<Var> = (0..n)
            .map(|i| {
                let col: Vec<f64> = (0..b).map(|r| taus[r * n + i]).collect();
                let p = self.psi.forward_vars(tape, psi_vars, &col);
                tape.mul(e, p)
            })
            .collect();

        match &self.gru {
            None => {
                let x = if n == 1 { mixed[0] } else { tape.concat_cols(&mixed) };
                self.head.forward_vars(tape, head_vars, x)
            }
            Some(gru) => {
                let mut h = tape.input_raw(b, gru.hidden_width(), vec![0.0; b * gru.hidden_width()]);
                let mut prev = tape.input_raw(b, 1, vec![0.0; b]);
                let mut outs = Vec::with_capacity(n);
                for (i, z) in mixed.into_iter().enumerate() {
                    let mut onehot = vec![0.0; b * n];
                    for r in 0..b {
                        onehot[r * n + i] = 1.0;
                    }
                    let oh = tape.input_raw(b, n, onehot);
                    let x = tape.concat_cols(&[prev, oh]);
                    h = gru.step_vars(tape, gru_vars, x, h);
                    let inp = tape.concat_cols(&[z, h]);
                    let out = self.head.forward_vars(tape, head_vars, inp);
                    prev = match teacher {
                        Some(t) => tape.input_raw(b, 1, (0..b).map(|r| t[r * n + i]).collect()),
                        None => out,
                    };
                    outs.push(out);
                }
                if n == 1 {
                    outs[0]
                } else {
                    tape.concat_cols(&outs)
                }
            }
        }
    }

    fn check_shapes(&self, states: &Tensor, rows: &[usize], taus: &[f64]) -> Result<()> {
        let n = self.config.action_dim;
        if states.cols() != self.config.state_dim {
            return Err(Error::ShapeMismatch {
                op: "actor states",
                expected: vec![states.rows(), self.config.state_dim],
                actual: states.shape().to_vec(),
            });
        }
        if taus.len() != rows.len() * n {
            return Err(Error::ShapeMismatch {
                op: "actor taus",
                expected: vec![rows.len(), n],
                actual: vec![taus.len()],
            });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= states.rows()) {
            return Err(Error::invalid(format!("state row {r} out of {}", states.rows())));
        }
        if let Some(t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("quantile level {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Free-running samples for a batch, `[rows.len() · action_dim]` row-major.
    pub fn sample(&self, states: &Tensor, rows: &[usize], taus: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(states, rows, taus)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.predict_vars(&mut tape, &vars, states, rows, taus, None);
        tape.check()?;
        Ok(tape.value(out).to_vec())
    }

    /// One action for one state.
    pub fn sample_action(&self, state: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
        let s = Tensor::matrix(1, state.len(), state.to_vec())?;
        self.sample(&s, &[0], tau)
    }

    /// `Σ_j w_j Σ_i ρ^κ_{τⁱ_j}(aⁱ_j − π(τⁱ_j | aⁱ⁻¹_j, …, a¹_j, s_j))` on the
    /// tape, with teacher forcing. `κ = 0` gives the plain pinball loss.
    /// Rows with zero weight contribute nothing and are left out.
    pub fn quantile_loss_vars(&self, tape: &mut Tape, vars: &[Var], batch: &QuantileBatch<'_>, kappa: f64) -> Result<Var> {
        let n = self.config.action_dim;
        let m = batch.rows.len();
        self.check_shapes(batch.states, batch.rows, batch.taus)?;
        if batch.actions.len() != m * n || batch.weights.len() != m {
            return Err(Error::ShapeMismatch {
                op: "actor_quantile_loss",
                expected: vec![m, n, m],
                actual: vec![batch.actions.len() / n.max(1), n, batch.weights.len()],
            });
        }
        if let Some(w) = batch.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("quantile weight {w} is negative or non-finite")));
        }
        if !(kappa >= 0.0) {
            return Err(Error::invalid(format!("huber threshold {kappa} is negative")));
        }
        let keep: Vec<usize> = (0..m).filter(|&j| batch.weights[j] > 0.0).collect();
        if keep.is_empty() {
            return Ok(tape.input_raw(1, 1, vec![0.0]));
        }
        let pick = |src: &[f64]| -> Vec<f64> { keep.iter().flat_map(|&j| src[j * n..(j + 1) * n].iter().copied()).collect() };
        let rows: Vec<usize> = keep.iter().map(|&j| batch.rows[j]).collect();
        let actions = pick(batch.actions);
        let taus = pick(batch.taus);
        let weights: Vec<f64> = keep.iter().map(|&j| batch.weights[j]).collect();
        let pred = self.predict_vars(tape, vars, batch.states, &rows, &taus, Some(&actions));
        Ok(tape.weighted_huber_quantile(pred, &actions, &taus, &weights, kappa))
    }

    /// Adds the gradient of the weighted quantile loss into the parameters
    /// and returns the loss.
    pub fn accumulate_quantile_grads(&mut self, batch: &QuantileBatch<'_>, kappa: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let loss = self.quantile_loss_vars(&mut tape, &vars, batch, kappa)?;
        let grads = tape.backward(loss)?;
        self.accumulate_grads(&grads, &vars)?;
        Ok(tape.scalar(loss))
    }
}

impl Module for Actor {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.extend(self.encoder.named_params().into_iter().map(|(n, t)| (format!("enc.{n}"), t)));
        out.extend(self.psi.named_params().into_iter().map(|(n, t)| (format!("psi.{n}"), t)));
        if let Some(g) = &self.gru {
            out.extend(g.named_params().into_iter().map(|(n, t)| (format!("gru.{n}"), t)));
        }
        out.extend(self.head.named_params().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.psi.params_mut());
        if let Some(g) = &mut self.gru {
            out.extend(g.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}
