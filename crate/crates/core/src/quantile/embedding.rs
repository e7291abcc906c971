use rand::Rng;

use crate::numerics::{Linear, Module, Tape, Tensor, Var};

/// Number of cosine features fed into ψ.
pub const COSINE_FEATURES: usize = 32;

/// `[cos(π·j·τ) for j in 0..d]` per τ, as a `[taus.len(), d]` row-major block.
///
/// Uses the Chebyshev recurrence `cos(jθ) = 2cos θ·cos((j−1)θ) − cos((j−2)θ)`.
pub fn cosine_features(taus: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(taus.len() * d);
    for &tau in taus {
        let c1 = (std::f64::consts::PI * tau).cos();
        let (mut prev, mut cur) = (1.0, c1);
        for j in 0..d {
            match j {
                0 => out.push(1.0),
                1 => out.push(c1),
                _ => {
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                    out.push(next);
                }
            }
        }
    }
    out
}

/// `ψ(τ) = ReLU(Linear(cos(π·j·τ), j = 0..d))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineEmbedding {
    pub linear: Linear,
}

impl CosineEmbedding {
    pub fn new<R: Rng + ?Sized>(features: usize, width: usize, rng: &mut R) -> Self {
        Self { linear: Linear::new(features, width, rng) }
    }

    pub fn features(&self) -> usize {
        self.linear.input_width()
    }

    pub fn width(&self) -> usize {
        self.linear.output_width()
    }

    /// Embeds one τ per row; returns a `[taus.len(), width]` node.
    pub fn forward_vars(&self, tape: &mut Tape, vars: &[Var], taus: &[f64]) -> Var {
        let x = tape.input_raw(taus.len(), self.features(), cosine_features(taus, self.features()));
        let y = self.linear.forward_vars(tape, vars, x);
        tape.relu(y)
    }
}

impl Module for CosineEmbedding {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.linear.named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.linear.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_matches_direct_cosines() {
        let taus = [0.0, 0.137, 0.5, 0.999, 1.0];
        let f = cosine_features(&taus, 32);
        for (r, &tau) in taus.iter().enumerate() {
            for j in 0..32 {
                let direct = (std::f64::consts::PI * j as f64 * tau).cos();
                assert!((f[r * 32 + j] - direct).abs() < 1e-12, "tau {tau} j {j}");
            }
        }
    }
}
