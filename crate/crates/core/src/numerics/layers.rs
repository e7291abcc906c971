//! Dense layers, multi-layer perceptrons, and the gated recurrent cell.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::gemm;
use crate::numerics::{Module, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Uniform in ±1/√fan_in, the usual default for dense layers.
fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data)
        .expect("sized above")
        .with_requires_grad()
}

/// `y = x W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: init_uniform(input, output, input, rng),
            bias: init_uniform(1, output, input, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]).with_requires_grad(),
            bias: Tensor::zeros(&[1, output]).with_requires_grad(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    /// `vars` are the two leaves produced by binding this layer.
    pub fn forward_vars(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let xw = tape.matmul(x, vars[0]);
        tape.add_row(xw, vars[1])
    }
}

impl Module for Linear {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.weight), ("b".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Feed-forward network; layer `l` maps `widths[l] → widths[l + 1]` and is
/// followed by `activations[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activations: Vec<Activation>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        Self::validate(widths, activations)?;
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Ok(Self {
            layers,
            activations: activations.to_vec(),
        })
    }

    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::validate(widths, activations)?;
        let layers = widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            activations: activations.to_vec(),
        })
    }

    /// Hidden layers use `hidden`, the output layer is linear.
    pub fn with_hidden<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(&widths, &acts, rng)
    }

    fn validate(widths: &[usize], activations: &[Activation]) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid(format!("zero layer width in {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::invalid(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Linear::output_width));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output_width()
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn forward_vars(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let mut h = x;
        for (l, (layer, act)) in self.layers.iter().zip(&self.activations).enumerate() {
            h = layer.forward_vars(tape, &vars[2 * l..2 * l + 2], h);
            h = act.apply(tape, h);
        }
        h
    }

    /// Forward pass on a `[rows, input]` batch without keeping a tape.
    /// Performs the same floating-point operations as [`Mlp::forward_vars`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp forward",
                expected: vec![x.rows(), self.input_width()],
                actual: x.shape().to_vec(),
            });
        }
        let m = x.rows();
        let mut h = x.data().to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let (k, n) = (layer.input_width(), layer.output_width());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &h, false, layer.weight.data(), false, &mut out, false);
            let bias = layer.bias.data();
            for row in out.chunks_exact_mut(n) {
                for (o, b) in row.iter_mut().zip(bias) {
                    *o += b;
                    *o = match act {
                        Activation::Relu => o.max(0.0),
                        Activation::Tanh => o.tanh(),
                        Activation::Identity => *o,
                    };
                }
            }
            h = out;
        }
        let y = Tensor::matrix(m, self.output_width(), h)?;
        y.check_finite("mlp output")?;
        Ok(y)
    }
}

impl Module for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                [
                    (format!("l{l}.w"), &layer.weight),
                    (format!("l{l}.b"), &layer.bias),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// n  = tanh(x W_n + b_n + r ⊙ (h U_n + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// The cell output equals the new hidden state. With every parameter zero,
/// `z = r = ½` and `n = 0`, so `h' = ½ h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_n: Tensor,
    pub u_n: Tensor,
    pub b_n: Tensor,
    pub b_hn: Tensor,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        // Both input and recurrent weights use the hidden width as fan-in.
        let mut w = |r, c| init_uniform(r, c, hidden, rng);
        Self {
            w_z: w(input, hidden),
            u_z: w(hidden, hidden),
            b_z: w(1, hidden),
            w_r: w(input, hidden),
            u_r: w(hidden, hidden),
            b_r: w(1, hidden),
            w_n: w(input, hidden),
            u_n: w(hidden, hidden),
            b_n: w(1, hidden),
            b_hn: w(1, hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let z = |r, c| Tensor::zeros(&[r, c]).with_requires_grad();
        Self {
            w_z: z(input, hidden),
            u_z: z(hidden, hidden),
            b_z: z(1, hidden),
            w_r: z(input, hidden),
            u_r: z(hidden, hidden),
            b_r: z(1, hidden),
            w_n: z(input, hidden),
            u_n: z(hidden, hidden),
            b_n: z(1, hidden),
            b_hn: z(1, hidden),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.u_z.rows()
    }

    /// One step on the tape; returns the new hidden state (also the output).
    pub fn step_vars(&self, tape: &mut Tape, vars: &[Var], x: Var, h: Var) -> Var {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n, b_hn] = vars else {
            panic!("GRU cell binds 10 tensors, got {}", vars.len());
        };
        let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| {
            let xw = tape.matmul(x, w);
            let hu = tape.matmul(h, u);
            let s = tape.add(xw, hu);
            let s = tape.add_row(s, b);
            tape.sigmoid(s)
        };
        let z = gate(tape, *w_z, *u_z, *b_z);
        let r = gate(tape, *w_r, *u_r, *b_r);
        let xn = tape.matmul(x, *w_n);
        let xn = tape.add_row(xn, *b_n);
        let hn = tape.matmul(h, *u_n);
        let hn = tape.add_row(hn, *b_hn);
        let rhn = tape.mul(r, hn);
        let pre = tape.add(xn, rhn);
        let n = tape.tanh(pre);
        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    /// Tape-free step on `[rows, input]` and `[rows, hidden]` batches.
    pub fn step(&self, input: &Tensor, hidden: &Tensor) -> Result<(Tensor, Tensor)> {
        if input.cols() != self.input_width() || hidden.cols() != self.hidden_width() || input.rows() != hidden.rows() {
            return Err(Error::ShapeMismatch {
                op: "recurrent step",
                expected: vec![input.rows(), self.input_width(), self.hidden_width()],
                actual: vec![input.rows(), input.cols(), hidden.cols()],
            });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.input(input);
        let h = tape.input(hidden);
        let h2 = self.step_vars(&mut tape, &vars, x, h);
        tape.check()?;
        let out = tape.to_tensor(h2);
        Ok((out.clone(), out))
    }
}

impl Module for GruCell {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_z".into(), &self.w_z),
            ("u_z".into(), &self.u_z),
            ("b_z".into(), &self.b_z),
            ("w_r".into(), &self.w_r),
            ("u_r".into(), &self.u_r),
            ("b_r".into(), &self.b_r),
            ("w_n".into(), &self.w_n),
            ("u_n".into(), &self.u_n),
            ("b_n".into(), &self.b_n),
            ("b_hn".into(), &self.b_hn),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
            &mut self.b_hn,
        ]
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_identity_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], &[Activation::Identity, Activation::Identity]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1., -4., 2., 0.3, 9., -1.]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut net = Mlp::zeros(&[2, 2], &[Activation::Identity]).unwrap();
        net.layers_mut()[0].weight.data_mut().copy_from_slice(&[1., 0., 0., 1.]);
        let x = Tensor::matrix(1, 2, vec![1., 2.]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn relu_net_matches_hand_forward() {
        // 1 -> 2 -> 1, relu hidden
        let mut net = Mlp::zeros(&[1, 2, 1], &[Activation::Relu, Activation::Identity]).unwrap();
        let l = net.layers_mut();
        l[0].weight.data_mut().copy_from_slice(&[0.8, -0.6]);
        l[0].bias.data_mut().copy_from_slice(&[0.1, 0.2]);
        l[1].weight.data_mut().copy_from_slice(&[1.5, -2.0]);
        l[1].bias.data_mut().copy_from_slice(&[0.05]);
        let x = 0.5;
        let h = [(0.8f64 * x + 0.1).max(0.0), (-0.6f64 * x + 0.2).max(0.0)];
        let expected = 1.5 * h[0] - 2.0 * h[1] + 0.05;
        let y = net.forward(&Tensor::matrix(1, 1, vec![x]).unwrap()).unwrap();
        assert!((y.data()[0] - expected).abs() < 1e-15);
        assert!((y.data()[0] - 0.80).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_matches_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let widths = [5, 7, 3, 2];
        let net = Mlp::new(&widths, &[Activation::Relu, Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(net.num_params(), expected);
    }

    #[test]
    fn fused_forward_matches_tape_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 16, 8, 2], &[Activation::Relu, Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let x = Tensor::matrix(5, 3, (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.input(&x);
        let y = net.forward_vars(&mut tape, &vars, xv);
        assert_eq!(tape.value(y), net.forward(&x).unwrap().data());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 1], &[Activation::Identity]).unwrap();
        let x = Tensor::matrix(1, 2, vec![1., 2.]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gru_zero_params_halves_hidden() {
        let cell = GruCell::zeros(2, 3);
        let x = Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap();
        let h = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let (out, h2) = cell.step(&x, &h).unwrap();
        assert_eq!(h2.data(), &[0.5, -1.0, 0.25]);
        assert_eq!(out, h2);
    }

    #[test]
    fn gru_saturated_update_gate_keeps_hidden() {
        let mut cell = GruCell::zeros(2, 3);
        cell.b_z.data_mut().fill(40.0);
        let x = Tensor::zeros(&[1, 2]);
        let h = Tensor::matrix(1, 3, vec![0.3, -0.9, 2.5]).unwrap();
        let (_, h2) = cell.step(&x, &h).unwrap();
        assert_eq!(h2.data(), h.data());
    }

    #[test]
    fn gru_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = GruCell::new(3, 4, &mut rng);
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let h = Tensor::matrix(2, 4, vec![0.0, 0.1, -0.2, 0.3, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(cell.step(&x, &h).unwrap(), cell.step(&x, &h).unwrap());
    }
}
