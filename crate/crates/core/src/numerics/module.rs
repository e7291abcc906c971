use crate::error::{Error, Result};
use crate::numerics::{Gradients, Tape, Tensor, Var};

/// A collection of named parameter tensors with a fixed order.
///
/// The order of [`Module::named_params`] is the binding order used by
/// [`Module::bind`], the optimizer moment layout, and the checkpoint layout.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Places every parameter on the tape as a differentiable leaf.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| {
                let v = tape.param(t);
                tape.label(v, name);
                v
            })
            .collect()
    }

    /// Adds the tape gradients of the bound leaves into the parameters.
    fn accumulate_grads(&mut self, grads: &Gradients, vars: &[Var]) -> Result<()> {
        let params = self.params_mut();
        if params.len() != vars.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grads",
                expected: vec![params.len()],
                actual: vec![vars.len()],
            });
        }
        for (p, v) in params.into_iter().zip(vars) {
            if let Some(g) = grads.get(*v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named_params() {
            t.check_finite(&name)?;
        }
        Ok(())
    }
}

/// Copies parameter values from `src` into `dst`.
pub fn copy_params<M: Module>(dst: &mut M, src: &M) -> Result<()> {
    polyak_update(dst, src, 1.0)
}

/// `delayed ← (1 − rate)·delayed + rate·live`, elementwise over all parameters.
pub fn polyak_update<M: Module>(delayed: &mut M, live: &M, rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("polyak rate {rate} outside (0, 1]")));
    }
    let src = live.params();
    let dst = delayed.params_mut();
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch {
            op: "polyak_update",
            expected: vec![dst.len()],
            actual: vec![src.len()],
        });
    }
    for (d, s) in dst.into_iter().zip(src) {
        if d.shape() != s.shape() {
            return Err(Error::ShapeMismatch {
                op: "polyak_update",
                expected: d.shape().to_vec(),
                actual: s.shape().to_vec(),
            });
        }
        if rate == 1.0 {
            d.data_mut().copy_from_slice(s.data());
        } else {
            for (x, y) in d.data_mut().iter_mut().zip(s.data()) {
                *x = (1.0 - rate) * *x + rate * y;
            }
        }
    }
    Ok(())
}

/// Largest elementwise gap between two modules with the same layout.
pub fn max_param_gap<M: Module>(a: &M, b: &M) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}
