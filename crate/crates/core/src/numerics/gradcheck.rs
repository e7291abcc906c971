use crate::error::Result;
use crate::numerics::{Module, Tape, Var};

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU or Huber kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every parameter coordinate of `module` against central finite
/// differences of `loss` with step `h`.
///
/// `loss` builds a scalar on the given tape from the bound parameter leaves.
pub fn check_gradients<M, F>(module: &mut M, loss: F, h: f64) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &mut Tape, &[Var]) -> Var,
{
    let eval = |m: &M| -> Result<(f64, Option<u64>)> {
        let mut tape = Tape::new();
        tape.track_kinks();
        let vars = m.bind(&mut tape);
        let l = loss(m, &mut tape, &vars);
        tape.check()?;
        Ok((tape.scalar(l), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    tape.track_kinks();
    let vars = module.bind(&mut tape);
    let l = loss(module, &mut tape, &vars);
    let base_sig = tape.kink_signature();
    let grads = tape.backward(l)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(module.params())
        .map(|(v, p)| grads.get(*v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::default();
    let n_tensors = analytic.len();
    for p in 0..n_tensors {
        for i in 0..analytic[p].len() {
            let orig = module.params()[p].data()[i];
            module.params_mut()[p].data_mut()[i] = orig + h;
            let (plus, sig_plus) = eval(module)?;
            module.params_mut()[p].data_mut()[i] = orig - h;
            let (minus, sig_minus) = eval(module)?;
            module.params_mut()[p].data_mut()[i] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(relative_error(analytic[p][i], numeric));
        }
    }
    Ok(report)
}
