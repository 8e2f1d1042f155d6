use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{invalid, Result};

/// Scalar-valued model evaluated on a fresh tape from registered parameters.
pub trait ScalarModel {
    fn forward(&self, tape: &mut Tape, params: &[Var]) -> Result<Var>;
}

impl<F> ScalarModel for F
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn forward(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        self(tape, params)
    }
}

/// Which coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many coordinates per tensor, chosen with the given seed.
    Sampled { per_tensor: usize, seed: u64 },
}

fn eval(model: &dyn ScalarModel, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape)?;
    let out = model.forward(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Largest relative deviation between tape gradients and central differences
/// with step `h`; the denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(model: &dyn ScalarModel, params: &ParamSet, h: f64, coverage: Coverage) -> Result<f64> {
    if !(h > 0.0) {
        return invalid("finite difference step must be positive");
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape)?;
    let out = model.forward(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic = params.collect_grads(&grads, &vars);

    let mut rng = match coverage {
        Coverage::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coverage::All => None,
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (ti, tensor) in params.tensors().iter().enumerate() {
        let coords: Vec<usize> = match (coverage, rng.as_mut()) {
            (Coverage::Sampled { per_tensor, .. }, Some(r)) if per_tensor < tensor.len() => {
                let mut c = sample(r, tensor.len(), per_tensor).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..tensor.len()).collect(),
        };
        for j in coords {
            let orig = tensor.data()[j];
            probe.get_mut(ti).data_mut()[j] = orig + h;
            let up = eval(model, &probe)?;
            probe.get_mut(ti).data_mut()[j] = orig - h;
            let down = eval(model, &probe)?;
            probe.get_mut(ti).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
