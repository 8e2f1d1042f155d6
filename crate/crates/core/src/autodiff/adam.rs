use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment accumulators for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            first: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            second: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.second.iter().flatten().copied()
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        params.check_same_layout(grads, "adam_step")?;
        if self.first.len() != params.len()
            || self.first.iter().zip(params.tensors()).any(|(m, t)| m.len() != t.len())
        {
            return Err(crate::error::Error::ShapeMismatch {
                op: "adam_step",
                detail: "optimizer state does not match parameters".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
