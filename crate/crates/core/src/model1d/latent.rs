use std::f64::consts::TAU;

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::rotations::Angle;
use crate::scene1d::CROP_LEN;

/// Channel widths of the five convolution stages.
pub const ENCODER_CHANNELS: [usize; 5] = [16, 32, 32, 64, 64];
pub const ENCODER_GROUPS: usize = 4;
pub const ENCODER_FC: usize = 64;
/// Spatial length after the five pooling stages of a 65-sample crop.
pub const ENCODER_FINAL_LEN: usize = 3;
const STANDARDIZE_EPS: f64 = 1e-6;

/// Crops of one mini-batch together with their dataset indices.
#[derive(Clone, Copy, Debug)]
pub struct LatentBatch<'a> {
    pub indices: &'a [usize],
    /// Row-major `[B, 65]` raw crop samples.
    pub crops: &'a [f64],
}

impl LatentBatch<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Maps observations to angles on the tape.
pub trait LatentModel: Send + Sync {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Predicted angles `[B]`.
    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &LatentBatch) -> Result<Var>;

    fn boxed_clone(&self) -> Box<dyn LatentModel>;

    fn predict(&self, batch: &LatentBatch) -> Result<Vec<Angle>> {
        let mut tape = Tape::new();
        let vars = self.params().register(&mut tape)?;
        let out = self.forward(&mut tape, &vars, batch)?;
        tape.value(out).data().iter().map(|&a| Angle::new(a)).collect()
    }
}

impl Clone for Box<dyn LatentModel> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Per-crop standardization: subtract the mean, divide by `std + 1e-6`.
pub fn standardize(crop: &[f64]) -> Vec<f64> {
    let n = crop.len() as f64;
    let mean = crop.iter().sum::<f64>() / n;
    let sd = (crop.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    crop.iter().map(|v| (v - mean) / (sd + STANDARDIZE_EPS)).collect()
}

/// Convolutional crop encoder with a two-output angle head.
#[derive(Clone, Debug)]
pub struct Encoder1D {
    params: ParamSet,
}

impl Encoder1D {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut cin = 1;
        for (i, &cout) in ENCODER_CHANNELS.iter().enumerate() {
            let fan_in = cin * crate::autodiff::CONV_KERNEL;
            params.push_uniform(format!("conv{i}.w"), &[cout, cin, crate::autodiff::CONV_KERNEL], fan_in, rng);
            params.push_uniform(format!("conv{i}.b"), &[cout], fan_in, rng);
            params.push(format!("norm{i}.gamma"), Tensor::filled(&[cout], 1.0));
            params.push(format!("norm{i}.beta"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        let flat = cin * ENCODER_FINAL_LEN;
        params.push_uniform("fc.w", &[flat, ENCODER_FC], flat, rng);
        params.push_uniform("fc.b", &[ENCODER_FC], flat, rng);
        params.push_uniform("head.w", &[ENCODER_FC, 2], ENCODER_FC, rng);
        params.push_uniform("head.b", &[2], ENCODER_FC, rng);
        Self { params }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        if params.len() != 4 * ENCODER_CHANNELS.len() + 4 || params.index_of("head.w").is_none() {
            return invalid("parameter layout does not match the encoder");
        }
        Ok(Self { params })
    }

    /// Head outputs `(u, v)` per crop: `[B, 2]`.
    pub fn head(&self, tape: &mut Tape, params: &[Var], crops: &[f64]) -> Result<Var> {
        if crops.is_empty() || crops.len() % CROP_LEN != 0 {
            return Err(Error::ShapeMismatch {
                op: "encoder",
                detail: format!("expected 65-sample crops, got {} values", crops.len()),
            });
        }
        let b = crops.len() / CROP_LEN;
        let mut input = Vec::with_capacity(crops.len());
        for c in crops.chunks(CROP_LEN) {
            input.extend(standardize(c));
        }
        let mut h = tape.leaf(Tensor::new(vec![b, 1, CROP_LEN], input)?)?;
        for i in 0..ENCODER_CHANNELS.len() {
            let p = &params[4 * i..4 * i + 4];
            h = tape.conv1d(h, p[0], p[1])?;
            h = tape.silu(h)?;
            if tape.value(h).shape()[2] % 2 == 1 {
                h = tape.pad_edge(h)?;
            }
            h = tape.maxpool1d(h)?;
            h = tape.group_norm(h, p[2], p[3], ENCODER_GROUPS)?;
        }
        let shape = tape.value(h).shape().to_vec();
        let h = tape.reshape(h, &[b, shape[1] * shape[2]])?;
        let base = 4 * ENCODER_CHANNELS.len();
        let h = tape.dense(h, params[base], params[base + 1])?;
        let h = tape.silu(h)?;
        tape.dense(h, params[base + 2], params[base + 3])
    }
}

impl LatentModel for Encoder1D {
    fn kind(&self) -> &'static str {
        "encoder"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &LatentBatch) -> Result<Var> {
        let h = self.head(tape, params, batch.crops)?;
        tape.atan2_rows(h)
    }

    fn boxed_clone(&self) -> Box<dyn LatentModel> {
        Box::new(self.clone())
    }
}

/// Untracked encoder prediction for one crop.
pub fn encoder_forward(encoder: &Encoder1D, crop: &[f64]) -> Result<Angle> {
    let batch = LatentBatch { indices: &[0], crops: crop };
    Ok(encoder.predict(&batch)?[0])
}

/// One independently optimized angle per observation.
#[derive(Clone, Debug)]
pub struct FreeAngles {
    params: ParamSet,
}

impl FreeAngles {
    /// Angles initialized uniformly on `[0, 2π)`.
    pub fn new<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let init = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        params.push("angles", Tensor::from_vec(init));
        Self { params }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        if params.len() != 1 || params.get(0).shape().len() != 1 {
            return invalid("parameter layout does not match free angles");
        }
        Ok(Self { params })
    }
}

impl LatentModel for FreeAngles {
    fn kind(&self) -> &'static str {
        "free"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], batch: &LatentBatch) -> Result<Var> {
        tape.gather(params[0], batch.indices)
    }

    fn boxed_clone(&self) -> Box<dyn LatentModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{finite_difference_check, Coverage};
    use crate::scene1d::{render_crop, sample_function};

    fn crop(seed: u64, angle: f64) -> Vec<f64> {
        render_crop(&sample_function(seed), Angle::new(angle).unwrap()).to_vec()
    }

    #[test]
    fn atan2_convention() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap()).unwrap();
        let a = tape.atan2_rows(h).unwrap();
        assert_eq!(tape.value(a).data()[0], 0.0);
        assert!((tape.value(a).data()[1] - 1.5 * PI).abs() < 1e-15);

        let z = tape.leaf(Tensor::new(vec![1, 2], vec![1e-9, 0.0]).unwrap()).unwrap();
        assert!(matches!(tape.atan2_rows(z), Err(Error::DegenerateHead(_))));
    }

    #[test]
    fn encoder_shapes() {
        let enc = Encoder1D::new(&mut ChaCha8Rng::seed_from_u64(1));
        let c = crop(1, 0.5);
        let a = encoder_forward(&enc, &c).unwrap();
        assert!((0.0..TAU).contains(&a.radians()));
        assert!(encoder_forward(&enc, &c[..64]).is_err());

        let mut tape = Tape::new();
        let vars = enc.params().register(&mut tape).unwrap();
        let two: Vec<f64> = c.iter().chain(crop(2, 1.0).iter()).copied().collect();
        let h = enc.head(&mut tape, &vars, &two).unwrap();
        assert_eq!(tape.value(h).shape(), &[2, 2]);
    }

    #[test]
    fn encoder_gradients_match_differences() {
        let enc = Encoder1D::new(&mut ChaCha8Rng::seed_from_u64(2));
        let c = crop(3, 2.0);
        let model = |tape: &mut Tape, vars: &[Var]| {
            let batch = LatentBatch { indices: &[0], crops: &c };
            let a = enc.forward(tape, vars, &batch)?;
            tape.sum(a)
        };
        let err = finite_difference_check(&model, enc.params(), 1e-5, Coverage::Sampled { per_tensor: 10, seed: 4 }).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn free_angles_gather() {
        let fa = FreeAngles::new(10, &mut ChaCha8Rng::seed_from_u64(3));
        let crops = vec![0.0; 2 * CROP_LEN];
        let batch = LatentBatch { indices: &[7, 2], crops: &crops };
        let got = fa.predict(&batch).unwrap();
        assert_eq!(got[0].radians(), fa.params().get(0).data()[7]);
        assert_eq!(got[1].radians(), fa.params().get(0).data()[2]);
    }

    #[test]
    fn standardized_crop() {
        let s = standardize(&crop(4, 0.1));
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let var = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
