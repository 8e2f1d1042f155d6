use rand::Rng;

use crate::autodiff::{encode_row, interp_nodes, ParamSet, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::rotations::Angle;
use crate::scene1d::{crop_offsets, CROP_LEN};

/// Frequency bands of the periodic input encoding (`2^0 .. 2^5`).
pub const PE_BANDS: usize = 6;
pub const FIELD_HIDDEN: usize = 64;
pub const FIELD_LAYERS: usize = 4;
pub const EXPLICIT_NODES: usize = 512;

/// Fixed output affine `shift + scale * raw`, matching the target's units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputAffine {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutputAffine {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

/// A learnable periodic function SO(2) → R.
pub trait Field1D: Send + Sync {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn affine(&self) -> OutputAffine;

    /// Values at `points[P]` (radians) on the tape, shape `[P]`.
    fn forward(&self, tape: &mut Tape, params: &[Var], points: Var) -> Result<Var>;

    fn boxed_clone(&self) -> Box<dyn Field1D>;

    /// Untracked evaluation at many angles.
    fn eval_many(&self, thetas: &[f64]) -> Result<Vec<f64>> {
        if thetas.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.params().register(&mut tape)?;
        let x = tape.leaf(Tensor::from_vec(thetas.to_vec()))?;
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    fn eval(&self, theta: Angle) -> Result<f64> {
        Ok(self.eval_many(&[theta.radians()])?[0])
    }
}

impl Clone for Box<dyn Field1D> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

fn apply_affine(tape: &mut Tape, raw: Var, affine: OutputAffine) -> Result<Var> {
    let scaled = tape.scale(raw, affine.scale)?;
    let shift = vec![affine.shift; tape.value(scaled).len()];
    tape.add_const(scaled, &shift)
}

/// Differentiable field evaluation at a single angle.
pub fn field_eval(field: &dyn Field1D, tape: &mut Tape, params: &[Var], theta: Var) -> Result<Var> {
    field.forward(tape, params, theta)
}

/// Renders the 65-sample crops centred at `centers[B]`: `[B, 65]`.
pub fn render_predicted_crops(field: &dyn Field1D, tape: &mut Tape, params: &[Var], centers: Var) -> Result<Var> {
    let b = tape.value(centers).len();
    let pts = tape.outer_add(centers, &crop_offsets())?;
    let flat = tape.reshape(pts, &[b * CROP_LEN])?;
    let vals = field.forward(tape, params, flat)?;
    tape.reshape(vals, &[b, CROP_LEN])
}

/// Untracked crop rendering at one center.
pub fn render_predicted_crop(field: &dyn Field1D, center: Angle) -> Result<[f64; CROP_LEN]> {
    let pts: Vec<f64> = crop_offsets().iter().map(|s| center.radians() + s).collect();
    let vals = field.eval_many(&pts)?;
    let mut out = [0.0; CROP_LEN];
    out.copy_from_slice(&vals);
    Ok(out)
}

/// Coordinate MLP: periodic encoding, four ReLU layers of 64, scalar output.
#[derive(Clone, Debug)]
pub struct NeuralField1D {
    params: ParamSet,
    bands: usize,
    affine: OutputAffine,
}

impl NeuralField1D {
    pub fn new<R: Rng>(rng: &mut R, affine: OutputAffine) -> Self {
        let mut params = ParamSet::new();
        let mut fan_in = 2 * PE_BANDS;
        for l in 0..FIELD_LAYERS {
            params.push_uniform(format!("w{l}"), &[fan_in, FIELD_HIDDEN], fan_in, rng);
            params.push_uniform(format!("b{l}"), &[FIELD_HIDDEN], fan_in, rng);
            fan_in = FIELD_HIDDEN;
        }
        params.push_uniform("w_out", &[FIELD_HIDDEN, 1], FIELD_HIDDEN, rng);
        params.push_uniform("b_out", &[1], FIELD_HIDDEN, rng);
        Self { params, bands: PE_BANDS, affine }
    }

    pub fn from_params(params: ParamSet, affine: OutputAffine) -> Result<Self> {
        if params.len() != 2 * FIELD_LAYERS + 2 || params.get(0).shape() != [2 * PE_BANDS, FIELD_HIDDEN] {
            return invalid("parameter layout does not match a neural field");
        }
        Ok(Self { params, bands: PE_BANDS, affine })
    }

    /// Input features for one angle; exposed for tests.
    pub fn encoding(&self, theta: f64) -> Vec<f64> {
        let mut out = Vec::new();
        encode_row(theta, self.bands, &mut out);
        out
    }
}

impl Field1D for NeuralField1D {
    fn kind(&self) -> &'static str {
        "neural"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn affine(&self) -> OutputAffine {
        self.affine
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], points: Var) -> Result<Var> {
        let n = tape.value(points).len();
        let mut h = tape.positional_encoding(points, self.bands)?;
        for l in 0..FIELD_LAYERS {
            h = tape.dense(h, params[2 * l], params[2 * l + 1])?;
            h = tape.relu(h)?;
        }
        let out = tape.dense(h, params[2 * FIELD_LAYERS], params[2 * FIELD_LAYERS + 1])?;
        let flat = tape.reshape(out, &[n])?;
        apply_affine(tape, flat, self.affine)
    }

    fn boxed_clone(&self) -> Box<dyn Field1D> {
        Box::new(self.clone())
    }
}

/// 512 values on a uniform periodic grid with linear interpolation.
#[derive(Clone, Debug)]
pub struct ExplicitField1D {
    params: ParamSet,
    affine: OutputAffine,
}

impl ExplicitField1D {
    /// Grid starts at zero (the affine shift in output units).
    pub fn new(affine: OutputAffine) -> Self {
        let mut params = ParamSet::new();
        params.push("grid", Tensor::zeros(&[EXPLICIT_NODES]));
        Self { params, affine }
    }

    pub fn from_params(params: ParamSet, affine: OutputAffine) -> Result<Self> {
        if params.len() != 1 || params.get(0).shape().len() != 1 || params.get(0).len() < 2 {
            return invalid("parameter layout does not match an explicit field");
        }
        Ok(Self { params, affine })
    }

    pub fn from_values(values: Vec<f64>, affine: OutputAffine) -> Result<Self> {
        let mut params = ParamSet::new();
        params.push("grid", Tensor::new(vec![values.len()], values)?);
        Self::from_params(params, affine)
    }

    /// Nodes bracketing `theta`.
    pub fn bracket(&self, theta: f64) -> (usize, usize) {
        let (i0, i1, _) = interp_nodes(theta, self.params.get(0).len());
        (i0, i1)
    }
}

impl Field1D for ExplicitField1D {
    fn kind(&self) -> &'static str {
        "explicit"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn affine(&self) -> OutputAffine {
        self.affine
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], points: Var) -> Result<Var> {
        let raw = tape.interp_periodic(params[0], points)?;
        apply_affine(tape, raw, self.affine)
    }

    fn boxed_clone(&self) -> Box<dyn Field1D> {
        Box::new(self.clone())
    }
}
