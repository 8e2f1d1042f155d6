//! Joint training of a field and a latent predictor on 1D crops.

mod loss;
mod strategy;

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use loss::{argmin_first, branch_offsets, l2_loss, modulo_loss, modulo_loss_batch, select_class_member, ModuloLoss};
pub use strategy::{AblationMode, ModelPair, StrategyRegistry, TrainingStrategy};

use crate::autodiff::{read_checkpoint, write_checkpoint, AdamState, ParamSet, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::io_util::fmt_f64;
use crate::model1d::{
    Encoder1D, ExplicitField1D, Field1D, FreeAngles, LatentBatch, LatentModel, NeuralField1D, OutputAffine,
};
use crate::rotations::{align_global_1d, Angle, EquivalenceRelation};
use crate::scene1d::{CropDataset1D, FourierFunction1D, CROP_LEN};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_STEPS: usize = 30_000;
pub const DEFAULT_ORDER: usize = 2;
/// Points of the uniform grid used for the reconstruction error.
pub const RECON_GRID: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Registered strategy name (`full`, `explicit`, `l2`, `free`).
    pub mode: String,
    pub order: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::Full.as_str().to_string(),
            order: DEFAULT_ORDER,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH,
            steps: DEFAULT_STEPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_mode(mut self, mode: AblationMode) -> Self {
        self.mode = mode.as_str().to_string();
        self
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.order == 0 {
            return invalid("replication order must be at least 1");
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return invalid(format!("batch size {} must be in 1..={dataset_len}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid("learning rate must be positive and finite");
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) models of one run.
#[derive(Clone)]
pub struct TrainedModels {
    pub mode: String,
    pub field: Box<dyn Field1D>,
    pub latent: Box<dyn LatentModel>,
    pub relation: EquivalenceRelation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub losses: Vec<f64>,
    /// Aligned mean angular error, radians.
    pub angular_error: f64,
    /// Reconstruction MSE after alignment, normalized by the variance of f*.
    pub reconstruction_mse: f64,
    pub wall_seconds: f64,
}

impl RunReport {
    /// `step,loss` rows followed by a `#final` summary line. Wall-clock time
    /// is left out so reruns produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_f64(*l))?;
        }
        writeln!(
            w,
            "#final angular_error_rad={} reconstruction_mse={}",
            fmt_f64(self.angular_error),
            fmt_f64(self.reconstruction_mse)
        )?;
        Ok(())
    }
}

/// Affine mapping raw network outputs to the dataset's value range.
pub fn dataset_affine(dataset: &CropDataset1D) -> OutputAffine {
    let (mean, sd) = dataset.value_stats();
    OutputAffine { shift: mean, scale: if sd > 0.0 { sd } else { 1.0 } }
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

/// Models as initialized for `config`, before any step.
pub fn initialize(dataset: &CropDataset1D, config: &TrainConfig, registry: &StrategyRegistry) -> Result<TrainedModels> {
    let strategy = registry.get(&config.mode)?;
    let ModelPair { field, latent } = strategy.build(dataset, dataset_affine(dataset), &mut init_rng(config.seed));
    Ok(TrainedModels {
        mode: config.mode.clone(),
        field,
        latent,
        relation: EquivalenceRelation::new(strategy.effective_order(config.order))?,
    })
}

/// Epoch-wise shuffled mini-batches, sampled without replacement.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, batch, rng }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

fn gather_crops(dataset: &CropDataset1D, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * CROP_LEN);
    for &i in idx {
        out.extend_from_slice(dataset.crop(i));
    }
    out
}

/// One optimization step; returns the batch loss.
fn train_step(
    models: &mut TrainedModels,
    dataset: &CropDataset1D,
    idx: &[usize],
    adam_field: &mut AdamState,
    adam_latent: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let crops = gather_crops(dataset, idx);
    let mut tape = Tape::new();
    let fvars = models.field.params().register(&mut tape)?;
    let lvars = models.latent.params().register(&mut tape)?;
    let batch = LatentBatch { indices: idx, crops: &crops };
    let angles = models.latent.forward(&mut tape, &lvars, &batch)?;
    let out = modulo_loss_batch(models.field.as_ref(), &mut tape, &fvars, angles, &crops, &models.relation)?;
    let loss = tape.value(out.loss).item();
    let grads = tape.backward(out.loss)?;
    let fg = models.field.params().collect_grads(&grads, &fvars);
    let lg = models.latent.params().collect_grads(&grads, &lvars);
    adam_field.step(models.field.params_mut(), &fg, lr)?;
    adam_latent.step(models.latent.params_mut(), &lg, lr)?;
    Ok(loss)
}

/// Trains with the built-in strategies.
pub fn train(dataset: &CropDataset1D, config: &TrainConfig) -> Result<(TrainedModels, RunReport)> {
    train_with(&StrategyRegistry::with_defaults(), dataset, config)
}

/// Trains with a strategy looked up in `registry`; deterministic given the
/// config seed.
pub fn train_with(
    registry: &StrategyRegistry,
    dataset: &CropDataset1D,
    config: &TrainConfig,
) -> Result<(TrainedModels, RunReport)> {
    config.validate(dataset.len())?;
    let start = Instant::now();
    let mut models = initialize(dataset, config, registry)?;
    let mut adam_field = AdamState::new(models.field.params());
    let mut adam_latent = AdamState::new(models.latent.params());
    let mut batcher = Batcher::new(dataset.len(), config.batch_size, shuffle_rng(config.seed));
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let idx = batcher.next();
        let loss = train_step(&mut models, dataset, &idx, &mut adam_field, &mut adam_latent, config.learning_rate)?;
        losses.push(loss);
    }
    let eval = evaluate_run(&models, dataset)?;
    let report = RunReport {
        losses,
        angular_error: eval.angular_error,
        reconstruction_mse: eval.reconstruction_mse,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((models, report))
}

/// Raw latent predictions for every crop, before class selection.
pub fn raw_predictions(models: &TrainedModels, dataset: &CropDataset1D) -> Result<Vec<Angle>> {
    let mut out = Vec::with_capacity(dataset.len());
    let chunk = 64;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for idx in all.chunks(chunk) {
        let crops = gather_crops(dataset, idx);
        out.extend(models.latent.predict(&LatentBatch { indices: idx, crops: &crops })?);
    }
    Ok(out)
}

/// Best class member of a raw prediction, judged by the rendered error.
pub fn predicted_angle(field: &dyn Field1D, raw: Angle, crop: &[f64], rel: &EquivalenceRelation) -> Result<Angle> {
    if rel.order() == 1 {
        return Ok(raw);
    }
    select_class_member(field, raw, crop, rel)
}

/// Final angle estimate for every crop of `dataset`.
pub fn predicted_angles(models: &TrainedModels, dataset: &CropDataset1D) -> Result<Vec<Angle>> {
    let raw = raw_predictions(models, dataset)?;
    raw.iter()
        .enumerate()
        .map(|(i, &r)| predicted_angle(models.field.as_ref(), r, dataset.crop(i), &models.relation))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub angular_error: f64,
    pub reconstruction_mse: f64,
    /// Offset mapping predicted angles onto ground truth.
    pub offset: Angle,
}

/// Normalized MSE between the field and `f*` shifted by `offset`, over a
/// uniform 1024-point grid.
pub fn reconstruction_error(field: &dyn Field1D, truth: &FourierFunction1D, offset: Angle) -> Result<f64> {
    let grid: Vec<f64> = (0..RECON_GRID).map(|i| TAU * i as f64 / RECON_GRID as f64).collect();
    let pred = field.eval_many(&grid)?;
    let truth_vals: Vec<f64> = grid.iter().map(|t| truth.evaluate(t + offset.radians())).collect();
    let mean = truth_vals.iter().sum::<f64>() / RECON_GRID as f64;
    let var = truth_vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / RECON_GRID as f64;
    let mse = pred.iter().zip(&truth_vals).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / RECON_GRID as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidArgument("ground-truth function has zero variance".into()));
    }
    Ok(mse / var)
}

/// Aligned mean angular error and normalized reconstruction error.
pub fn evaluate_run(models: &TrainedModels, dataset: &CropDataset1D) -> Result<Evaluation> {
    let pred = predicted_angles(models, dataset)?;
    let align = align_global_1d(&pred, dataset.gt_angles())?;
    let recon = reconstruction_error(models.field.as_ref(), &dataset.function(), align.offset)?;
    Ok(Evaluation { angular_error: align.mean_error, reconstruction_mse: recon, offset: align.offset })
}

/// Writes both models into one checkpoint; tensor names carry the model kind.
pub fn save_models<W: Write>(models: &TrainedModels, w: W) -> Result<()> {
    let mut all = ParamSet::new();
    all.extend_prefixed(&format!("field.{}.", models.field.kind()), models.field.params());
    all.extend_prefixed(&format!("latent.{}.", models.latent.kind()), models.latent.params());
    let a = models.field.affine();
    all.push("meta.affine", Tensor::from_vec(vec![a.shift, a.scale]));
    all.push("meta.order", Tensor::scalar(models.relation.order() as f64));
    write_checkpoint(w, &all)
}

pub fn load_models<R: Read>(r: R, mode: &str) -> Result<TrainedModels> {
    let all = read_checkpoint(r)?;
    let mut field_kind = None;
    let mut latent_kind = None;
    let mut fp = ParamSet::new();
    let mut lp = ParamSet::new();
    let mut affine = OutputAffine::default();
    let mut order = 1;
    for (name, t) in all.names().iter().zip(all.tensors()) {
        let parts: Vec<&str> = name.splitn(3, '.').collect();
        match parts.as_slice() {
            ["field", kind, rest] => {
                field_kind = Some(kind.to_string());
                fp.push(*rest, t.clone());
            }
            ["latent", kind, rest] => {
                latent_kind = Some(kind.to_string());
                lp.push(*rest, t.clone());
            }
            ["meta", "affine"] if t.len() == 2 => affine = OutputAffine { shift: t.data()[0], scale: t.data()[1] },
            ["meta", "order"] => order = t.item() as usize,
            _ => return Err(Error::Format(format!("unexpected checkpoint tensor '{name}'"))),
        }
    }
    let field: Box<dyn Field1D> = match field_kind.as_deref() {
        Some("neural") => Box::new(NeuralField1D::from_params(fp, affine)?),
        Some("explicit") => Box::new(ExplicitField1D::from_params(fp, affine)?),
        other => return Err(Error::Format(format!("unknown field kind {other:?}"))),
    };
    let latent: Box<dyn LatentModel> = match latent_kind.as_deref() {
        Some("encoder") => Box::new(Encoder1D::from_params(lp)?),
        Some("free") => Box::new(FreeAngles::from_params(lp)?),
        other => return Err(Error::Format(format!("unknown latent kind {other:?}"))),
    };
    Ok(TrainedModels {
        mode: mode.to_string(),
        field,
        latent,
        relation: EquivalenceRelation::new(order)?,
    })
}
