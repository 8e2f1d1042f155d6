use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model1d::Field1D;
use crate::rotations::{Angle, EquivalenceRelation};
use crate::scene1d::{crop_offsets, CROP_LEN};

/// Output of the batched modulo loss.
#[derive(Debug)]
pub struct ModuloLoss {
    /// Mean over crops of the selected branch loss (scalar).
    pub loss: Var,
    /// Selected branch `k*` per crop.
    pub selected: Vec<usize>,
    /// All branch losses, row-major `[B, N]`.
    pub branch_losses: Vec<f64>,
}

/// Crop-sample offsets of every branch, branch-major: `2πk/N + s_j`.
pub fn branch_offsets(rel: &EquivalenceRelation) -> Vec<f64> {
    let s = crop_offsets();
    (0..rel.order())
        .flat_map(|k| {
            let shift = rel.shift(k);
            s.iter().map(move |o| shift + o)
        })
        .collect()
}

/// Index of the smallest value; ties go to the smallest index.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// For each crop, renders all `N` members of the class of its predicted
/// angle and keeps the branch with the smallest squared error. Only the
/// selected branch receives gradient.
pub fn modulo_loss_batch(
    field: &dyn Field1D,
    tape: &mut Tape,
    params: &[Var],
    angles: Var,
    targets: &[f64],
    rel: &EquivalenceRelation,
) -> Result<ModuloLoss> {
    let b = tape.value(angles).len();
    if targets.len() != b * CROP_LEN {
        return Err(Error::ShapeMismatch {
            op: "modulo_loss",
            detail: format!("{b} angles but {} target samples", targets.len()),
        });
    }
    let n = rel.order();
    let pts = tape.outer_add(angles, &branch_offsets(rel))?;
    let flat = tape.reshape(pts, &[b * n * CROP_LEN])?;
    let vals = field.forward(tape, params, flat)?;
    let rows = tape.reshape(vals, &[b * n, CROP_LEN])?;
    let mut repeated = Vec::with_capacity(b * n * CROP_LEN);
    for t in targets.chunks(CROP_LEN) {
        for _ in 0..n {
            repeated.extend_from_slice(t);
        }
    }
    let per_branch = tape.sq_err_rows(rows, &repeated)?;
    let branch_losses = tape.value(per_branch).data().to_vec();
    let selected: Vec<usize> = branch_losses.chunks(n).map(argmin_first).collect();
    let idx: Vec<usize> = selected.iter().enumerate().map(|(i, k)| i * n + k).collect();
    let picked = tape.gather(per_branch, &idx)?;
    let loss = tape.mean(picked)?;
    Ok(ModuloLoss { loss, selected, branch_losses })
}

/// Modulo loss of one crop at one predicted angle: `(loss, k*)`.
pub fn modulo_loss(field: &dyn Field1D, predicted: Angle, crop: &[f64], rel: &EquivalenceRelation) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let params = field.params().register(&mut tape)?;
    let a = tape.leaf(Tensor::scalar(predicted.radians()))?;
    let out = modulo_loss_batch(field, &mut tape, &params, a, crop, rel)?;
    Ok((tape.value(out.loss).item(), out.selected[0]))
}

/// Plain rendered squared error at `predicted`.
pub fn l2_loss(field: &dyn Field1D, predicted: Angle, crop: &[f64]) -> Result<f64> {
    modulo_loss(field, predicted, crop, &EquivalenceRelation::identity()).map(|(l, _)| l)
}

/// Member of the class of `raw` whose rendering best matches `crop`.
pub fn select_class_member(field: &dyn Field1D, raw: Angle, crop: &[f64], rel: &EquivalenceRelation) -> Result<Angle> {
    let (_, k) = modulo_loss(field, raw, crop, rel)?;
    Ok(raw.offset(rel.shift(k)))
}
