use std::io::Write;

use super::renderer::{equator, squared_distance, PoseRenderer};
use crate::error::{invalid, Error, Result};
use crate::io_util::fmt_f64;
use crate::rotations::{Angle, EquivalenceRelation, PoseSO3};

/// Final distance to the reference orbit below which a run has converged.
pub const CONVERGENCE_DEG: f64 = 3.0;
pub const DEFAULT_MAX_ITERS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    /// Gradient step size `γ`.
    pub step: f64,
    pub max_iters: usize,
    /// Grid spacing; sets the difference step (`spacing / 4`) and the
    /// largest move per iteration.
    pub spacing: f64,
    pub relation: EquivalenceRelation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentStep {
    pub iteration: usize,
    pub azimuth: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    /// Accepted iterates, starting with the initial pose.
    pub trajectory: Vec<DescentStep>,
    pub converged: bool,
    /// Distance from the last iterate to the closest member of the reference class.
    pub final_distance: f64,
}

/// Azimuth-only gradient descent on `z ↦ S(z, z*)` with central finite
/// differences. Moves are clipped to one grid spacing; a move that does not
/// decrease the objective halves the step. Stops at a zero objective, when
/// the move becomes negligible, or after `max_iters`.
pub fn pose_descent(
    renderer: &dyn PoseRenderer,
    reference: &PoseSO3,
    start: &PoseSO3,
    options: DescentOptions,
) -> Result<Descent> {
    if !(options.step > 0.0) || !(options.spacing > 0.0) {
        return invalid("descent step and spacing must be positive");
    }
    let target = renderer.render(reference)?;
    let elevation = start.elevation();
    let objective = |az: f64| -> Result<f64> {
        let pose = if elevation == 0.0 { equator(az)? } else { PoseSO3::new(az, elevation, 0.0)? };
        squared_distance(&renderer.render(&pose)?, &target)
    };
    let h = options.spacing / 4.0;
    let mut z = start.azimuth.radians();
    let mut fz = objective(z)?;
    let mut trajectory = vec![DescentStep { iteration: 0, azimuth: z, value: fz }];
    let mut scale = 1.0;
    for it in 1..=options.max_iters {
        if fz <= 0.0 {
            break;
        }
        let g = (objective(z + h)? - objective(z - h)?) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("descent gradient at azimuth {z}")));
        }
        let mv = (-options.step * g).clamp(-options.spacing, options.spacing) * scale;
        if mv.abs() < 1e-3 * options.spacing {
            break;
        }
        let next = Angle::new(z + mv)?.radians();
        let f_next = objective(next)?;
        if f_next < fz {
            z = next;
            fz = f_next;
            trajectory.push(DescentStep { iteration: it, azimuth: z, value: fz });
        } else {
            scale *= 0.5;
        }
    }
    let final_distance = options.relation.orbit_distance(Angle::new(z)?, reference.azimuth);
    Ok(Descent { trajectory, converged: final_distance < CONVERGENCE_DEG.to_radians(), final_distance })
}

/// Trajectory CSV: `iteration,azimuth_rad,value`, then a `#` summary line.
pub fn write_trajectory_csv<W: Write>(mut w: W, d: &Descent) -> Result<()> {
    writeln!(w, "iteration,azimuth_rad,value")?;
    for s in &d.trajectory {
        writeln!(w, "{},{},{}", s.iteration, fmt_f64(s.azimuth), fmt_f64(s.value))?;
    }
    writeln!(w, "#converged={} final_distance_rad={}", d.converged, fmt_f64(d.final_distance))?;
    Ok(())
}
