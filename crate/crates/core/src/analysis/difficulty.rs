use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::map::{distances_to_references, quotient_ssm, thread_pool, GridSpec, SelfSimilarityMap};
use super::renderer::PoseRenderer;
use super::roa::region_of_attraction;
use crate::error::{invalid, Result};
use crate::io_util::fmt_f64;
use crate::rotations::PoseSO3;

/// Difficulty estimate for one replication order.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyEntry {
    pub order: usize,
    /// Mean fractional coverage of the quotient regions of attraction.
    pub estimate: f64,
    /// Binomial standard error over all (reference, node) pairs.
    pub stderr: f64,
    pub n_ref: usize,
    /// Nodes of each quotient map.
    pub nodes: usize,
    /// References whose quotient map was constant.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyReport {
    /// Symmetry order of the scene, when known.
    pub symmetry: Option<usize>,
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub resolution: usize,
    pub entries: Vec<DifficultyEntry>,
}

/// Reference poses: uniform azimuths on the equator row, otherwise uniform
/// grid nodes.
pub fn sample_references(grid: &GridSpec, n_ref: usize, seed: u64) -> Result<Vec<PoseSO3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let equator = grid.elevations == [0.0];
    (0..n_ref)
        .map(|_| {
            if equator {
                PoseSO3::new(rng.random_range(0.0..TAU), 0.0, 0.0)
            } else {
                grid.pose(rng.random_range(0..grid.len()))
            }
        })
        .collect()
}

/// Plain self-similarity maps for each reference, sharing the grid renders.
pub fn reference_maps(
    renderer: &dyn PoseRenderer,
    grid: &GridSpec,
    references: &[PoseSO3],
    jobs: usize,
) -> Result<Vec<SelfSimilarityMap>> {
    let pool = thread_pool(jobs)?;
    let renders: Vec<Vec<f64>> =
        pool.install(|| references.par_iter().map(|p| renderer.render(p)).collect::<Result<_>>())?;
    let dists = distances_to_references(renderer, grid, &renders, jobs)?;
    Ok(references
        .iter()
        .zip(dists)
        .map(|(r, values)| SelfSimilarityMap {
            reference: *r,
            azimuth_bins: grid.azimuth_bins,
            elevations: grid.elevations.clone(),
            order: 1,
            resolution: renderer.resolution(),
            values,
        })
        .collect())
}

/// Difficulty `D_R` for each replication order in `orders`.
pub fn difficulty_table(
    renderer: &dyn PoseRenderer,
    orders: &[usize],
    n_ref: usize,
    grid: &GridSpec,
    seed: u64,
    jobs: usize,
) -> Result<Vec<DifficultyEntry>> {
    if n_ref == 0 {
        return invalid("need at least one reference pose");
    }
    if let Some(n) = orders.iter().find(|&&n| n == 0 || grid.azimuth_bins % n != 0) {
        return invalid(format!("order {n} does not divide {} azimuth bins", grid.azimuth_bins));
    }
    let refs = sample_references(grid, n_ref, seed)?;
    let maps = reference_maps(renderer, grid, &refs, jobs)?;
    orders
        .iter()
        .map(|&n| {
            let mut covered = 0usize;
            let mut degenerate = 0;
            let mut nodes = 0;
            for m in &maps {
                let q = quotient_ssm(m, n)?;
                let region = region_of_attraction(&q)?;
                covered += region.count();
                nodes = q.values.len();
                degenerate += usize::from(region.degenerate);
            }
            let trials = (n_ref * nodes) as f64;
            let p = covered as f64 / trials;
            Ok(DifficultyEntry {
                order: n,
                estimate: p,
                stderr: (p * (1.0 - p) / trials).sqrt(),
                n_ref,
                nodes,
                degenerate,
            })
        })
        .collect()
}

/// Difficulty for a single relation.
pub fn difficulty(
    renderer: &dyn PoseRenderer,
    order: usize,
    n_ref: usize,
    grid: &GridSpec,
    seed: u64,
    jobs: usize,
) -> Result<DifficultyEntry> {
    Ok(difficulty_table(renderer, &[order], n_ref, grid, seed, jobs)?.remove(0))
}

/// CSV with columns `K,N,D,stderr,n_ref,grid,resolution,degenerate`.
pub fn write_difficulty_csv<W: Write>(mut w: W, report: &DifficultyReport) -> Result<()> {
    writeln!(w, "K,N,D,stderr,n_ref,grid,resolution,degenerate")?;
    let k = report.symmetry.map(|k| k.to_string()).unwrap_or_default();
    for e in &report.entries {
        writeln!(
            w,
            "{k},{},{},{},{},{}x{},{},{}",
            e.order,
            fmt_f64(e.estimate),
            fmt_f64(e.stderr),
            e.n_ref,
            report.azimuth_bins,
            report.elevation_bins,
            report.resolution,
            e.degenerate
        )?;
    }
    Ok(())
}
