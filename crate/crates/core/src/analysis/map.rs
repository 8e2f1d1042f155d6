use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use rayon::prelude::*;

use super::renderer::{squared_distance, PoseRenderer};
use crate::error::{invalid, Error, Result};
use crate::io_util::fmt_f64;
use crate::rotations::PoseSO3;

pub const MIN_AZIMUTH_BINS: usize = 8;
pub const DEFAULT_EQUATOR_BINS: usize = 256;
pub const DEFAULT_FULL_AZIMUTH_BINS: usize = 128;
pub const DEFAULT_FULL_ELEVATION_BINS: usize = 64;

/// Pose grid: `A` azimuth nodes at `2πa/A` (wrapping) and either the single
/// equator row or `E` elevation rows at cell centers of `[-π/2, π/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub azimuth_bins: usize,
    pub elevations: Vec<f64>,
}

impl GridSpec {
    pub fn equator(azimuth_bins: usize) -> Result<Self> {
        Self::checked(azimuth_bins, vec![0.0])
    }

    pub fn full(azimuth_bins: usize, elevation_bins: usize) -> Result<Self> {
        if elevation_bins == 0 {
            return invalid("need at least one elevation bin");
        }
        let e = elevation_bins as f64;
        let rows = (0..elevation_bins).map(|j| -PI / 2.0 + PI * (j as f64 + 0.5) / e).collect();
        Self::checked(azimuth_bins, rows)
    }

    fn checked(azimuth_bins: usize, elevations: Vec<f64>) -> Result<Self> {
        if azimuth_bins < MIN_AZIMUTH_BINS {
            return invalid(format!("need at least {MIN_AZIMUTH_BINS} azimuth bins, got {azimuth_bins}"));
        }
        Ok(Self { azimuth_bins, elevations })
    }

    pub fn elevation_bins(&self) -> usize {
        self.elevations.len()
    }

    pub fn len(&self) -> usize {
        self.azimuth_bins * self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Angular spacing between azimuth nodes.
    pub fn spacing(&self) -> f64 {
        TAU / self.azimuth_bins as f64
    }

    pub fn azimuth(&self, a: usize) -> f64 {
        TAU * a as f64 / self.azimuth_bins as f64
    }

    /// Pose of row-major node `i = e·A + a`.
    pub fn pose(&self, i: usize) -> Result<PoseSO3> {
        let (e, a) = (i / self.azimuth_bins, i % self.azimuth_bins);
        PoseSO3::new(self.azimuth(a), self.elevations[e], 0.0)
    }

    /// Row-major index of the node nearest to `pose`.
    pub fn nearest(&self, pose: &PoseSO3) -> usize {
        let a = (pose.azimuth.radians() / self.spacing()).round() as usize % self.azimuth_bins;
        let e = self
            .elevations
            .iter()
            .enumerate()
            .min_by(|x, y| (x.1 - pose.elevation()).abs().total_cmp(&(y.1 - pose.elevation()).abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        e * self.azimuth_bins + a
    }
}

/// Self-similarity values over a grid, row-major `[elevation][azimuth]`.
/// A quotient map keeps the azimuth spacing and covers `[0, 2π/N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfSimilarityMap {
    pub reference: PoseSO3,
    pub azimuth_bins: usize,
    pub elevations: Vec<f64>,
    /// Replication order the map was reduced by (1 for a plain map).
    pub order: usize,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl SelfSimilarityMap {
    pub fn elevation_bins(&self) -> usize {
        self.elevations.len()
    }

    pub fn value(&self, e: usize, a: usize) -> f64 {
        self.values[e * self.azimuth_bins + a]
    }

    /// Azimuth spacing of the underlying grid.
    pub fn spacing(&self) -> f64 {
        TAU / (self.azimuth_bins * self.order) as f64
    }

    pub fn azimuth(&self, a: usize) -> f64 {
        a as f64 * self.spacing()
    }

    /// First index of the smallest value.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return invalid("need at least one worker");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))
}

/// Squared distances of every grid node's rendering to each of `references`:
/// `out[r][node]`. Each node is rendered once; the result does not depend on
/// `jobs`.
pub fn distances_to_references(
    renderer: &dyn PoseRenderer,
    grid: &GridSpec,
    references: &[Vec<f64>],
    jobs: usize,
) -> Result<Vec<Vec<f64>>> {
    let pool = thread_pool(jobs)?;
    let per_node: Vec<Vec<f64>> = pool.install(|| {
        (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let img = renderer.render(&grid.pose(i)?)?;
                references.iter().map(|r| squared_distance(&img, r)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
    })?;
    Ok((0..references.len()).map(|r| per_node.iter().map(|v| v[r]).collect()).collect())
}

/// Dense self-similarity map around `reference`.
pub fn ssm_grid(renderer: &dyn PoseRenderer, reference: &PoseSO3, grid: &GridSpec, jobs: usize) -> Result<SelfSimilarityMap> {
    let r = renderer.render(reference)?;
    let values = distances_to_references(renderer, grid, &[r], jobs)?.remove(0);
    Ok(SelfSimilarityMap {
        reference: *reference,
        azimuth_bins: grid.azimuth_bins,
        elevations: grid.elevations.clone(),
        order: 1,
        resolution: renderer.resolution(),
        values,
    })
}

/// Minimum over the `N` pre-images of each node of the quotient grid.
pub fn quotient_ssm(map: &SelfSimilarityMap, n: usize) -> Result<SelfSimilarityMap> {
    if n == 0 || map.azimuth_bins % n != 0 {
        return invalid(format!("{} azimuth bins are not divisible by {n}", map.azimuth_bins));
    }
    let q = map.azimuth_bins / n;
    let mut values = Vec::with_capacity(q * map.elevation_bins());
    for e in 0..map.elevation_bins() {
        for a in 0..q {
            let v = (0..n).map(|k| map.value(e, a + k * q)).fold(f64::INFINITY, f64::min);
            values.push(v);
        }
    }
    Ok(SelfSimilarityMap {
        azimuth_bins: q,
        order: map.order * n,
        values,
        ..map.clone()
    })
}

const MAP_COLUMNS: &str = "elevation_index,azimuth_index,azimuth_rad,elevation_rad,value";

/// CSV: one `#` line with the grid description, a header, then one row per
/// node in row-major order.
pub fn write_map_csv<W: Write>(mut w: W, map: &SelfSimilarityMap) -> Result<()> {
    writeln!(
        w,
        "# azimuth_bins={} elevation_bins={} order={} resolution={} reference_azimuth={} reference_elevation={}",
        map.azimuth_bins,
        map.elevation_bins(),
        map.order,
        map.resolution,
        fmt_f64(map.reference.azimuth.radians()),
        fmt_f64(map.reference.elevation())
    )?;
    writeln!(w, "{MAP_COLUMNS}")?;
    for (e, el) in map.elevations.iter().enumerate() {
        for a in 0..map.azimuth_bins {
            writeln!(w, "{e},{a},{},{},{}", fmt_f64(map.azimuth(a)), fmt_f64(*el), fmt_f64(map.value(e, a)))?;
        }
    }
    Ok(())
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    header
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("map header lacks '{key}'")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse {what} from '{s}'")))
}

pub fn read_map_csv<R: BufRead>(r: R) -> Result<SelfSimilarityMap> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Format("truncated map file".into()))?.map_err(Error::from)
    };
    let header = next()?;
    let header = header.strip_prefix('#').ok_or_else(|| Error::Format("map file must start with '#'".into()))?;
    let azimuth_bins: usize = parse(header_field(header, "azimuth_bins")?, "azimuth_bins")?;
    let elevation_bins: usize = parse(header_field(header, "elevation_bins")?, "elevation_bins")?;
    let order: usize = parse(header_field(header, "order")?, "order")?;
    let resolution: usize = parse(header_field(header, "resolution")?, "resolution")?;
    let ref_az: f64 = parse(header_field(header, "reference_azimuth")?, "reference_azimuth")?;
    let ref_el: f64 = parse(header_field(header, "reference_elevation")?, "reference_elevation")?;
    if azimuth_bins == 0 || elevation_bins == 0 || order == 0 || azimuth_bins.saturating_mul(elevation_bins) > 1 << 24 {
        return Err(Error::Format("map grid dimensions out of range".into()));
    }
    if next()? != MAP_COLUMNS {
        return Err(Error::Format("unexpected map columns".into()));
    }
    let mut elevations = vec![0.0; elevation_bins];
    let mut values = Vec::with_capacity(azimuth_bins * elevation_bins);
    for i in 0..azimuth_bins * elevation_bins {
        let line = next()?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("map row {i} has {} fields", f.len())));
        }
        let (e, a): (usize, usize) = (parse(f[0], "elevation index")?, parse(f[1], "azimuth index")?);
        if e != i / azimuth_bins || a != i % azimuth_bins {
            return Err(Error::Format(format!("map row {i} out of order")));
        }
        elevations[e] = parse(f[3], "elevation")?;
        let v: f64 = parse(f[4], "value")?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("map value at row {i}")));
        }
        values.push(v);
    }
    Ok(SelfSimilarityMap {
        reference: PoseSO3::new(ref_az, ref_el, 0.0)?,
        azimuth_bins,
        elevations,
        order,
        resolution,
        values,
    })
}

/// 8-bit PGM heatmap, min–max normalized, highest elevation on the top row.
/// Returns `(min, max)` for the sidecar.
pub fn write_map_pgm<W: Write>(mut w: W, map: &SelfSimilarityMap) -> Result<(f64, f64)> {
    let (lo, hi) = (map.min(), map.max());
    let range = hi - lo;
    write!(w, "P5\n{} {}\n255\n", map.azimuth_bins, map.elevation_bins())?;
    let mut bytes = Vec::with_capacity(map.values.len());
    for e in (0..map.elevation_bins()).rev() {
        for a in 0..map.azimuth_bins {
            let t = if range > 0.0 { (map.value(e, a) - lo) / range } else { 0.0 };
            bytes.push((t * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)?;
    Ok((lo, hi))
}

/// Sidecar recording the heatmap normalization: `value = min + (max − min) · pixel / 255`.
pub fn write_pgm_sidecar<W: Write>(mut w: W, min: f64, max: f64) -> Result<()> {
    writeln!(w, "min={}", fmt_f64(min))?;
    writeln!(w, "max={}", fmt_f64(max))?;
    writeln!(w, "value = min + (max - min) * pixel / 255")?;
    Ok(())
}
