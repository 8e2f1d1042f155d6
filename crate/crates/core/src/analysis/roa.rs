use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use super::map::SelfSimilarityMap;
use crate::error::{Error, Result};

/// Relative strictness margin for "strictly decreasing" on a float grid.
pub const MONOTONE_MARGIN: f64 = 1e-12;

/// Grid nodes from which a strictly decreasing path leads to the minimum.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionOfAttraction {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub members: Vec<bool>,
    /// Seed node (the map's first argmin).
    pub seed: usize,
    pub coverage: f64,
    /// The map was constant; every node is counted as a member.
    pub degenerate: bool,
}

impl RegionOfAttraction {
    pub fn contains(&self, node: usize) -> bool {
        self.members[node]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }
}

/// 4-neighbours of `i` on an `a × e` grid; azimuth wraps, elevation clamps.
pub fn grid_neighbors(i: usize, azimuth_bins: usize, elevation_bins: usize) -> Vec<usize> {
    let (e, a) = (i / azimuth_bins, i % azimuth_bins);
    let mut out = Vec::with_capacity(4);
    let left = (a + azimuth_bins - 1) % azimuth_bins;
    let right = (a + 1) % azimuth_bins;
    out.push(e * azimuth_bins + left);
    if right != left {
        out.push(e * azimuth_bins + right);
    }
    if e > 0 {
        out.push((e - 1) * azimuth_bins + a);
    }
    if e + 1 < elevation_bins {
        out.push((e + 1) * azimuth_bins + a);
    }
    out.retain(|&j| j != i);
    out
}

/// `ε_mono` for a map: the margin scaled by its value range.
pub fn monotone_margin(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MONOTONE_MARGIN * (hi - lo)
}

/// Priority-queue flood fill from the argmin in ascending value order: a
/// node joins when a member neighbour is smaller by more than `ε_mono`.
pub fn region_of_attraction(map: &SelfSimilarityMap) -> Result<RegionOfAttraction> {
    let (na, ne) = (map.azimuth_bins, map.elevation_bins());
    let values = &map.values;
    if values.len() != na * ne || values.is_empty() {
        return Err(Error::ShapeMismatch { op: "region_of_attraction", detail: format!("{} values", values.len()) });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("map value at node {i}")));
    }
    let seed = map.argmin();
    let eps = monotone_margin(values);
    let total = values.len();
    if map.max() == map.min() {
        return Ok(RegionOfAttraction {
            azimuth_bins: na,
            elevation_bins: ne,
            members: vec![true; total],
            seed,
            coverage: 1.0,
            degenerate: true,
        });
    }
    let mut members = vec![false; total];
    members[seed] = true;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((OrdF64(values[seed]), seed)));
    while let Some(Reverse((OrdF64(v), i))) = heap.pop() {
        for j in grid_neighbors(i, na, ne) {
            if !members[j] && values[j] - v > eps {
                members[j] = true;
                heap.push(Reverse((OrdF64(values[j]), j)));
            }
        }
    }
    let count = members.iter().filter(|m| **m).count();
    Ok(RegionOfAttraction {
        azimuth_bins: na,
        elevation_bins: ne,
        members,
        seed,
        coverage: count as f64 / total as f64,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Plain PBM (P4) bitmap; members are black. Highest elevation on top.
pub fn write_region_pbm<W: Write>(mut w: W, region: &RegionOfAttraction) -> Result<()> {
    let (na, ne) = (region.azimuth_bins, region.elevation_bins);
    write!(w, "P4\n{na} {ne}\n")?;
    let row_bytes = na.div_ceil(8);
    let mut bytes = Vec::with_capacity(row_bytes * ne);
    for e in (0..ne).rev() {
        let mut row = vec![0u8; row_bytes];
        for a in 0..na {
            if region.members[e * na + a] {
                row[a / 8] |= 0x80 >> (a % 8);
            }
        }
        bytes.extend_from_slice(&row);
    }
    w.write_all(&bytes)?;
    Ok(())
}
