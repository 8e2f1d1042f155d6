//! Emission-absorption ray marching through the spherical shell.
//!
//! The marching range `[t_near, t_far]` is split into `M` equal intervals.
//! Each interval's opacity is `1 - exp(-τ)` where `τ` is the density
//! integrated over the interval; for the piecewise-constant shell this is
//! `σ₀` times the length of the interval lying inside the shell, computed
//! from exact ray-sphere intersections. Within an interval the inside portion
//! is cut into a few pieces (and at patch edges), each shaded at its
//! absorption-weighted centroid. Pixel color is `Σ T_i α_i c_i + T_M · background`.

use nalgebra::{Matrix3, Vector3};

use super::scene::{Rgb, SphereScene};
use crate::error::{invalid, Result};
use crate::rotations::{pose_to_matrix, PoseSO3};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_SAMPLES: usize = 64;
pub const MIN_RESOLUTION: usize = 8;
pub const MIN_SAMPLES: usize = 2;
pub const DEFAULT_DISTANCE: f64 = 4.0;
pub const DEFAULT_FOV_DEG: f64 = 40.0;
/// Relative margin of the marching range around the shell.
pub const RANGE_MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub pose: PoseSO3,
    pub distance: f64,
    /// Vertical field of view, radians.
    pub fov: f64,
    pub resolution: usize,
}

impl Camera {
    pub fn new(pose: PoseSO3, distance: f64, fov: f64, resolution: usize) -> Self {
        Self { pose, distance, fov, resolution }
    }

    pub fn looking_from(pose: PoseSO3) -> Self {
        Self::new(pose, DEFAULT_DISTANCE, DEFAULT_FOV_DEG.to_radians(), DEFAULT_RESOLUTION)
    }

    pub fn with_resolution(self, resolution: usize) -> Self {
        Self { resolution, ..self }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        pose_to_matrix(&self.pose)
    }

    /// Camera center, `R · (0, 0, r)`.
    pub fn origin(&self) -> Vector3<f64> {
        self.rotation() * Vector3::new(0.0, 0.0, self.distance)
    }

    /// Unit world-space direction through the center of pixel `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> Vector3<f64> {
        self.ray_direction_with(&self.rotation(), row, col)
    }

    fn ray_direction_with(&self, rot: &Matrix3<f64>, row: usize, col: usize) -> Vector3<f64> {
        let n = self.resolution as f64;
        let half = (self.fov / 2.0).tan();
        let x = ((col as f64 + 0.5) / n * 2.0 - 1.0) * half;
        let y = (1.0 - (row as f64 + 0.5) / n * 2.0) * half;
        (rot * Vector3::new(x, y, -1.0)).normalize()
    }
}

/// Row-major RGB image with `f64` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved `[row][col][channel]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sum of squared channel differences.
    pub fn squared_distance(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Everything computed along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayTrace {
    pub color: Rgb,
    /// Compositing weights `T_i α_i`, one per interval.
    pub weights: Vec<f64>,
    /// Transmittance before each interval, plus the final residual.
    pub transmittance: Vec<f64>,
}

impl RayTrace {
    pub fn residual(&self) -> f64 {
        *self.transmittance.last().unwrap_or(&1.0)
    }
}

/// Ray-marching settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchSettings {
    pub samples: usize,
}

impl Default for MarchSettings {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES }
    }
}

fn sphere_hits(o: &Vector3<f64>, d: &Vector3<f64>, radius: f64) -> Option<(f64, f64)> {
    let b = o.dot(d);
    let c = o.dot(o) - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (l, h) = (a.max(lo), b.min(hi));
    (h > l).then_some((l, h))
}

/// Marching range `[t_near, t_far]` for a camera at distance `r`.
pub fn march_range(scene: &SphereScene, distance: f64) -> (f64, f64) {
    let reach = scene.outer_radius() * (1.0 + RANGE_MARGIN);
    ((distance - reach).max(0.0), distance + reach)
}

const PIECES_PER_SEGMENT: usize = 4;
const EDGE_BISECTIONS: usize = 40;

/// Offset of the absorption-weighted mean position within a piece of length `len`.
fn weighted_centroid(density: f64, len: f64) -> f64 {
    let x = density * len;
    if x < 1e-6 {
        return 0.5 * len;
    }
    len * (1.0 / x - (-x).exp() / -(-x).exp_m1())
}

/// Splits `[l, h]` into equal pieces, further cut where the ray enters or
/// leaves a patch. Returns the number of pieces written to `out`.
fn color_pieces(
    scene: &SphereScene,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    l: f64,
    h: f64,
    out: &mut [(f64, f64); 2 * PIECES_PER_SEGMENT],
) -> usize {
    let region = |t: f64| scene.patch_at(&(o + d * t));
    let step = (h - l) / PIECES_PER_SEGMENT as f64;
    let mut n = 0;
    let mut start = l;
    let mut ra = region(l);
    for j in 0..PIECES_PER_SEGMENT {
        let a = l + j as f64 * step;
        let b = if j + 1 == PIECES_PER_SEGMENT { h } else { a + step };
        let rb = region(b);
        if ra != rb {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..EDGE_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if region(mid) == ra {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi > start {
                out[n] = (start, hi);
                n += 1;
                start = hi;
            }
        }
        if b > start {
            out[n] = (start, b);
            n += 1;
        }
        start = b;
        ra = rb;
    }
    n
}

/// Composites one ray, reporting `(T_i, T_i α_i)` for every interval.
fn march(
    scene: &SphereScene,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    distance: f64,
    m: usize,
    mut record: impl FnMut(f64, f64),
) -> (Rgb, f64) {
    let (t_near, t_far) = march_range(scene, distance);
    let delta = (t_far - t_near) / m as f64;
    let Some((o1, o2)) = sphere_hits(origin, dir, scene.outer_radius()) else {
        for _ in 0..m {
            record(1.0, 0.0);
        }
        return (scene.background, 1.0);
    };
    let inner = if scene.inner_radius() > 0.0 { sphere_hits(origin, dir, scene.inner_radius()) } else { None };
    let mut pieces = [(0.0, 0.0); 2 * PIECES_PER_SEGMENT];
    let mut t_acc = 1.0;
    let mut color = [0.0; 3];
    for i in 0..m {
        let a = t_near + i as f64 * delta;
        let b = if i + 1 == m { t_far } else { a + delta };
        let Some((s0, s1)) = overlap(a, b, o1, o2) else {
            record(t_acc, 0.0);
            continue;
        };
        // portion of [s0, s1] outside the inner ball
        let mut segments = [(s0, s1), (0.0, 0.0)];
        let mut count = 1;
        if let Some((i1, i2)) = inner {
            if let Some((c0, c1)) = overlap(s0, s1, i1, i2) {
                segments = [(s0, c0), (c1, s1)];
                count = 2;
            }
        }
        let inside: f64 = segments[..count].iter().map(|(l, h)| (h - l).max(0.0)).sum();
        if inside <= 0.0 {
            record(t_acc, 0.0);
            continue;
        }
        let alpha = 1.0 - (-scene.density * inside).exp();
        record(t_acc, t_acc * alpha);
        let mut t_local = t_acc;
        for &(l, h) in segments[..count].iter().filter(|(l, h)| h > l) {
            let n = color_pieces(scene, origin, dir, l, h, &mut pieces);
            for &(pl, ph) in &pieces[..n] {
                let len = ph - pl;
                let a = 1.0 - (-scene.density * len).exp();
                let c = scene.color_at(&(origin + dir * (pl + weighted_centroid(scene.density, len))));
                for ch in 0..3 {
                    color[ch] += t_local * a * c[ch];
                }
                t_local *= 1.0 - a;
            }
        }
        t_acc *= 1.0 - alpha;
    }
    for ch in 0..3 {
        color[ch] += t_acc * scene.background[ch];
    }
    (color, t_acc)
}

/// Marches a single ray, keeping the per-interval weights.
pub fn trace_ray(scene: &SphereScene, origin: &Vector3<f64>, dir: &Vector3<f64>, distance: f64, settings: MarchSettings) -> RayTrace {
    let mut weights = Vec::with_capacity(settings.samples);
    let mut transmittance = Vec::with_capacity(settings.samples + 1);
    let (color, residual) = march(scene, origin, dir, distance, settings.samples, |t, w| {
        transmittance.push(t);
        weights.push(w);
    });
    transmittance.push(residual);
    RayTrace { color, weights, transmittance }
}

/// Renders one view.
pub fn render_view(scene: &SphereScene, cam: &Camera) -> Result<Image> {
    render_view_with(scene, cam, MarchSettings::default())
}

pub fn render_view_with(scene: &SphereScene, cam: &Camera, settings: MarchSettings) -> Result<Image> {
    if cam.resolution < MIN_RESOLUTION {
        return invalid(format!("resolution {} below minimum {MIN_RESOLUTION}", cam.resolution));
    }
    if settings.samples < MIN_SAMPLES {
        return invalid(format!("{} samples per ray below minimum {MIN_SAMPLES}", settings.samples));
    }
    if !(cam.distance > scene.outer_radius()) {
        return invalid("camera must sit outside the shell");
    }
    let n = cam.resolution;
    let rot = cam.rotation();
    let origin = rot * Vector3::new(0.0, 0.0, cam.distance);
    let mut data = Vec::with_capacity(n * n * 3);
    for row in 0..n {
        for col in 0..n {
            let d = cam.ray_direction_with(&rot, row, col);
            data.extend_from_slice(&march(scene, &origin, &d, cam.distance, settings.samples, |_, _| {}).0);
        }
    }
    Ok(Image { width: n, height: n, data })
}
