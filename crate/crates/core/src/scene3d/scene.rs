use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Vector3;

use crate::error::{invalid, Result};

pub type Rgb = [f64; 3];

/// Square patch in (azimuth, elevation) coordinates painted over the base texture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub azimuth: f64,
    pub elevation: f64,
    pub half_width: f64,
    pub color: Rgb,
}

impl Patch {
    pub fn contains(&self, azimuth: f64, elevation: f64) -> bool {
        let d = (azimuth - self.azimuth).rem_euclid(TAU);
        d.min(TAU - d) <= self.half_width && (elevation - self.elevation).abs() <= self.half_width
    }
}

/// Patch bounds precomputed for trig-free membership tests on directions.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PatchBounds {
    dir: (f64, f64),
    cos_half: f64,
    sin_lo: f64,
    sin_hi: f64,
}

impl PatchBounds {
    fn new(p: &Patch) -> Self {
        let lo = (p.elevation - p.half_width).max(-FRAC_PI_2);
        let hi = (p.elevation + p.half_width).min(FRAC_PI_2);
        Self {
            dir: (p.azimuth.cos(), p.azimuth.sin()),
            cos_half: p.half_width.min(std::f64::consts::PI).cos(),
            sin_lo: lo.sin(),
            sin_hi: hi.sin(),
        }
    }

    /// `(cx, cy)` is the unit azimuth direction, `sz` the sine of the elevation.
    fn contains(&self, cx: f64, cy: f64, sz: f64) -> bool {
        sz >= self.sin_lo && sz <= self.sin_hi && cx * self.dir.0 + cy * self.dir.1 >= self.cos_half
    }
}

/// Textured spherical shell whose red-green texture repeats `K` times
/// around the azimuth; three colored patches break the symmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereScene {
    order: usize,
    patches: Vec<Patch>,
    bounds: Vec<PatchBounds>,
    pub radius: f64,
    pub half_thickness: f64,
    /// Density inside the shell.
    pub density: f64,
    pub background: Rgb,
}

pub const MAX_SYMMETRY_ORDER: usize = 4;
pub const DEFAULT_RADIUS: f64 = 1.0;
pub const DEFAULT_HALF_THICKNESS: f64 = 0.1;
pub const DEFAULT_DENSITY: f64 = 30.0;
pub const PATCH_AZIMUTHS_DEG: [f64; 3] = [0.0, 40.0, 80.0];
pub const PATCH_HALF_WIDTH_DEG: f64 = 8.0;

impl SphereScene {
    /// Reference scene of symmetry order `k` with its three patches.
    pub fn reference(k: usize) -> Result<Self> {
        if !(1..=MAX_SYMMETRY_ORDER).contains(&k) {
            return invalid(format!("symmetry order must be in 1..=4, got {k}"));
        }
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let patches = PATCH_AZIMUTHS_DEG
            .iter()
            .zip(colors)
            .map(|(&az, color)| Patch {
                azimuth: az.to_radians(),
                elevation: 0.0,
                half_width: PATCH_HALF_WIDTH_DEG.to_radians(),
                color,
            })
            .collect();
        Ok(Self {
            order: k,
            patches: Vec::new(),
            bounds: Vec::new(),
            radius: DEFAULT_RADIUS,
            half_thickness: DEFAULT_HALF_THICKNESS,
            density: DEFAULT_DENSITY,
            background: [1.0, 1.0, 1.0],
        }
        .with_patches(patches))
    }

    /// The same scene with the symmetry-breaking patches removed.
    pub fn without_patches(&self) -> Self {
        self.clone().with_patches(Vec::new())
    }

    /// Replaces the patches; earlier patches win where they overlap.
    pub fn with_patches(mut self, patches: Vec<Patch>) -> Self {
        self.bounds = patches.iter().map(PatchBounds::new).collect();
        self.patches = patches;
        self
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn outer_radius(&self) -> f64 {
        self.radius + self.half_thickness
    }

    pub fn inner_radius(&self) -> f64 {
        (self.radius - self.half_thickness).max(0.0)
    }

    /// Color at spherical coordinates; `elevation` in `[-π/2, π/2]`.
    pub fn texture_color(&self, azimuth: f64, elevation: f64) -> Rgb {
        if let Some(p) = self.patches.iter().find(|p| p.contains(azimuth, elevation)) {
            return p.color;
        }
        let wave = (self.order as f64 * azimuth).sin() * elevation.cos();
        [0.5 + 0.5 * wave, 0.5 - 0.5 * wave, 0.1]
    }

    /// Unit azimuth direction, cosine and sine of the elevation of `x`.
    fn direction(x: &Vector3<f64>) -> (f64, f64, f64, f64) {
        let rho2 = x.x * x.x + x.y * x.y;
        let rho = rho2.sqrt();
        let norm = (rho2 + x.z * x.z).sqrt();
        if rho == 0.0 {
            return (1.0, 0.0, 0.0, x.z.signum());
        }
        (x.x / rho, x.y / rho, rho / norm, x.z / norm)
    }

    fn patch_index(&self, cx: f64, cy: f64, sz: f64) -> Option<usize> {
        self.bounds.iter().position(|b| b.contains(cx, cy, sz))
    }

    /// Index of the patch covering the direction of `x`, if any.
    pub fn patch_at(&self, x: &Vector3<f64>) -> Option<usize> {
        let (cx, cy, _, sz) = Self::direction(x);
        self.patch_index(cx, cy, sz)
    }

    /// Color of a point in space (by its direction from the origin). Same
    /// texture as [`Self::texture_color`], evaluated without trigonometry.
    pub fn color_at(&self, x: &Vector3<f64>) -> Rgb {
        let (cx, cy, ce, sz) = Self::direction(x);
        if let Some(i) = self.patch_index(cx, cy, sz) {
            return self.patches[i].color;
        }
        // sin(Kθ) from powers of e^{iθ}
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 0..self.order {
            (re, im) = (re * cx - im * cy, re * cy + im * cx);
        }
        let wave = im * ce;
        [0.5 + 0.5 * wave, 0.5 - 0.5 * wave, 0.1]
    }
}

/// `(azimuth in [0, 2π), elevation in [-π/2, π/2])` of a non-zero vector.
pub fn spherical_coords(x: &Vector3<f64>) -> (f64, f64) {
    let az = x.y.atan2(x.x).rem_euclid(TAU);
    let az = if az >= TAU { 0.0 } else { az };
    let el = (x.z / x.norm()).clamp(-1.0, 1.0).asin().clamp(-FRAC_PI_2, FRAC_PI_2);
    (az, el)
}
