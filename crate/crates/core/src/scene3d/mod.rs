//! Analytic quasi-symmetric sphere scenes and their volume renderer.

mod render;
mod scene;

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use render::{
    march_range, render_view, render_view_with, trace_ray, Camera, Image, MarchSettings, RayTrace, DEFAULT_DISTANCE,
    DEFAULT_FOV_DEG, DEFAULT_RESOLUTION, DEFAULT_SAMPLES, MIN_RESOLUTION, RANGE_MARGIN,
};
pub use scene::{
    spherical_coords, Patch, Rgb, SphereScene, DEFAULT_DENSITY, DEFAULT_HALF_THICKNESS, DEFAULT_RADIUS,
    MAX_SYMMETRY_ORDER, PATCH_AZIMUTHS_DEG, PATCH_HALF_WIDTH_DEG,
};

use crate::error::{invalid, Error, Result};
use crate::io_util::{fmt_f64, read_f64s, read_u32, write_f64s};
use crate::rotations::{Angle, PoseSO3};

pub const TEST_VIEWS: usize = 16;
pub const REFERENCE_VIEWS: usize = 116;

/// Rendered views with their poses and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedImageSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Equator views at i.i.d. uniform azimuths; the last `16/116` of the views
/// (16 for the reference 116) are held out for testing.
pub fn generate_rgb_melon(k: usize, n_views: usize, seed: u64) -> Result<PosedImageSet> {
    if n_views == 0 {
        return invalid("need at least one view");
    }
    let scene = SphereScene::reference(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras: Vec<Camera> = (0..n_views)
        .map(|_| Angle::new(rng.random_range(0.0..TAU)).map(|a| Camera::looking_from(PoseSO3::equator(a))))
        .collect::<Result<_>>()?;
    let images = cameras.iter().map(|c| render_view(&scene, c)).collect::<Result<Vec<_>>>()?;
    let n_test = ((n_views * TEST_VIEWS) as f64 / REFERENCE_VIEWS as f64).round() as usize;
    let n_train = n_views - n_test.min(n_views - 1);
    Ok(PosedImageSet {
        cameras,
        images,
        train: (0..n_train).collect(),
        test: (n_train..n_views).collect(),
    })
}

/// Binary PPM (P6), channels clamped to `[0, 1]` and rounded to 8 bits.
pub fn write_ppm<W: Write>(mut w: W, img: &Image) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub const IMAGE_MAGIC: &[u8; 4] = b"MIMG";

/// Lossless `MIMG` format: magic, u32 width, u32 height, then the three
/// channel planes as little-endian f64.
pub fn write_mimg<W: Write>(mut w: W, img: &Image) -> Result<()> {
    w.write_all(IMAGE_MAGIC)?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    for ch in 0..3 {
        let plane: Vec<f64> = img.data.iter().skip(ch).step_by(3).copied().collect();
        write_f64s(&mut w, &plane)?;
    }
    Ok(())
}

pub fn read_mimg<R: Read>(mut r: R) -> Result<Image> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != IMAGE_MAGIC {
        return Err(Error::Format("image magic mismatch".into()));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let planes: Vec<Vec<f64>> = (0..3).map(|_| read_f64s(&mut r, width * height)).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(width * height * 3);
    for i in 0..width * height {
        data.extend(planes.iter().map(|p| p[i]));
    }
    Ok(Image { width, height, data })
}

/// Pose list as CSV: `index,azimuth_rad,elevation_rad,roll_rad,distance`.
pub fn write_pose_csv<W: Write>(mut w: W, cameras: &[Camera]) -> Result<()> {
    writeln!(w, "index,azimuth_rad,elevation_rad,roll_rad,distance")?;
    for (i, c) in cameras.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            fmt_f64(c.pose.azimuth.radians()),
            fmt_f64(c.pose.elevation()),
            fmt_f64(c.pose.roll.radians()),
            fmt_f64(c.distance)
        )?;
    }
    Ok(())
}
