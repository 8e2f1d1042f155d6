use crate::error::{invalid, Result};
use crate::rotations::{Angle, PoseSO3};
use crate::scene1d::{render_crop, FourierFunction1D, CROP_LEN};
use crate::scene3d::{render_view_with, Camera, MarchSettings, SphereScene, DEFAULT_RESOLUTION};

/// A known forward model mapping a pose to a flat observation vector.
pub trait PoseRenderer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Observation at `pose`; every call returns the same length.
    fn render(&self, pose: &PoseSO3) -> Result<Vec<f64>>;

    /// Samples per observation, as reported in map headers.
    fn resolution(&self) -> usize;
}

/// The 1D crop model: azimuth selects the crop center, elevation is ignored.
#[derive(Clone, Debug)]
pub struct CropRenderer {
    function: FourierFunction1D,
}

impl CropRenderer {
    pub fn new(function: FourierFunction1D) -> Self {
        Self { function }
    }
}

impl PoseRenderer for CropRenderer {
    fn name(&self) -> &'static str {
        "crop1d"
    }

    fn render(&self, pose: &PoseSO3) -> Result<Vec<f64>> {
        Ok(render_crop(&self.function, pose.azimuth).to_vec())
    }

    fn resolution(&self) -> usize {
        CROP_LEN
    }
}

/// Volume renderings of a sphere scene from cameras on the viewing sphere.
#[derive(Clone, Debug)]
pub struct SphereRenderer {
    pub scene: SphereScene,
    pub resolution: usize,
    pub settings: MarchSettings,
}

impl SphereRenderer {
    pub fn new(scene: SphereScene) -> Self {
        Self { scene, resolution: DEFAULT_RESOLUTION, settings: MarchSettings::default() }
    }

    pub fn with_resolution(self, resolution: usize) -> Self {
        Self { resolution, ..self }
    }
}

impl PoseRenderer for SphereRenderer {
    fn name(&self) -> &'static str {
        "sphere3d"
    }

    fn render(&self, pose: &PoseSO3) -> Result<Vec<f64>> {
        let cam = Camera::looking_from(*pose).with_resolution(self.resolution);
        Ok(render_view_with(&self.scene, &cam, self.settings)?.data)
    }

    fn resolution(&self) -> usize {
        self.resolution
    }
}

/// Every view identical; the degenerate plateau case.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantRenderer;

impl PoseRenderer for ConstantRenderer {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn render(&self, _: &PoseSO3) -> Result<Vec<f64>> {
        Ok(vec![0.5; 8])
    }

    fn resolution(&self) -> usize {
        8
    }
}

/// Sum of squared differences between two observations.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("observations differ in length: {} vs {}", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Photometric self-similarity `‖render(z) − render(z*)‖²`.
pub fn self_similarity(renderer: &dyn PoseRenderer, z: &PoseSO3, reference: &PoseSO3) -> Result<f64> {
    squared_distance(&renderer.render(z)?, &renderer.render(reference)?)
}

pub(crate) fn equator(azimuth: f64) -> Result<PoseSO3> {
    Ok(PoseSO3::equator(Angle::new(azimuth)?))
}
