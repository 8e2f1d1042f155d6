//! Quasi-periodic 1D ground-truth functions and their crop datasets.
//!
//! A function is the real part of a 512-term Fourier series,
//! `f(θ) = Re Σ_k c_k e^{ikθ}`. Coefficients are complex Gaussians whose
//! magnitudes have mean `exp(-k/5)`; the second harmonic is then forced to
//! magnitude 100 (random phase kept), which makes `f` nearly π-periodic.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{Read, Write};

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::io_util::{read_f64s, read_u32, read_u64, write_f64s};
use crate::rotations::{wrap_raw, Angle};

pub const NUM_COEFFICIENTS: usize = 512;
pub const CROP_LEN: usize = 65;
pub const DEFAULT_CROPS: usize = 256;
pub const DOMINANT_HARMONIC: usize = 2;
pub const DOMINANT_MAGNITUDE: f64 = 100.0;
/// Decay length of the expected coefficient magnitude.
pub const MAGNITUDE_DECAY: f64 = 5.0;

/// Per-component standard deviation giving `E|c_k| = exp(-k/5)`. For a
/// complex Gaussian with component variance σ², `|c|` is Rayleigh with mean
/// `σ·sqrt(π/2)`.
pub fn component_sigma(k: usize) -> f64 {
    (-(k as f64) / MAGNITUDE_DECAY).exp() / FRAC_PI_2.sqrt()
}

/// Offsets of the crop samples relative to the crop center: 65 points
/// spanning `[-π/2, π/2]` inclusive.
pub fn crop_offsets() -> [f64; CROP_LEN] {
    let mut s = [0.0; CROP_LEN];
    for (j, v) in s.iter_mut().enumerate() {
        *v = -FRAC_PI_2 + j as f64 * PI / (CROP_LEN - 1) as f64;
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierFunction1D {
    coefficients: Vec<Complex<f64>>,
    seed: u64,
}

impl FourierFunction1D {
    pub fn from_coefficients(coefficients: Vec<Complex<f64>>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return invalid("coefficients must be finite and non-empty");
        }
        Ok(Self { coefficients, seed: 0 })
    }

    pub fn coefficients(&self) -> &[Complex<f64>] {
        &self.coefficients
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same function translated so that `g(θ) = f(θ + delta)`.
    pub fn shifted(&self, delta: f64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c * Complex::from_polar(1.0, k as f64 * delta))
            .collect();
        Self { coefficients, seed: self.seed }
    }

    pub fn evaluate(&self, theta: f64) -> f64 {
        let t = wrap_raw(theta);
        let step = Complex::from_polar(1.0, t);
        let mut phase = Complex::new(1.0, 0.0);
        let mut acc = 0.0;
        for c in &self.coefficients {
            acc += c.re * phase.re - c.im * phase.im;
            phase *= step;
        }
        acc
    }

    pub fn evaluate_angle(&self, theta: Angle) -> f64 {
        self.evaluate(theta.radians())
    }

    /// Mean and variance over a uniform grid of `points` angles.
    pub fn moments(&self, points: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..points).map(|i| self.evaluate(TAU * i as f64 / points as f64)).collect();
        let mean = vals.iter().sum::<f64>() / points as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / points as f64;
        (mean, var)
    }
}

pub fn sample_function(seed: u64) -> FourierFunction1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coefficients: Vec<Complex<f64>> = (0..NUM_COEFFICIENTS)
        .map(|k| {
            let s = component_sigma(k);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(s * re, s * im)
        })
        .collect();
    let c2 = coefficients[DOMINANT_HARMONIC];
    let phase = if c2.norm() > 0.0 { c2.arg() } else { 0.0 };
    coefficients[DOMINANT_HARMONIC] = Complex::from_polar(DOMINANT_MAGNITUDE, phase);
    FourierFunction1D { coefficients, seed }
}

pub fn evaluate(f: &FourierFunction1D, theta: Angle) -> f64 {
    f.evaluate_angle(theta)
}

/// Samples `f(θ* + s_j)` for the 65 crop offsets.
pub fn render_crop(f: &FourierFunction1D, center: Angle) -> [f64; CROP_LEN] {
    let offsets = crop_offsets();
    let mut out = [0.0; CROP_LEN];
    for (o, s) in out.iter_mut().zip(offsets) {
        *o = f.evaluate(center.radians() + s);
    }
    out
}

/// Crops of one function with their hidden centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CropDataset1D {
    crops: Vec<f64>,
    gt_angles: Vec<Angle>,
    function_seed: u64,
    sample_seed: u64,
    /// Rotation applied to the labels after generation.
    label_rotation: f64,
}

pub const DATASET_MAGIC: &[u8; 4] = b"M1D1";

impl CropDataset1D {
    pub fn len(&self) -> usize {
        self.gt_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_angles.is_empty()
    }

    pub fn crop(&self, i: usize) -> &[f64] {
        &self.crops[i * CROP_LEN..(i + 1) * CROP_LEN]
    }

    pub fn crops(&self) -> &[f64] {
        &self.crops
    }

    /// Ground-truth centers; evaluation only.
    pub fn gt_angles(&self) -> &[Angle] {
        &self.gt_angles
    }

    pub fn function_seed(&self) -> u64 {
        self.function_seed
    }

    pub fn sample_seed(&self) -> u64 {
        self.sample_seed
    }

    /// Regenerates the ground-truth function from its seed, in the frame of
    /// the (possibly rotated) labels.
    pub fn function(&self) -> FourierFunction1D {
        let f = sample_function(self.function_seed);
        if self.label_rotation == 0.0 {
            f
        } else {
            f.shifted(-self.label_rotation)
        }
    }

    /// Mean and standard deviation over all crop samples.
    pub fn value_stats(&self) -> (f64, f64) {
        let n = self.crops.len() as f64;
        let mean = self.crops.iter().sum::<f64>() / n;
        let var = self.crops.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Same crops with every ground-truth angle rotated by `delta`; the
    /// ground-truth function rotates along.
    pub fn with_rotated_labels(&self, delta: f64) -> Self {
        Self {
            gt_angles: self.gt_angles.iter().map(|a| a.offset(delta)).collect(),
            label_rotation: self.label_rotation + delta,
            ..self.clone()
        }
    }

    /// `M1D1` layout, little-endian: magic, u32 crop count, u32 crop length,
    /// crops (f64), angles (f64), u64 function seed, u64 sample seed, f64
    /// label rotation.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(CROP_LEN as u32).to_le_bytes())?;
        write_f64s(&mut w, &self.crops)?;
        let angles: Vec<f64> = self.gt_angles.iter().map(|a| a.radians()).collect();
        write_f64s(&mut w, &angles)?;
        w.write_all(&self.function_seed.to_le_bytes())?;
        w.write_all(&self.sample_seed.to_le_bytes())?;
        write_f64s(&mut w, &[self.label_rotation])?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("dataset magic mismatch".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let len = read_u32(&mut r)? as usize;
        if len != CROP_LEN || n == 0 {
            return Err(Error::Format(format!("unsupported dataset layout n={n} crop={len}")));
        }
        let crops = read_f64s(&mut r, n * len)?;
        let gt_angles = read_f64s(&mut r, n)?
            .into_iter()
            .map(Angle::new)
            .collect::<Result<Vec<_>>>()?;
        let function_seed = read_u64(&mut r)?;
        let sample_seed = read_u64(&mut r)?;
        let label_rotation = read_f64s(&mut r, 1)?[0];
        if !label_rotation.is_finite() {
            return Err(Error::Format("non-finite label rotation".into()));
        }
        Ok(Self { crops, gt_angles, function_seed, sample_seed, label_rotation })
    }
}

/// Offset between a dataset's function seed and its crop-sampling seed.
pub const SAMPLE_SEED_OFFSET: u64 = 1000;

/// Dataset number `seed`: function `seed`, crop centers from `seed + 1000`.
pub fn seeded_dataset(seed: u64, n: usize) -> Result<CropDataset1D> {
    generate_dataset(&sample_function(seed), n, seed.wrapping_add(SAMPLE_SEED_OFFSET))
}

/// Draws `n` centers uniformly on `[0, 2π)` and renders their crops.
pub fn generate_dataset(f: &FourierFunction1D, n: usize, seed: u64) -> Result<CropDataset1D> {
    if n == 0 {
        return invalid("dataset needs at least one crop");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_angles: Vec<Angle> = (0..n)
        .map(|_| Angle::new(rng.random_range(0.0..TAU)))
        .collect::<Result<_>>()?;
    let mut crops = Vec::with_capacity(n * CROP_LEN);
    for &a in &gt_angles {
        crops.extend_from_slice(&render_crop(f, a));
    }
    Ok(CropDataset1D {
        crops,
        gt_angles,
        function_seed: f.seed,
        sample_seed: seed,
        label_rotation: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(f: &FourierFunction1D, theta: f64) -> f64 {
        f.coefficients()
            .iter()
            .enumerate()
            .map(|(k, c)| c.re * (k as f64 * theta).cos() - c.im * (k as f64 * theta).sin())
            .sum()
    }

    fn single(k: usize, c: Complex<f64>) -> FourierFunction1D {
        let mut coeffs = vec![Complex::new(0.0, 0.0); k + 1];
        coeffs[k] = c;
        FourierFunction1D::from_coefficients(coeffs).unwrap()
    }

    #[test]
    fn dominant_harmonic_magnitude() {
        for seed in 0..20 {
            let f = sample_function(seed);
            assert!((f.coefficients()[2].norm() - 100.0).abs() < 1e-12);
            assert_eq!(f.coefficients().len(), NUM_COEFFICIENTS);
        }
        assert_eq!(sample_function(4), sample_function(4));
        assert_ne!(sample_function(4), sample_function(5));
    }

    #[test]
    fn coefficient_magnitude_monte_carlo() {
        // E|c_10| = exp(-2); standard error from the sample spread.
        let mags: Vec<f64> = (0..10_000).map(|s| sample_function(s).coefficients()[10].norm()).collect();
        let n = mags.len() as f64;
        let mean = mags.iter().sum::<f64>() / n;
        let sd = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!((mean - (-2.0f64).exp()).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn evaluate_examples() {
        let dc = single(0, Complex::new(5.0, 0.0));
        for i in 0..10 {
            assert!((dc.evaluate(i as f64 * 0.7) - 5.0).abs() < 1e-12);
        }
        let h2 = single(2, Complex::new(100.0, 0.0));
        assert!((h2.evaluate(0.0) - 100.0).abs() < 1e-12);
        assert!((h2.evaluate(0.3) - 100.0 * (0.6f64).cos()).abs() < 1e-10);

        let f = sample_function(9);
        let worst = (0..128)
            .map(|i| {
                let t = TAU * i as f64 / 128.0 + 0.01;
                (f.evaluate(t) - naive(&f, t)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
        for i in 0..50 {
            let t = i as f64 * 0.37;
            assert!((f.evaluate(t) - f.evaluate(t + TAU)).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_examples() {
        let f = sample_function(1);
        let c = Angle::new(1.1).unwrap();
        let crop = render_crop(&f, c);
        assert_eq!(crop[32], f.evaluate_angle(c));
        let s = crop_offsets();
        assert_eq!(s[0], -FRAC_PI_2);
        assert!((s[64] - FRAC_PI_2).abs() < 1e-15);
        for j in 0..CROP_LEN {
            assert_eq!(crop[j], f.evaluate(c.radians() + s[j]));
        }
        let h2 = single(2, Complex::new(100.0, 0.0));
        let sym = render_crop(&h2, Angle::default());
        for j in 0..CROP_LEN {
            assert!((sym[j] - sym[CROP_LEN - 1 - j]).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_covariance() {
        let f = sample_function(2);
        let (c, d) = (0.8, 0.45);
        let a = render_crop(&f, Angle::new(c + d).unwrap());
        let b = render_crop(&f.shifted(d), Angle::new(c).unwrap());
        for j in 0..CROP_LEN {
            assert!((a[j] - b[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn quasi_periodic() {
        for seed in 0..20 {
            let f = sample_function(seed);
            let (_, var) = f.moments(1024);
            let diff = (0..1024)
                .map(|i| {
                    let t = TAU * i as f64 / 1024.0;
                    (f.evaluate(t) - f.evaluate(t + PI)).powi(2)
                })
                .sum::<f64>()
                / 1024.0;
            assert!(diff <= 0.05 * var, "seed {seed}: {diff} vs {var}");
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let f = sample_function(3);
        let d = generate_dataset(&f, DEFAULT_CROPS, 17).unwrap();
        assert_eq!(d.len(), 256);
        assert_eq!(d.crops().len(), 256 * 65);
        assert_eq!(d, generate_dataset(&f, 256, 17).unwrap());
        for i in [0, 100, 255] {
            assert_eq!(d.crop(i), &render_crop(&f, d.gt_angles()[i])[..]);
        }
        assert!(generate_dataset(&f, 0, 1).is_err());

        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"M1D1");
        assert_eq!(buf.len(), 4 + 8 + 8 * 256 * 66 + 16 + 8);
        assert_eq!(CropDataset1D::read_from(&buf[..]).unwrap(), d);
        assert!(CropDataset1D::read_from(&buf[..20]).is_err());
        buf[0] = b'X';
        assert!(CropDataset1D::read_from(&buf[..]).is_err());
    }

    #[test]
    fn angles_are_uniform() {
        let f = single(0, Complex::new(1.0, 0.0));
        let d = generate_dataset(&f, 10_000, 99).unwrap();
        let mut u: Vec<f64> = d.gt_angles().iter().map(|a| a.radians() / TAU).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max);
        // asymptotic critical value at alpha = 0.01
        assert!(ks < 1.628 / n.sqrt(), "KS {ks}");
    }
}
