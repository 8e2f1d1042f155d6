//! Angles, camera orientations and the azimuthal equivalence relation.
//!
//! Camera frames follow the usual graphics convention: `x` right, `y` up,
//! and the camera looks down its `-z` axis. World "up" is `+Z`. A pose with
//! zero azimuth, elevation and roll sits on the `+X` axis looking at the
//! origin.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Error, Result};

/// Reduces `x` into `[0, 2π)` without validation.
pub(crate) fn wrap_raw(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Point on SO(2), stored in `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Angle(f64);

impl Angle {
    pub fn new(x: f64) -> Result<Self> {
        wrap_angle(x)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Adds `delta` radians and re-wraps.
    pub fn offset(self, delta: f64) -> Self {
        Angle(wrap_raw(self.0 + delta))
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

impl std::ops::Add for Angle {
    type Output = Angle;

    fn add(self, rhs: Angle) -> Angle {
        self.offset(rhs.0)
    }
}

impl std::ops::Sub for Angle {
    type Output = Angle;

    fn sub(self, rhs: Angle) -> Angle {
        self.offset(-rhs.0)
    }
}

pub fn wrap_angle(x: f64) -> Result<Angle> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("angle {x}")));
    }
    Ok(Angle(wrap_raw(x)))
}

/// Shortest arc between two angles, in `[0, π]`.
pub fn angular_distance(a: Angle, b: Angle) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(TAU - d)
}

/// Camera orientation as (azimuth, elevation, roll).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PoseSO3 {
    pub azimuth: Angle,
    elevation: f64,
    pub roll: Angle,
}

impl PoseSO3 {
    /// Elevation is clamped to `[-π/2, π/2]`.
    pub fn new(azimuth: f64, elevation: f64, roll: f64) -> Result<Self> {
        if !elevation.is_finite() {
            return Err(Error::NonFinite(format!("elevation {elevation}")));
        }
        Ok(Self {
            azimuth: wrap_angle(azimuth)?,
            elevation: elevation.clamp(-FRAC_PI_2, FRAC_PI_2),
            roll: wrap_angle(roll)?,
        })
    }

    pub fn equator(azimuth: Angle) -> Self {
        Self {
            azimuth,
            elevation: 0.0,
            roll: Angle(0.0),
        }
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Camera axes (right, up, back) of the zero pose, as world columns.
pub fn base_camera_frame() -> Matrix3<f64> {
    Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()])
}

/// Camera-to-world rotation: roll about the view axis, then elevation about
/// camera-right, then azimuth about world `+Z`.
pub fn pose_to_matrix(p: &PoseSO3) -> Matrix3<f64> {
    rot_z(p.azimuth.0) * base_camera_frame() * rot_x(-p.elevation) * rot_z(p.roll.0)
}

/// Angle of the relative rotation between two poses, in `[0, π]`.
pub fn so3_geodesic_distance(a: &PoseSO3, b: &PoseSO3) -> f64 {
    let rel = pose_to_matrix(a).transpose() * pose_to_matrix(b);
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    // atan2 keeps full precision near 0 and π where acos does not.
    (skew.norm() / 2.0).atan2(cos)
}

/// Latents that can be replicated along the azimuth.
pub trait AzimuthalLatent: Copy {
    fn azimuth(&self) -> Angle;
    fn with_azimuth(&self, azimuth: Angle) -> Self;
}

impl AzimuthalLatent for Angle {
    fn azimuth(&self) -> Angle {
        *self
    }

    fn with_azimuth(&self, azimuth: Angle) -> Self {
        azimuth
    }
}

impl AzimuthalLatent for PoseSO3 {
    fn azimuth(&self) -> Angle {
        self.azimuth
    }

    fn with_azimuth(&self, azimuth: Angle) -> Self {
        Self { azimuth, ..*self }
    }
}

/// Identifies latents whose azimuths differ by a multiple of `2π/N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EquivalenceRelation {
    order: usize,
}

impl EquivalenceRelation {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return invalid("replication order must be at least 1");
        }
        Ok(Self { order })
    }

    pub fn identity() -> Self {
        Self { order: 1 }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Azimuthal period `2π/N` of the relation.
    pub fn period(&self) -> f64 {
        TAU / self.order as f64
    }

    /// Shift applied to member `k` of a class.
    pub fn shift(&self, k: usize) -> f64 {
        TAU * k as f64 / self.order as f64
    }

    /// The `N` members `z + 2πk/N`, member 0 being `z` itself.
    pub fn class<L: AzimuthalLatent>(&self, z: &L) -> Vec<L> {
        (0..self.order)
            .map(|k| z.with_azimuth(z.azimuth().offset(self.shift(k))))
            .collect()
    }

    pub fn equivalent<L: AzimuthalLatent>(&self, a: &L, b: &L, tol: f64) -> bool {
        let d = (self.representative(a.azimuth()).0 - self.representative(b.azimuth()).0).abs();
        d.min(self.period() - d) <= tol
    }

    /// Representative of the class of `z` in `[0, 2π/N)`.
    pub fn representative(&self, z: Angle) -> Angle {
        let p = self.period();
        let r = z.0.rem_euclid(p);
        Angle(if r >= p { 0.0 } else { r })
    }

    /// Distance from `z` to the closest member of the class of `target`.
    pub fn orbit_distance(&self, z: Angle, target: Angle) -> f64 {
        self.class(&target)
            .into_iter()
            .map(|m| angular_distance(z, m))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn equivalence_class<L: AzimuthalLatent>(z: &L, rel: &EquivalenceRelation) -> Vec<L> {
    rel.class(z)
}

pub fn quotient_representative(z: Angle, rel: &EquivalenceRelation) -> Angle {
    rel.representative(z)
}

/// Result of aligning predicted angles to ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub offset: Angle,
    pub mean_error: f64,
}

const ALIGN_GRID: usize = 4096;
const ALIGN_TOL: f64 = 1e-6;

fn mean_aligned_error(pred: &[Angle], gt: &[Angle], offset: f64) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| angular_distance(p.offset(offset), *g))
        .sum::<f64>()
        / pred.len() as f64
}

/// Global SO(2) offset minimizing the mean angular error of `pred + offset`
/// against `gt`: dense grid search, golden-section refinement, then a snap
/// onto the exact breakpoint of the piecewise-linear objective.
pub fn align_global_1d(pred: &[Angle], gt: &[Angle]) -> Result<Alignment> {
    if pred.is_empty() || pred.len() != gt.len() {
        return invalid(format!("alignment needs equal non-empty lists, got {} and {}", pred.len(), gt.len()));
    }
    let step = TAU / ALIGN_GRID as f64;
    let (best, _) = (0..ALIGN_GRID)
        .map(|i| {
            let o = i as f64 * step;
            (o, mean_aligned_error(pred, gt, o))
        })
        .fold((0.0, f64::INFINITY), |acc, (o, e)| if e < acc.1 { (o, e) } else { acc });

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best - step, best + step);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = mean_aligned_error(pred, gt, x1);
    let mut f2 = mean_aligned_error(pred, gt, x2);
    while hi - lo > ALIGN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mean_aligned_error(pred, gt, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mean_aligned_error(pred, gt, x2);
        }
    }
    let mut offset = 0.5 * (lo + hi);
    let mut err = mean_aligned_error(pred, gt, offset);
    let grid_err = mean_aligned_error(pred, gt, best);
    if grid_err < err {
        offset = best;
        err = grid_err;
    }
    // The objective is piecewise linear with its minima where some residual
    // vanishes; snap onto the best such breakpoint near the refined offset.
    for (p, g) in pred.iter().zip(gt) {
        let c = wrap_raw(g.0 - p.0);
        let d = (c - offset).rem_euclid(TAU);
        if d.min(TAU - d) <= step {
            let e = mean_aligned_error(pred, gt, c);
            if e <= err {
                offset = c;
                err = e;
            }
        }
    }
    Ok(Alignment {
        offset: Angle(wrap_raw(offset)),
        mean_error: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use nalgebra::{Rotation3, UnitQuaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap().radians(), 0.0);
        assert!((wrap_angle(TAU + 0.5).unwrap().radians() - 0.5).abs() < 1e-12);
        assert!((wrap_angle(-PI / 2.0).unwrap().radians() - 1.5 * PI).abs() < 1e-12);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
        assert!(wrap_angle(-1e-300).unwrap().radians() < TAU);
    }

    #[test]
    fn angular_distance_examples() {
        let a = |x| Angle::new(x).unwrap();
        assert_eq!(angular_distance(a(0.0), a(0.0)), 0.0);
        assert!((angular_distance(a(0.1), a(TAU - 0.1)) - 0.2).abs() < 1e-12);
        assert!((angular_distance(a(0.0), a(PI)) - PI).abs() < 1e-12);
    }

    fn quaternion_angle(a: &PoseSO3, b: &PoseSO3) -> f64 {
        let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(pose_to_matrix(a)));
        let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(pose_to_matrix(b)));
        let dot = (qa.coords.dot(&qb.coords)).abs().min(1.0);
        2.0 * dot.acos()
    }

    #[test]
    fn geodesic_examples() {
        let p = PoseSO3::new(0.3, 0.2, 1.0).unwrap();
        assert!(so3_geodesic_distance(&p, &p) < 1e-12);
        let a = PoseSO3::new(0.0, 0.0, 0.0).unwrap();
        let b = PoseSO3::new(PI, 0.0, 0.0).unwrap();
        assert!((so3_geodesic_distance(&a, &b) - PI).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut pose = || {
                PoseSO3::new(
                    rng.random_range(0.0..TAU),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(0.0..TAU),
                )
                .unwrap()
            };
            let (a, b) = (pose(), pose());
            let d = so3_geodesic_distance(&a, &b);
            assert!((d - quaternion_angle(&a, &b)).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn class_examples() {
        let rel2 = EquivalenceRelation::new(2).unwrap();
        let c = equivalence_class(&Angle::new(0.3).unwrap(), &rel2);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].radians(), 0.3);
        assert!((c[1].radians() - (0.3 + PI)).abs() < 1e-12);

        let c1 = equivalence_class(&Angle::new(0.0).unwrap(), &EquivalenceRelation::identity());
        assert_eq!(c1, vec![Angle::new(0.0).unwrap()]);

        let rel4 = EquivalenceRelation::new(4).unwrap();
        let pose = PoseSO3::new(0.1, 0.4, 0.0).unwrap();
        let c4 = equivalence_class(&pose, &rel4);
        for (k, m) in c4.iter().enumerate() {
            assert!((m.azimuth.radians() - (0.1 + k as f64 * PI / 2.0)).abs() < 1e-12);
            assert_eq!(m.elevation(), 0.4);
            assert_eq!(m.roll.radians(), 0.0);
        }
        assert!(EquivalenceRelation::new(0).is_err());
    }

    #[test]
    fn representative_examples() {
        let rel2 = EquivalenceRelation::new(2).unwrap();
        let r = quotient_representative(Angle::new(PI + 0.2).unwrap(), &rel2);
        assert!((r.radians() - 0.2).abs() < 1e-12);
        let r1 = quotient_representative(Angle::new(0.1).unwrap(), &EquivalenceRelation::identity());
        assert_eq!(r1.radians(), 0.1);

        let rel3 = EquivalenceRelation::new(3).unwrap();
        let z = 5.9;
        // scan k for the member landing in [0, 2π/3)
        let period = TAU / 3.0;
        let expected = (0..3)
            .map(|k| z - k as f64 * period)
            .find(|v| (0.0..period).contains(v))
            .unwrap();
        let r3 = quotient_representative(Angle::new(z).unwrap(), &rel3);
        assert!((r3.radians() - expected).abs() < 1e-12);
        assert!((expected - (5.9 - 2.0 * period)).abs() < 1e-12);
    }

    #[test]
    fn matrix_examples() {
        let m0 = pose_to_matrix(&PoseSO3::default());
        assert!((m0 - base_camera_frame()).abs().max() < 1e-15);
        // camera sits on +X and looks toward the origin
        let back = m0 * Vector3::z();
        assert!((back - Vector3::x()).norm() < 1e-15);

        let p = PoseSO3::new(PI / 2.0, 0.0, 0.0).unwrap();
        let oracle = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
            * Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!((pose_to_matrix(&p) - oracle).abs().max() < 1e-12);

        let up = pose_to_matrix(&PoseSO3::new(0.0, 0.5, 0.0).unwrap()) * Vector3::z();
        assert!(up.z > 0.0, "positive elevation lifts the camera");
    }

    #[test]
    fn align_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt: Vec<Angle> = (0..32).map(|_| Angle::new(rng.random_range(0.0..TAU)).unwrap()).collect();
        let a = align_global_1d(&gt, &gt).unwrap();
        assert!(a.mean_error < 1e-9);
        assert!(angular_distance(a.offset, Angle::default()) < 1e-6);

        let pred: Vec<Angle> = gt.iter().map(|g| g.offset(0.7)).collect();
        let a = align_global_1d(&pred, &gt).unwrap();
        assert!(a.mean_error < 1e-5);
        assert!(angular_distance(a.offset, Angle::new(-0.7).unwrap()) < 1e-5);

        assert!(align_global_1d(&[], &[]).is_err());
        assert!(align_global_1d(&gt[..2], &gt[..3]).is_err());
    }

    #[test]
    fn align_matches_dense_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let angle = |r: &mut ChaCha8Rng| Angle::new(r.random_range(0.0..TAU)).unwrap();
        let pred: Vec<Angle> = (0..16).map(|_| angle(&mut rng)).collect();
        let gt: Vec<Angle> = (0..16).map(|_| angle(&mut rng)).collect();
        let sweep = (0..1_000_000)
            .map(|i| mean_aligned_error(&pred, &gt, TAU * i as f64 / 1e6))
            .fold(f64::INFINITY, f64::min);
        let a = align_global_1d(&pred, &gt).unwrap();
        assert!((a.mean_error - sweep).abs() < 1e-4, "{} vs {sweep}", a.mean_error);
        assert!(a.mean_error <= sweep + 1e-12);
    }

    #[test]
    fn determinant_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = PoseSO3::new(rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0), rng.random_range(-10.0..10.0)).unwrap();
            let m = pose_to_matrix(&p);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn wrap_idempotent(x in -1e6f64..1e6) {
            let w = wrap_angle(x).unwrap().radians();
            prop_assert!((0.0..TAU).contains(&w));
            prop_assert_eq!(wrap_angle(w).unwrap().radians(), w);
        }

        #[test]
        fn distance_translation_invariant(a in 0.0..TAU, b in 0.0..TAU, c in -20.0f64..20.0) {
            let (a, b) = (Angle::new(a).unwrap(), Angle::new(b).unwrap());
            let d0 = angular_distance(a, b);
            let d1 = angular_distance(a.offset(c), b.offset(c));
            prop_assert!((d0 - d1).abs() < 1e-9);
            prop_assert!(d0 <= PI + 1e-15);
        }

        #[test]
        fn triangle_inequality(a in 0.0..TAU, b in 0.0..TAU, c in 0.0..TAU) {
            let (a, b, c) = (Angle::new(a).unwrap(), Angle::new(b).unwrap(), Angle::new(c).unwrap());
            prop_assert!(angular_distance(a, c) <= angular_distance(a, b) + angular_distance(b, c) + 1e-12);
        }

        #[test]
        fn class_reflexive_and_transitive(z in 0.0..TAU, n in 1usize..8, pick in 0usize..8) {
            let rel = EquivalenceRelation::new(n).unwrap();
            let z = Angle::new(z).unwrap();
            let class = rel.class(&z);
            prop_assert_eq!(class.len(), n);
            prop_assert!(class.contains(&z));
            let member = class[pick % n];
            let other = rel.class(&member);
            for m in &other {
                prop_assert!(class.iter().any(|c| angular_distance(*c, *m) < 1e-9));
                prop_assert!(rel.equivalent(m, &z, 1e-9));
            }
            // distinct members
            for i in 0..n {
                for j in 0..i {
                    prop_assert!(angular_distance(class[i], class[j]) > 1e-6);
                }
            }
        }

        #[test]
        fn representative_idempotent(z in 0.0..TAU, n in 1usize..8) {
            let rel = EquivalenceRelation::new(n).unwrap();
            let r = rel.representative(Angle::new(z).unwrap());
            prop_assert!(r.radians() < rel.period());
            prop_assert_eq!(rel.representative(r), r);
        }

        #[test]
        fn alignment_gauge_invariant(seed in 0u64..1000, c in 0.0..TAU) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<Angle> = (0..12).map(|_| Angle::new(rng.random_range(0.0..TAU)).unwrap()).collect();
            let pred: Vec<Angle> = gt.iter().map(|g| g.offset(rng.random_range(-0.3..0.3))).collect();
            let shifted: Vec<Angle> = pred.iter().map(|p| p.offset(c)).collect();
            let e0 = align_global_1d(&pred, &gt).unwrap().mean_error;
            let e1 = align_global_1d(&shifted, &gt).unwrap().mean_error;
            prop_assert!((e0 - e1).abs() < 1e-6);
        }
    }
}
