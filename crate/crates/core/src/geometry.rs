//! Array geometry: rotations, angle-of-arrival transforms, array responses
//! and the cosine radiation pattern.
//!
//! Conventions:
//! - angles are radians; azimuth `phi` lives in `[0, 2π)`, elevation `theta`
//!   in `[0, π]` measured from the local `+z` axis;
//! - the antenna boresight is the local `+y` axis, so the radiating
//!   half-space is `phi ∈ [0, π)`;
//! - an orientation `(alpha, beta, gamma)` is pitch/roll/yaw about the local
//!   x/y/z axes, composed as `Rz(gamma) · Ry(beta) · Rx(alpha)`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{CVector, Error, Result, C64};

/// Pitch, roll and yaw of one array relative to its initial orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn within(&self, lower: f64, upper: f64) -> bool {
        self.to_array().iter().all(|a| (lower..=upper).contains(a))
    }
}

/// Direction of a propagation path in some array frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    /// Azimuth in `[0, 2π)`.
    pub phi: f64,
    /// Elevation from the `+z` axis in `[0, π]`.
    pub theta: f64,
}

impl PathAngles {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    /// Recovers spherical angles from a (not necessarily normalized) direction.
    pub fn from_direction(v: &Vector3<f64>) -> Self {
        let unit = v.normalize();
        Self {
            phi: wrap_azimuth(unit.y.atan2(unit.x)),
            theta: unit.z.clamp(-1.0, 1.0).acos(),
        }
    }
}

/// Maps any angle into `[0, 2π)`.
pub fn wrap_azimuth(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid may round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Axis-aligned box bounding the movement of one antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds3 {
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

impl Bounds3 {
    pub fn centered(center: Vector3<f64>, half_width: Vector3<f64>) -> Self {
        Self {
            lower: center - half_width,
            upper: center + half_width,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| self.lower[i] <= p[i] && p[i] <= self.upper[i])
    }

    /// Largest axis-wise gap between two boxes; positive when they are
    /// disjoint, and a lower bound on the distance between any two points
    /// taken one from each box.
    pub fn separation(&self, other: &Bounds3) -> f64 {
        (0..3)
            .map(|i| (other.lower[i] - self.upper[i]).max(self.lower[i] - other.upper[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Antenna positions of one AP in its local frame together with their
/// movable regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaLayout {
    positions: Vec<Vector3<f64>>,
    boxes: Vec<Bounds3>,
}

impl AntennaLayout {
    /// Validates that every antenna sits inside its own box and that any two
    /// boxes are at least `min_spacing` apart, which keeps every reachable
    /// configuration above the spacing limit.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        boxes: Vec<Bounds3>,
        min_spacing: f64,
    ) -> Result<Self> {
        if positions.is_empty() || positions.len() != boxes.len() {
            return Err(Error::InvalidConfig(format!(
                "layout needs one box per antenna ({} positions, {} boxes)",
                positions.len(),
                boxes.len()
            )));
        }
        for (n, (p, b)) in positions.iter().zip(&boxes).enumerate() {
            if !b.contains(p) {
                return Err(Error::InvalidConfig(format!(
                    "antenna {n} lies outside its movable region"
                )));
            }
        }
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let gap = boxes[i].separation(&boxes[j]);
                if gap < min_spacing * (1.0 - 1e-12) {
                    return Err(Error::InvalidConfig(format!(
                        "movable regions of antennas {i} and {j} are only {gap:.4e} m apart, need {min_spacing:.4e} m"
                    )));
                }
            }
        }
        Ok(Self { positions, boxes })
    }

    /// Uniform linear array along the local x axis, centred on the origin,
    /// with every antenna free to move `half_width` around its initial spot.
    pub fn linear(
        num_antennas: usize,
        spacing: f64,
        half_width: Vector3<f64>,
        wavelength: f64,
    ) -> Result<Self> {
        let offset = (num_antennas as f64 - 1.0) / 2.0;
        let positions: Vec<_> = (0..num_antennas)
            .map(|n| Vector3::new((n as f64 - offset) * spacing, 0.0, 0.0))
            .collect();
        let boxes = positions
            .iter()
            .map(|p| Bounds3::centered(*p, half_width))
            .collect();
        Self::new(positions, boxes, wavelength / 2.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn boxes(&self) -> &[Bounds3] {
        &self.boxes
    }

    /// Positions flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .collect()
    }

    /// Per-coordinate `(lower, upper)` bounds matching [`Self::flat_positions`].
    pub fn flat_bounds(&self) -> Vec<(f64, f64)> {
        self.boxes
            .iter()
            .flat_map(|b| (0..3).map(move |i| (b.lower[i], b.upper[i])))
            .collect()
    }

    /// Replaces the positions, keeping the boxes. Each position must lie in
    /// its box.
    pub fn with_flat_positions(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * self.len() {
            return Err(Error::Shape(format!(
                "expected {} coordinates, got {}",
                3 * self.len(),
                flat.len()
            )));
        }
        let positions: Vec<_> = flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        for (n, (p, b)) in positions.iter().zip(&self.boxes).enumerate() {
            if !b.contains(p) {
                return Err(Error::InvalidConfig(format!(
                    "antenna {n} moved outside its movable region"
                )));
            }
        }
        Ok(Self {
            positions,
            boxes: self.boxes.clone(),
        })
    }
}

/// `Rz(gamma) · Ry(beta) · Rx(alpha)`.
pub fn rotation_matrix(o: Orientation) -> Matrix3<f64> {
    let (sa, ca) = o.alpha.sin_cos();
    let (sb, cb) = o.beta.sin_cos();
    let (sg, cg) = o.gamma.sin_cos();
    Matrix3::new(
        cb * cg,
        sa * sb * cg - ca * sg,
        ca * sb * cg + sa * sg,
        cb * sg,
        sa * sb * sg + ca * cg,
        ca * sb * sg - sa * cg,
        -sb,
        sa * cb,
        ca * cb,
    )
}

/// Unit vector pointing in direction `a`.
pub fn wave_vector(a: PathAngles) -> Vector3<f64> {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Angles of direction `a` seen from an array rotated by `o`.
pub fn transform_angles(o: Orientation, a: PathAngles) -> PathAngles {
    rotated_angles(&rotation_matrix(o), &wave_vector(a))
}

pub(crate) fn rotated_angles(rotation: &Matrix3<f64>, rho: &Vector3<f64>) -> PathAngles {
    let local = rotation.transpose() * rho;
    PathAngles {
        phi: wrap_azimuth(local.y.atan2(local.x)),
        theta: local.z.clamp(-1.0, 1.0).acos(),
    }
}

/// Far-field response of `layout` rotated by `o` to a plane wave arriving
/// from `a`.
pub fn array_response(
    layout: &AntennaLayout,
    o: Orientation,
    a: PathAngles,
    wavelength: f64,
) -> CVector {
    steering(
        layout.positions(),
        &rotation_matrix(o),
        &wave_vector(a),
        wavelength,
    )
}

pub(crate) fn steering(
    positions: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    rho: &Vector3<f64>,
    wavelength: f64,
) -> CVector {
    let k = TAU / wavelength;
    // ρᵀ R t = (Rᵀ ρ)ᵀ t
    let local = rotation.transpose() * rho;
    CVector::from_iterator(
        positions.len(),
        positions
            .iter()
            .map(|t| C64::from_polar(1.0, k * local.dot(t))),
    )
}

/// Power gain `U` of the cosine pattern for local angles.
pub fn pattern_power(local: PathAngles) -> f64 {
    if (0.0..PI).contains(&local.phi) {
        16.0 / PI * local.phi.sin().powi(2) * local.theta.sin()
    } else {
        0.0
    }
}

/// Field amplitude `sqrt(U)` of the cosine pattern towards `a` for an array
/// rotated by `o`.
pub fn pattern_gain(o: Orientation, a: PathAngles) -> f64 {
    pattern_power(transform_angles(o, a)).sqrt()
}

/// Rotation taking a frame whose `+y` axis faces `boresight` and whose `+z`
/// axis is as close to global up as possible into the global frame. Columns
/// are the local axes expressed globally.
pub fn facing_frame(boresight: Vector3<f64>) -> Matrix3<f64> {
    let y = boresight.normalize();
    let up = Vector3::z();
    let z = (up - y * y.dot(&up)).normalize();
    let x = y.cross(&z);
    Matrix3::from_columns(&[x, y, z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rx(a: f64) -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos())
    }
    fn ry(b: f64) -> Matrix3<f64> {
        Matrix3::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos())
    }
    fn rz(g: f64) -> Matrix3<f64> {
        Matrix3::new(g.cos(), -g.sin(), 0.0, g.sin(), g.cos(), 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn zero_rotation_is_identity() {
        assert_eq!(rotation_matrix(Orientation::IDENTITY), Matrix3::identity());
    }

    #[test]
    fn yaw_maps_x_to_y() {
        let r = rotation_matrix(Orientation::new(0.0, 0.0, FRAC_PI_2));
        let v = r * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn closed_form_matches_elementary_product() {
        let (a, b, g) = (PI / 6.0, -PI / 6.0, PI / 6.0);
        let r = rotation_matrix(Orientation::new(a, b, g));
        let reference = rz(g) * ry(b) * rx(a);
        assert_abs_diff_eq!(r, reference, epsilon = 1e-14);
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wave_vector_cardinal_directions() {
        assert_abs_diff_eq!(
            wave_vector(PathAngles::new(0.0, FRAC_PI_2)),
            Vector3::x(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            wave_vector(PathAngles::new(FRAC_PI_2, FRAC_PI_2)),
            Vector3::y(),
            epsilon = 1e-15
        );
        for phi in [0.0, 1.0, 4.0] {
            assert_abs_diff_eq!(
                wave_vector(PathAngles::new(phi, 0.0)),
                Vector3::z(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn identity_and_yaw_transforms() {
        let a = PathAngles::new(2.5, 1.1);
        let same = transform_angles(Orientation::IDENTITY, a);
        assert!((same.phi - a.phi).abs() < 1e-12 && (same.theta - a.theta).abs() < 1e-12);

        let g = 0.7;
        let yawed = transform_angles(
            Orientation::new(0.0, 0.0, g),
            PathAngles::new(0.3, FRAC_PI_2),
        );
        assert!((yawed.phi - wrap_azimuth(0.3 - g)).abs() < 1e-12);
        assert!((yawed.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn transform_matches_spherical_reconversion() {
        let o = Orientation::new(PI / 6.0, -PI / 12.0, PI / 4.0);
        let a = PathAngles::new(1.0, 1.2);
        // independent route: elementary matrices, inverse applied explicitly
        let r = rz(o.gamma) * ry(o.beta) * rx(o.alpha);
        let rho = Vector3::new(
            a.theta.sin() * a.phi.cos(),
            a.theta.sin() * a.phi.sin(),
            a.theta.cos(),
        );
        let v = r.try_inverse().unwrap() * rho;
        let mut phi = v.y.atan2(v.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let theta = (v.z / v.norm()).acos();
        let got = transform_angles(o, a);
        assert!((got.phi - phi).abs() < 1e-12);
        assert!((got.theta - theta).abs() < 1e-12);
    }

    #[test]
    fn half_wavelength_flips_phase() {
        let lambda = 0.015;
        let layout = AntennaLayout::new(
            vec![Vector3::new(lambda / 2.0, 0.0, 0.0)],
            vec![Bounds3::centered(
                Vector3::new(lambda / 2.0, 0.0, 0.0),
                Vector3::zeros(),
            )],
            lambda / 2.0,
        )
        .unwrap();
        let a = array_response(
            &layout,
            Orientation::IDENTITY,
            PathAngles::new(0.0, FRAC_PI_2),
            lambda,
        );
        assert_abs_diff_eq!(a[0].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[0].im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn origin_layout_gives_all_ones() {
        let lambda = 0.01;
        let boxes: Vec<_> = (0..3)
            .map(|_| Bounds3::centered(Vector3::zeros(), Vector3::zeros()))
            .collect();
        // co-located antennas only pass validation with zero spacing
        let layout = AntennaLayout::new(vec![Vector3::zeros(); 3], boxes, 0.0).unwrap();
        let a = array_response(
            &layout,
            Orientation::new(0.2, 0.1, -0.3),
            PathAngles::new(1.0, 2.0),
            lambda,
        );
        for v in a.iter() {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn response_matches_direct_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lambda = 0.015;
        let layout =
            AntennaLayout::linear(4, 5.0 * lambda, Vector3::new(lambda, 0.0, lambda), lambda)
                .unwrap();
        for _ in 0..50 {
            let o = Orientation::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let a = PathAngles::new(rng.gen_range(0.0..TAU), rng.gen_range(0.0..PI));
            let resp = array_response(&layout, o, a, lambda);
            let rho = wave_vector(a);
            let r = rz(o.gamma) * ry(o.beta) * rx(o.alpha);
            for (n, t) in layout.positions().iter().enumerate() {
                let phase = 2.0 * PI / lambda * (rho.transpose() * r * t)[0];
                assert!((resp[n].norm() - 1.0).abs() < 1e-14);
                let expected = C64::new(phase.cos(), phase.sin());
                assert!((resp[n] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pattern_boresight_and_back_lobe() {
        let boresight = pattern_power(PathAngles::new(FRAC_PI_2, FRAC_PI_2)).sqrt();
        assert!((boresight - (16.0 / PI).sqrt()).abs() < 1e-12);
        assert!((boresight - 2.2568).abs() < 1e-4);
        assert_eq!(pattern_power(PathAngles::new(1.5 * PI, FRAC_PI_2)), 0.0);
        assert_eq!(
            pattern_gain(Orientation::IDENTITY, PathAngles::new(1.5 * PI, 1.0)),
            0.0
        );
    }

    #[test]
    fn linear_layout_rejects_overlapping_regions() {
        let lambda = 0.015;
        assert!(AntennaLayout::linear(
            4,
            5.0 * lambda,
            Vector3::new(2.0 * lambda, 0.0, 2.0 * lambda),
            lambda
        )
        .is_ok());
        assert!(AntennaLayout::linear(
            4,
            5.0 * lambda,
            Vector3::new(2.3 * lambda, 0.0, 0.0),
            lambda
        )
        .is_err());
        assert!(AntennaLayout::linear(4, lambda / 4.0, Vector3::zeros(), lambda).is_err());
    }

    #[test]
    fn facing_frame_is_right_handed() {
        let f = facing_frame(Vector3::new(-1.0, -1.0, 0.0));
        assert!((f.determinant() - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(f.column(2).into_owned(), Vector3::z(), epsilon = 1e-12);
        let y = f.column(1).into_owned();
        assert_abs_diff_eq!(
            y,
            Vector3::new(-1.0, -1.0, 0.0).normalize(),
            epsilon = 1e-12
        );
    }
}
