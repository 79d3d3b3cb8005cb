//! Paraxial ray-transfer (ABCD) matrix algebra.
//!
//! One 2x2 matrix acts independently on each transverse axis; the optics here
//! are rotationally symmetric so x and y share a matrix by default, with
//! [`apply_per_axis`] as the astigmatic escape hatch. The twin-photon solve
//! ([`klyshko_solve`]) recovers the angle a detected position pair implies,
//! treating the pair source as a mirror that folds the second arm onto the
//! first.

use core::fmt;

use crate::vec2::Vec2;

/// Paraxial ray at a reference plane: transverse position (meters) and angle
/// (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ray {
    pub r: Vec2,
    pub theta: Vec2,
}

impl Ray {
    pub fn new(r: Vec2, theta: Vec2) -> Ray {
        Ray { r, theta }
    }

    /// Largest angle component the paraxial model tolerates, radians.
    /// Reconstruction drops rays beyond this; the instrument itself runs at
    /// illumination angles an order of magnitude smaller.
    pub const PARAXIAL_MAX_RAD: f64 = 0.1;

    pub fn is_paraxial(&self, max_rad: f64) -> bool {
        self.theta.norm_max() <= max_rad
    }
}

/// Ray-transfer matrix [[a, b], [c, d]]. Units: a, d dimensionless; b meters;
/// c 1/meters. Lossless prescriptions keep det = a*d - b*c = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcdMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AbcdMatrix {
    pub const IDENTITY: AbcdMatrix = AbcdMatrix {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Matrix product `self * rhs` (rhs acts on the ray first).
    pub fn then_after(&self, rhs: &AbcdMatrix) -> AbcdMatrix {
        AbcdMatrix {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }
}

/// One element of an optical prescription, in propagation order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpticalElement {
    FreeSpace { length_m: f64 },
    ThinLens { focal_length_m: f64 },
}

pub type OpticalPrescription = [OpticalElement];

#[derive(Debug, Clone, PartialEq)]
pub enum OpticsError {
    /// An element parameter is NaN or infinite.
    NonFinite { value: f64 },
    /// A thin lens with f = 0 has no matrix; f = infinity is rejected too
    /// (callers wanting "no lens" use free_space(0)).
    ZeroFocalLength,
    /// compose() over an empty prescription.
    EmptyPrescription,
    /// |b| at or below the threshold: the two planes are conjugate and the
    /// angle cannot be recovered from positions alone.
    DegenerateImagingPlane { b: f64, b_min: f64 },
}

impl fmt::Display for OpticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpticsError::NonFinite { value } => {
                write!(f, "non-finite element parameter: {value}")
            }
            OpticsError::ZeroFocalLength => {
                write!(f, "thin lens focal length must be nonzero and finite")
            }
            OpticsError::EmptyPrescription => write!(f, "prescription has no elements"),
            OpticsError::DegenerateImagingPlane { b, b_min } => write!(
                f,
                "degenerate imaging plane: |B| = {:.3e} m <= {:.3e} m, planes are conjugate and \
                 the angle is unrecoverable",
                b.abs(),
                b_min
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OpticsError {}

/// Propagation through `d` meters of free space. Negative `d` is virtual
/// back-propagation, used when sweeping the software refocus plane.
pub fn free_space(d: f64) -> Result<AbcdMatrix, OpticsError> {
    if !d.is_finite() {
        return Err(OpticsError::NonFinite { value: d });
    }
    Ok(AbcdMatrix {
        a: 1.0,
        b: d,
        c: 0.0,
        d: 1.0,
    })
}

/// Thin lens of focal length `f` meters.
pub fn thin_lens(f: f64) -> Result<AbcdMatrix, OpticsError> {
    if !f.is_finite() {
        return Err(OpticsError::ZeroFocalLength);
    }
    if f == 0.0 {
        return Err(OpticsError::ZeroFocalLength);
    }
    Ok(AbcdMatrix {
        a: 1.0,
        b: 0.0,
        c: -1.0 / f,
        d: 1.0,
    })
}

fn element_matrix(e: &OpticalElement) -> Result<AbcdMatrix, OpticsError> {
    match *e {
        OpticalElement::FreeSpace { length_m } => free_space(length_m),
        OpticalElement::ThinLens { focal_length_m } => thin_lens(focal_length_m),
    }
}

/// Collapse a prescription to one matrix. Elements are listed in propagation
/// order, so the product runs right-to-left:
/// `apply(compose([e1, e2]), ray) == apply(M_e2, apply(M_e1, ray))`.
pub fn compose(prescription: &OpticalPrescription) -> Result<AbcdMatrix, OpticsError> {
    if prescription.is_empty() {
        return Err(OpticsError::EmptyPrescription);
    }
    let mut m = AbcdMatrix::IDENTITY;
    for e in prescription {
        m = element_matrix(e)?.then_after(&m);
    }
    Ok(m)
}

/// Propagate a ray: r2 = a r1 + b th1, th2 = c r1 + d th1, per axis.
pub fn apply(m: &AbcdMatrix, ray: &Ray) -> Ray {
    Ray {
        r: ray.r * m.a + ray.theta * m.b,
        theta: ray.r * m.c + ray.theta * m.d,
    }
}

/// Astigmatic variant: separate matrices for the x and y axes.
pub fn apply_per_axis(mx: &AbcdMatrix, my: &AbcdMatrix, ray: &Ray) -> Ray {
    Ray {
        r: Vec2::new(
            mx.a * ray.r.x + mx.b * ray.theta.x,
            my.a * ray.r.y + my.b * ray.theta.y,
        ),
        theta: Vec2::new(
            mx.c * ray.r.x + mx.d * ray.theta.x,
            my.c * ray.r.y + my.d * ray.theta.y,
        ),
    }
}

/// Twin-photon backtracking: given the position `r1` at the input plane and
/// the position `r2` observed after propagation through `m`, recover the
/// angles at both planes. Fails when |b| <= `b_min`: the planes are then
/// conjugate and position carries no angle information.
pub fn klyshko_solve(
    m: &AbcdMatrix,
    r1: Vec2,
    r2: Vec2,
    b_min: f64,
) -> Result<(Vec2, Vec2), OpticsError> {
    if m.b.abs() <= b_min {
        return Err(OpticsError::DegenerateImagingPlane { b: m.b, b_min });
    }
    let theta1 = (r2 - r1 * m.a) / m.b;
    let theta2 = r1 * m.c + theta1 * m.d;
    Ok((theta1, theta2))
}

/// Default conjugate-plane threshold for [`klyshko_solve`], meters. Below
/// this, pixel-scale position noise maps to angles beyond paraxial validity.
pub const B_MIN_DEFAULT_M: f64 = 1e-6;

/// Move the output plane of `base` by `z` meters: free_space(z) composed after
/// `base`.
pub fn refocus_matrix(base: &AbcdMatrix, z: f64) -> Result<AbcdMatrix, OpticsError> {
    Ok(free_space(z)?.then_after(base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_mat_eq(m: &AbcdMatrix, a: f64, b: f64, c: f64, d: f64, tol: f64) {
        assert!((m.a - a).abs() <= tol, "a: {} vs {}", m.a, a);
        assert!((m.b - b).abs() <= tol, "b: {} vs {}", m.b, b);
        assert!((m.c - c).abs() <= tol, "c: {} vs {}", m.c, c);
        assert!((m.d - d).abs() <= tol, "d: {} vs {}", m.d, d);
    }

    #[test]
    fn free_space_zero_is_identity() {
        let m = free_space(0.0).unwrap();
        assert_eq!(m, AbcdMatrix::IDENTITY);
    }

    #[test]
    fn free_space_definition() {
        let m = free_space(0.1).unwrap();
        assert_mat_eq(&m, 1.0, 0.1, 0.0, 1.0, 0.0);
    }

    #[test]
    fn free_space_additivity() {
        let lhs = compose(&[
            OpticalElement::FreeSpace { length_m: 0.03 },
            OpticalElement::FreeSpace { length_m: 0.07 },
        ])
        .unwrap();
        let rhs = free_space(0.10).unwrap();
        assert_mat_eq(&lhs, rhs.a, rhs.b, rhs.c, rhs.d, 1e-15);
    }

    #[test]
    fn free_space_rejects_non_finite() {
        assert!(matches!(
            free_space(f64::NAN),
            Err(OpticsError::NonFinite { .. })
        ));
        assert!(matches!(
            free_space(f64::INFINITY),
            Err(OpticsError::NonFinite { .. })
        ));
    }

    #[test]
    fn thin_lens_definition() {
        let m = thin_lens(0.1).unwrap();
        assert_mat_eq(&m, 1.0, 0.0, -10.0, 1.0, 1e-12);
    }

    #[test]
    fn thin_lens_unit_determinant() {
        assert!((thin_lens(0.05).unwrap().det() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn thin_lens_rejects_zero_and_infinite_focal_length() {
        assert!(matches!(thin_lens(0.0), Err(OpticsError::ZeroFocalLength)));
        // "No lens" is spelled free_space(0), not f = infinity.
        assert!(matches!(
            thin_lens(f64::INFINITY),
            Err(OpticsError::ZeroFocalLength)
        ));
    }

    fn four_f(f1: f64, f2: f64) -> [OpticalElement; 5] {
        [
            OpticalElement::FreeSpace { length_m: f1 },
            OpticalElement::ThinLens { focal_length_m: f1 },
            OpticalElement::FreeSpace { length_m: f1 + f2 },
            OpticalElement::ThinLens { focal_length_m: f2 },
            OpticalElement::FreeSpace { length_m: f2 },
        ]
    }

    #[test]
    fn compose_4f_is_pure_magnification() {
        let m = compose(&four_f(0.1, 0.5)).unwrap();
        assert_mat_eq(&m, -5.0, 0.0, 0.0, -0.2, 1e-12);
        let unit = compose(&four_f(0.1, 0.1)).unwrap();
        assert_mat_eq(&unit, -1.0, 0.0, 0.0, -1.0, 1e-12);
    }

    #[test]
    fn compose_single_element_is_that_matrix() {
        let m = compose(&[OpticalElement::ThinLens { focal_length_m: 0.25 }]).unwrap();
        let lens = thin_lens(0.25).unwrap();
        assert_eq!(m, lens);
    }

    #[test]
    fn compose_empty_rejected() {
        assert!(matches!(compose(&[]), Err(OpticsError::EmptyPrescription)));
    }

    #[test]
    fn compose_order_is_right_to_left() {
        let e1 = OpticalElement::FreeSpace { length_m: 0.2 };
        let e2 = OpticalElement::ThinLens { focal_length_m: 0.1 };
        let m = compose(&[e1, e2]).unwrap();
        let ray = Ray::new(Vec2::new(1e-3, -2e-3), Vec2::new(0.01, 0.02));
        let step1 = apply(&compose(&[e1]).unwrap(), &ray);
        let step2 = apply(&compose(&[e2]).unwrap(), &step1);
        let direct = apply(&m, &ray);
        assert!((direct.r - step2.r).norm() <= 1e-15);
        assert!((direct.theta - step2.theta).norm() <= 1e-15);
    }

    #[test]
    fn apply_identity_returns_same_ray() {
        let ray = Ray::new(Vec2::new(2e-3, 1e-3), Vec2::new(-0.004, 0.002));
        let out = apply(&AbcdMatrix::IDENTITY, &ray);
        assert_eq!(out, ray);
    }

    #[test]
    fn apply_free_space_advances_position() {
        let ray = Ray::new(Vec2::ZERO, Vec2::new(0.005, 0.0));
        let out = apply(&free_space(0.2).unwrap(), &ray);
        assert!((out.r.x - 1e-3).abs() <= 1e-15);
        assert_eq!(out.theta, ray.theta);
    }

    #[test]
    fn apply_4f_magnifies() {
        let m = compose(&four_f(0.1, 0.5)).unwrap();
        let out = apply(&m, &Ray::new(Vec2::new(1e-3, 0.0), Vec2::ZERO));
        assert!((out.r.x - -5e-3).abs() <= 1e-12);
        assert!(out.theta.norm() <= 1e-12);
    }

    #[test]
    fn klyshko_free_space_example() {
        let m = free_space(0.1).unwrap();
        let (th1, th2) =
            klyshko_solve(&m, Vec2::ZERO, Vec2::new(1e-3, 0.0), B_MIN_DEFAULT_M).unwrap();
        assert!((th1.x - 0.01).abs() <= 1e-12);
        assert!((th2.x - 0.01).abs() <= 1e-12, "free space keeps the angle");
    }

    #[test]
    fn klyshko_rejects_conjugate_planes() {
        let m = compose(&four_f(0.1, 0.5)).unwrap();
        let err = klyshko_solve(&m, Vec2::ZERO, Vec2::new(1e-3, 0.0), B_MIN_DEFAULT_M);
        assert!(matches!(
            err,
            Err(OpticsError::DegenerateImagingPlane { .. })
        ));
    }

    #[test]
    fn klyshko_round_trip_reproduces_observed_position() {
        let m = compose(&[
            OpticalElement::FreeSpace { length_m: 0.04 },
            OpticalElement::ThinLens { focal_length_m: 0.1 },
            OpticalElement::FreeSpace { length_m: 0.25 },
        ])
        .unwrap();
        let r1 = Vec2::new(0.8e-3, -0.4e-3);
        let r2 = Vec2::new(-1.1e-3, 0.6e-3);
        let (th1, th2) = klyshko_solve(&m, r1, r2, B_MIN_DEFAULT_M).unwrap();
        let out = apply(&m, &Ray::new(r1, th1));
        assert!((out.r - r2).norm() <= 1e-12 * r2.norm().max(1.0));
        assert!((out.theta - th2).norm() <= 1e-15);
    }

    #[test]
    fn refocus_zero_keeps_base() {
        let base = compose(&four_f(0.1, 0.5)).unwrap();
        assert_eq!(refocus_matrix(&base, 0.0).unwrap(), base);
    }

    #[test]
    fn refocus_identity_base_is_free_space() {
        let m = refocus_matrix(&AbcdMatrix::IDENTITY, 0.004).unwrap();
        assert_eq!(m, free_space(0.004).unwrap());
    }

    #[test]
    fn refocus_is_additive() {
        let base = compose(&[
            OpticalElement::ThinLens { focal_length_m: 0.2 },
            OpticalElement::FreeSpace { length_m: 0.05 },
        ])
        .unwrap();
        let twice = refocus_matrix(&refocus_matrix(&base, 0.003).unwrap(), -0.007).unwrap();
        let once = refocus_matrix(&base, -0.004).unwrap();
        assert_mat_eq(&twice, once.a, once.b, once.c, once.d, 1e-15);
    }

    #[test]
    fn apply_per_axis_mixes_axes_independently() {
        let mx = free_space(0.1).unwrap();
        let my = free_space(0.3).unwrap();
        let ray = Ray::new(Vec2::ZERO, Vec2::new(0.01, 0.01));
        let out = apply_per_axis(&mx, &my, &ray);
        assert!((out.r.x - 1e-3).abs() <= 1e-15);
        assert!((out.r.y - 3e-3).abs() <= 1e-15);
    }
}
