//! Unified (Mei) omnidirectional camera model.
//!
//! Forward projection maps a camera-frame 3D point onto the unit sphere,
//! through the mirror offset `xi` onto a normalized plane, applies a
//! two-coefficient radial distortion, and scales into pixels. The inverse
//! chain undoes the intrinsics, removes the distortion with a Newton-Raphson
//! root find on the radial polynomial, and solves the inverse mirror model by
//! bisection to recover a unit ray direction.
//!
//! With `xi = 0` and `k1 = k2 = 0` the model reduces exactly to a pinhole
//! camera, which the tests lean on heavily.

use std::cell::Cell;
use std::fmt;
use std::path::Path;

use nalgebra::{UnitVector3, Vector3};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default cutoff for `Z' + xi`: rays at or below it are outside the
/// hemisphere the mirror model can represent.
pub const MIRROR_EPSILON: f64 = 1e-6;

/// Newton-Raphson convergence threshold on the radial residual `|f(r)|`.
pub const NEWTON_TOLERANCE: f64 = 1e-10;

/// Newton-Raphson iteration cap.
pub const NEWTON_MAX_ITERATIONS: usize = 50;

/// Bisection interval tolerance for the inverse mirror solve.
const BISECTION_TOLERANCE: f64 = 1e-13;
const BISECTION_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    /// The input point has zero (or non-finite) norm and defines no ray.
    #[error("point has zero or non-finite norm")]
    ZeroNormPoint,
    /// After sphere normalization `Z' + xi <= epsilon`: the ray is outside
    /// the hemisphere the mirror model can project.
    #[error("point is behind the valid mirror hemisphere (Z' + xi = {z_plus_xi})")]
    BehindCamera { z_plus_xi: f64 },
    /// Newton-Raphson did not reach the residual tolerance within the cap.
    #[error("radial undistortion did not converge for r_d = {r_d} (residual {residual})")]
    NoConvergence { r_d: f64, residual: f64 },
    /// The distortion polynomial derivative became non-positive: the
    /// coefficients are not monotone at this radius and the inverse is
    /// ill-defined.
    #[error("distortion polynomial is non-monotonic at r = {r}")]
    NonMonotonicDomain { r: f64 },
    /// The inverse mirror quadratic has no real root: the normalized-plane
    /// point lies outside the valid image region for this `xi`.
    #[error("no real inverse-mirror solution for rho^2 = {rho_sq}")]
    NoRealRoot { rho_sq: f64 },
    /// Requested distance was not strictly positive.
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord<S> {
    pub u: S,
    pub v: S,
}

impl<S: Scalar> PixelCoord<S> {
    pub fn new(u: S, v: S) -> Self {
        Self { u, v }
    }
}

impl<S: fmt::Display> fmt::Display for PixelCoord<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Undistorted normalized-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPlanePoint<S> {
    pub x: S,
    pub y: S,
}

/// Unit ray direction in the camera frame.
pub type UnitDirection<S> = UnitVector3<S>;

/// Full parameter set of the unified fisheye model.
///
/// `xi` is the mirror offset between the unit-sphere center and the
/// normalized projection plane; `k1`, `k2` are the radial distortion
/// coefficients on the normalized-plane radius; `gamma1`, `gamma2` are the
/// focal scaling factors and `(u0, v0)` the principal point, all in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MeiIntrinsics<S> {
    pub xi: S,
    pub k1: S,
    pub k2: S,
    pub gamma1: S,
    pub gamma2: S,
    pub u0: S,
    pub v0: S,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("line {line}: cannot parse `{text}` (expected `key = value`)")]
    Malformed { line: usize, text: String },
    #[error("line {line}: cannot parse value for `{key}`: {text}")]
    BadValue {
        line: usize,
        key: String,
        text: String,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid intrinsics: {0}")]
    Invalid(String),
    #[error("cannot read calibration file: {0}")]
    Io(String),
}

impl<S: Scalar> MeiIntrinsics<S> {
    /// Validates the model invariants: positive focal scales, principal
    /// point inside the image, nonnegative mirror parameter.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let err = |msg: String| Err(CalibrationError::Invalid(msg));
        if !(self.gamma1 > S::zero()) || !(self.gamma2 > S::zero()) {
            return err("gamma1 and gamma2 must be positive".into());
        }
        if self.width < 1 || self.height < 1 {
            return err("width and height must be at least 1".into());
        }
        if !(self.u0 >= S::zero()) || self.u0 >= S::of(self.width as f64) {
            return err(format!("u0 must lie in [0, width); width = {}", self.width));
        }
        if !(self.v0 >= S::zero()) || self.v0 >= S::of(self.height as f64) {
            return err(format!(
                "v0 must lie in [0, height); height = {}",
                self.height
            ));
        }
        if !(self.xi >= S::zero()) {
            return err("xi must be nonnegative".into());
        }
        for (name, value) in [("k1", self.k1), ("k2", self.k2)] {
            if !value.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Parses a plain-text calibration file, one `key = value` per line.
    ///
    /// Required keys: `xi, k1, k2, gamma1, gamma2, u0, v0, width, height`.
    /// Blank lines and `#` comments are ignored. Errors carry line numbers.
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let mut fields: [Option<f64>; 9] = [None; 9];
        const KEYS: [&str; 9] = [
            "xi", "k1", "k2", "gamma1", "gamma2", "u0", "v0", "width", "height",
        ];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(CalibrationError::Malformed {
                    line,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim();
            let Some(slot) = KEYS.iter().position(|k| *k == key) else {
                return Err(CalibrationError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            };
            if fields[slot].is_some() {
                return Err(CalibrationError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            let parsed: f64 = value.trim().parse().map_err(|_| CalibrationError::BadValue {
                line,
                key: key.to_string(),
                text: value.trim().to_string(),
            })?;
            fields[slot] = Some(parsed);
        }
        let get = |i: usize| fields[i].ok_or(CalibrationError::MissingKey(KEYS[i]));
        let cam = MeiIntrinsics {
            xi: S::of(get(0)?),
            k1: S::of(get(1)?),
            k2: S::of(get(2)?),
            gamma1: S::of(get(3)?),
            gamma2: S::of(get(4)?),
            u0: S::of(get(5)?),
            v0: S::of(get(6)?),
            width: get(7)? as u32,
            height: get(8)? as u32,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Loads and parses a calibration file from disk.
    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalibrationError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes to the calibration file format accepted by [`Self::parse`].
    pub fn to_file_string(&self) -> String {
        format!(
            "xi = {}\nk1 = {}\nk2 = {}\ngamma1 = {}\ngamma2 = {}\nu0 = {}\nv0 = {}\nwidth = {}\nheight = {}\n",
            self.xi.as_f64(),
            self.k1.as_f64(),
            self.k2.as_f64(),
            self.gamma1.as_f64(),
            self.gamma2.as_f64(),
            self.u0.as_f64(),
            self.v0.as_f64(),
            self.width,
            self.height,
        )
    }

    /// Intrinsics for the next-coarser pyramid level: halved image size and
    /// focal scales, principal point divided by two (pixel coordinates halve
    /// exactly under 2x2 downsampling).
    pub fn halved(&self) -> Self {
        let half = S::of(0.5);
        MeiIntrinsics {
            xi: self.xi,
            k1: self.k1,
            k2: self.k2,
            gamma1: self.gamma1 * half,
            gamma2: self.gamma2 * half,
            u0: self.u0 * half,
            v0: self.v0 * half,
            width: (self.width / 2).max(1),
            height: (self.height / 2).max(1),
        }
    }

    /// Projects a camera-frame 3D point to continuous pixel coordinates.
    pub fn project(&self, point: &Vector3<S>) -> Result<PixelCoord<S>, CameraError> {
        self.project_with_epsilon(point, S::of(MIRROR_EPSILON))
    }

    /// [`Self::project`] with an explicit hemisphere cutoff on `Z' + xi`.
    pub fn project_with_epsilon(
        &self,
        point: &Vector3<S>,
        epsilon: S,
    ) -> Result<PixelCoord<S>, CameraError> {
        let norm_sq = point.norm_squared();
        if !(norm_sq > S::zero()) || !norm_sq.is_finite() {
            return Err(CameraError::ZeroNormPoint);
        }
        let on_sphere = point / norm_sq.sqrt();
        let denom = on_sphere.z + self.xi;
        if denom <= epsilon {
            return Err(CameraError::BehindCamera {
                z_plus_xi: denom.as_f64(),
            });
        }
        let x = on_sphere.x / denom;
        let y = on_sphere.y / denom;
        let r_sq = x * x + y * y;
        // Beyond the monotone domain of the distortion polynomial the radial
        // map folds back and the forward/inverse chain stops being a
        // bijection; such rays are outside the model's usable field of view.
        if let Some(limit) = monotone_radius_sq_limit(self.k1, self.k2) {
            if r_sq >= limit {
                return Err(CameraError::NonMonotonicDomain { r: r_sq.sqrt().as_f64() });
            }
        }
        let factor = S::one() + self.k1 * r_sq + self.k2 * r_sq * r_sq;
        let x_d = x * factor;
        let y_d = y * factor;
        Ok(PixelCoord {
            u: self.gamma1 * x_d + self.u0,
            v: self.gamma2 * y_d + self.v0,
        })
    }

    /// Recovers the unit ray direction observed at a pixel.
    ///
    /// Inverse chain: intrinsics inversion, Newton-Raphson radial
    /// undistortion, bisection inverse mirror solve. For any point inside the
    /// valid field of view, `unproject(project(p))` reproduces `p / |p|`.
    pub fn unproject(&self, pixel: PixelCoord<S>) -> Result<UnitDirection<S>, CameraError> {
        UNPROJECTION_SOLVES.with(|c| c.set(c.get() + 1));
        let x_d = (pixel.u - self.u0) / self.gamma1;
        let y_d = (pixel.v - self.v0) / self.gamma2;
        let n = self.undistort(x_d, y_d)?;
        invert_mirror(&n, self.xi)
    }

    /// Removes radial distortion from normalized-plane coordinates.
    pub fn undistort(&self, x_d: S, y_d: S) -> Result<NormalizedPlanePoint<S>, CameraError> {
        let r_d = (x_d * x_d + y_d * y_d).sqrt();
        let r = newton_raphson_radius(r_d, self.k1, self.k2)?;
        let r_sq = r * r;
        let factor = S::one() + self.k1 * r_sq + self.k2 * r_sq * r_sq;
        Ok(NormalizedPlanePoint {
            x: x_d / factor,
            y: y_d / factor,
        })
    }
}

/// Upper bound (in squared normalized radius) of the region where the radial
/// map `r -> r (1 + k1 r^2 + k2 r^4)` is strictly increasing, i.e. the
/// smallest positive root of its derivative `1 + 3 k1 x + 5 k2 x^2` in
/// `x = r^2`. `None` means the map is monotone on all of `[0, inf)`.
pub fn monotone_radius_sq_limit<S: Scalar>(k1: S, k2: S) -> Option<S> {
    let three = S::of(3.0);
    if k2 == S::zero() {
        if k1 < S::zero() {
            return Some(-S::one() / (three * k1));
        }
        return None;
    }
    let discriminant = S::of(9.0) * k1 * k1 - S::of(20.0) * k2;
    if discriminant < S::zero() {
        return None;
    }
    let sqrt_d = discriminant.sqrt();
    let denom = S::of(10.0) * k2;
    let roots = [(-three * k1 - sqrt_d) / denom, (-three * k1 + sqrt_d) / denom];
    roots
        .into_iter()
        .filter(|x| *x > S::zero())
        .min_by(|a, b| a.partial_cmp(b).expect("finite roots"))
}

/// Solves `r (1 + k1 r^2 + k2 r^4) = r_d` for `r >= 0` by Newton-Raphson.
///
/// Starts at `r = r_d` (exact for zero distortion) and stops once the
/// residual drops below [`NEWTON_TOLERANCE`]. Solutions outside the monotone
/// domain of the polynomial are rejected.
pub fn newton_raphson_radius<S: Scalar>(r_d: S, k1: S, k2: S) -> Result<S, CameraError> {
    debug_assert!(r_d >= S::zero());
    let tol = S::of(NEWTON_TOLERANCE);
    let limit = monotone_radius_sq_limit(k1, k2);
    let mut r = r_d;
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let r_sq = r * r;
        let residual = r * (S::one() + k1 * r_sq + k2 * r_sq * r_sq) - r_d;
        if residual.abs() < tol {
            if limit.is_some_and(|lim| r_sq >= lim) {
                return Err(CameraError::NonMonotonicDomain { r: r.as_f64() });
            }
            return Ok(r);
        }
        let derivative =
            S::one() + S::of(3.0) * k1 * r_sq + S::of(5.0) * k2 * r_sq * r_sq;
        if derivative <= S::zero() {
            return Err(CameraError::NonMonotonicDomain { r: r.as_f64() });
        }
        r -= residual / derivative;
    }
    let r_sq = r * r;
    let residual = r * (S::one() + k1 * r_sq + k2 * r_sq * r_sq) - r_d;
    Err(CameraError::NoConvergence {
        r_d: r_d.as_f64(),
        residual: residual.as_f64(),
    })
}

/// Solves the inverse mirror model for an undistorted normalized-plane point.
///
/// Finds `Z'` with `(x^2 + y^2)(Z' + xi)^2 + Z'^2 = 1` and returns the unit
/// direction `(x (Z' + xi), y (Z' + xi), Z')`. Of the two quadratic roots the
/// forward-facing one (larger `Z'`) is selected. The bisection bracket is
/// `[-xi rho^2 / (1 + rho^2), 1]`: the lower end is the parabola vertex, where
/// the quadratic is nonpositive whenever a real root exists, and the upper
/// end always evaluates nonnegative, so the sign change is guaranteed.
pub fn invert_mirror<S: Scalar>(
    n: &NormalizedPlanePoint<S>,
    xi: S,
) -> Result<UnitDirection<S>, CameraError> {
    let rho_sq = n.x * n.x + n.y * n.y;
    if rho_sq == S::zero() {
        // On-axis: Z'^2 = 1, forward root.
        return Ok(UnitVector3::new_unchecked(Vector3::new(
            S::zero(),
            S::zero(),
            S::one(),
        )));
    }
    let discriminant = S::one() + (S::one() - xi * xi) * rho_sq;
    if discriminant < S::zero() {
        return Err(CameraError::NoRealRoot {
            rho_sq: rho_sq.as_f64(),
        });
    }
    let quadratic = |z: S| -> S {
        (rho_sq + S::one()) * z * z + S::of(2.0) * xi * rho_sq * z + xi * xi * rho_sq - S::one()
    };
    let mut lo = -(xi * rho_sq) / (S::one() + rho_sq);
    let mut hi = S::one();
    let tol = S::of(BISECTION_TOLERANCE);
    for _ in 0..BISECTION_MAX_ITERATIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) * S::of(0.5);
        if quadratic(mid) > S::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let z = (lo + hi) * S::of(0.5);
    let scale = z + xi;
    Ok(UnitVector3::new_normalize(Vector3::new(
        n.x * scale,
        n.y * scale,
        z,
    )))
}

/// Closed-form forward-facing root of the inverse mirror quadratic,
/// `Z' = (-xi rho^2 + sqrt(1 + (1 - xi^2) rho^2)) / (rho^2 + 1)`.
///
/// Kept alongside the shipped bisection path as an algebraically independent
/// cross-check; the tests require the two to agree.
pub fn invert_mirror_closed_form<S: Scalar>(
    n: &NormalizedPlanePoint<S>,
    xi: S,
) -> Result<UnitDirection<S>, CameraError> {
    let rho_sq = n.x * n.x + n.y * n.y;
    let discriminant = S::one() + (S::one() - xi * xi) * rho_sq;
    if discriminant < S::zero() {
        return Err(CameraError::NoRealRoot {
            rho_sq: rho_sq.as_f64(),
        });
    }
    let z = (-xi * rho_sq + discriminant.sqrt()) / (rho_sq + S::one());
    let scale = z + xi;
    Ok(UnitVector3::new_normalize(Vector3::new(
        n.x * scale,
        n.y * scale,
        z,
    )))
}

/// Scales a unit direction by a metric distance.
pub fn lift_to_point<S: Scalar>(
    direction: &UnitDirection<S>,
    distance: S,
) -> Result<Vector3<S>, CameraError> {
    if !(distance > S::zero()) {
        return Err(CameraError::NonPositiveDistance(distance.as_f64()));
    }
    Ok(direction.into_inner() * distance)
}

/// Euclidean ray length of a camera-frame point; the per-pixel quantity the
/// distance map stores (not the depth `Z`).
pub fn distance_of<S: Scalar>(point: &Vector3<S>) -> S {
    point.norm()
}

thread_local! {
    static UNPROJECTION_SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Number of iterative unprojection solves performed by this thread.
///
/// Each [`MeiIntrinsics::unproject`] call counts once (it runs one
/// Newton-Raphson and one bisection). Ray-table lookups do not count, which
/// is what makes cache amortization observable.
pub fn unprojection_solves() -> u64 {
    UNPROJECTION_SOLVES.with(|c| c.get())
}

/// Resets this thread's unprojection counter.
pub fn reset_unprojection_solves() {
    UNPROJECTION_SOLVES.with(|c| c.set(0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn derived_cam() -> MeiIntrinsics<f64> {
        MeiIntrinsics {
            xi: 0.8,
            k1: 0.05,
            k2: -0.005,
            gamma1: 300.0,
            gamma2: 300.0,
            u0: 320.0,
            v0: 320.0,
            width: 640,
            height: 640,
        }
    }

    fn pinhole_cam(gamma: f64, c: f64, size: u32) -> MeiIntrinsics<f64> {
        MeiIntrinsics {
            xi: 0.0,
            k1: 0.0,
            k2: 0.0,
            gamma1: gamma,
            gamma2: gamma,
            u0: c,
            v0: c,
            width: size,
            height: size,
        }
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let mut cam = derived_cam();
        cam.u0 = 500.0;
        cam.v0 = 500.0;
        cam.width = 1000;
        cam.height = 1000;
        let px = cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(px.u, 500.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, 500.0, epsilon = 1e-12);
    }

    #[test]
    fn pinhole_reduction() {
        let cam = pinhole_cam(100.0, 250.0, 500);
        let px = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(px.u, 350.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, 250.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_matches_high_precision_reference() {
        // Frozen from an independent extended-precision evaluation of the
        // projection chain on (1, 0, 2) with the derived camera.
        let px = derived_cam().project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(px.u, 399.45346865817306, epsilon = 1e-10);
        assert_abs_diff_eq!(px.v, 320.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_error_contracts() {
        let cam = derived_cam();
        assert_eq!(
            cam.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(CameraError::ZeroNormPoint)
        );
        // xi = 0.8: a ray pointing straight back has Z' + xi = -0.2.
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn newton_identity_and_zero() {
        assert_eq!(newton_raphson_radius(0.5, 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(newton_raphson_radius(0.0, 0.1, -0.01).unwrap(), 0.0);
    }

    #[test]
    fn newton_inverts_forward_polynomial() {
        // r_d built by forward-evaluating r (1 + k1 r^2) at r = 0.5.
        let r: f64 = newton_raphson_radius(0.5125, 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-10);
        let residual = r * (1.0 + 0.1 * r * r) - 0.5125;
        assert!(residual.abs() < 1e-10);
    }

    #[test]
    fn undistort_round_trips_forward_distortion() {
        let cam = derived_cam();
        // Forward-distorted (0.3, 0.4): frozen from the same reference run.
        let n = cam.undistort(0.30365625, 0.404875).unwrap();
        assert_abs_diff_eq!(n.x, 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(n.y, 0.4, epsilon = 1e-9);

        let identity = pinhole_cam(1.0, 0.0, 1).undistort(0.7, -0.2).unwrap();
        assert_eq!((identity.x, identity.y), (0.7, -0.2));

        let zero = cam.undistort(0.0, 0.0).unwrap();
        assert_eq!((zero.x, zero.y), (0.0, 0.0));
    }

    #[test]
    fn invert_mirror_matches_closed_form_reference() {
        // Frozen closed-form value for (1, 0) at xi = 0.8.
        let d = invert_mirror(&NormalizedPlanePoint { x: 1.0, y: 0.0 }, 0.8).unwrap();
        assert_abs_diff_eq!(d.x, 0.98309518948453, epsilon = 1e-9);
        assert_abs_diff_eq!(d.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.z, 0.18309518948453, epsilon = 1e-9);
    }

    #[test]
    fn invert_mirror_on_axis_and_pinhole() {
        let d = invert_mirror(&NormalizedPlanePoint { x: 0.0, y: 0.0 }, 1.3).unwrap();
        assert_eq!((d.x, d.y, d.z), (0.0, 0.0, 1.0));

        let d = invert_mirror(&NormalizedPlanePoint { x: 0.5, y: -0.25 }, 0.0).unwrap();
        let expected = Vector3::new(0.5, -0.25, 1.0).normalize();
        assert_abs_diff_eq!(d.x, expected.x, epsilon = 1e-12);
        assert_abs_diff_eq!(d.y, expected.y, epsilon = 1e-12);
        assert_abs_diff_eq!(d.z, expected.z, epsilon = 1e-12);
    }

    #[test]
    fn invert_mirror_rejects_points_outside_valid_region() {
        // xi > 1 shrinks the valid region: rho^2 > 1 / (xi^2 - 1) has no root.
        let r = invert_mirror(&NormalizedPlanePoint { x: 2.0, y: 0.0 }, 1.2);
        assert!(matches!(r, Err(CameraError::NoRealRoot { .. })));
    }

    #[test]
    fn invert_mirror_handles_backward_roots_above_unity_xi() {
        // xi = 1.2 admits rays with Z' < 0 (beyond 180 degrees). The vertex
        // bracket must still find the forward-facing (larger) root.
        let n = NormalizedPlanePoint {
            x: 1.41421356237,
            y: 0.0,
        };
        let xi = 1.2;
        let bisected = invert_mirror(&n, xi).unwrap();
        let closed = invert_mirror_closed_form(&n, xi).unwrap();
        assert!(bisected.z < 0.0);
        assert_abs_diff_eq!(bisected.x, closed.x, epsilon = 1e-9);
        assert_abs_diff_eq!(bisected.z, closed.z, epsilon = 1e-9);
    }

    #[test]
    fn unproject_principal_point_is_optical_axis() {
        let cam = derived_cam();
        let d = cam.unproject(PixelCoord::new(320.0, 320.0)).unwrap();
        assert_abs_diff_eq!(d.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unproject_inverts_pinhole_example() {
        let cam = pinhole_cam(100.0, 250.0, 500);
        let d = cam.unproject(PixelCoord::new(350.0, 250.0)).unwrap();
        let expected = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert_abs_diff_eq!(d.x, expected.x, epsilon = 1e-12);
        assert_abs_diff_eq!(d.z, expected.z, epsilon = 1e-12);
    }

    #[test]
    fn project_unproject_round_trip_derived_point() {
        let cam = derived_cam();
        let p = Vector3::new(1.0, 0.0, 2.0);
        let px = cam.project(&p).unwrap();
        let d = cam.unproject(px).unwrap();
        let expected = p.normalize();
        for i in 0..3 {
            assert_abs_diff_eq!(d[i], expected[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn lift_and_distance() {
        let d = UnitVector3::new_normalize(Vector3::new(0.0, 0.0, 1.0));
        let p = lift_to_point(&d, 5.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 5.0));
        assert!(matches!(
            lift_to_point(&d, 0.0),
            Err(CameraError::NonPositiveDistance(_))
        ));
        assert_eq!(distance_of(&Vector3::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(distance_of(&Vector3::new(1.0, 2.0, 2.0)), 3.0);
        assert_eq!(distance_of(&Vector3::new(0.0, 0.0, 5.0)), 5.0);
    }

    #[test]
    fn lift_composes_with_projection() {
        let cam = derived_cam();
        let px = PixelCoord::new(401.25, 287.5);
        let dir = cam.unproject(px).unwrap();
        let p = lift_to_point(&dir, 7.25).unwrap();
        assert_abs_diff_eq!(distance_of(&p), 7.25, epsilon = 1e-12);
        let back = cam.project(&p).unwrap();
        assert_abs_diff_eq!(back.u, px.u, epsilon = 1e-6);
        assert_abs_diff_eq!(back.v, px.v, epsilon = 1e-6);
    }

    #[test]
    fn calibration_parse_round_trip_and_errors() {
        let cam = derived_cam();
        let parsed = MeiIntrinsics::<f64>::parse(&cam.to_file_string()).unwrap();
        assert_eq!(parsed, cam);

        let missing = MeiIntrinsics::<f64>::parse("xi = 0.8\nk1 = 0.0\n");
        assert!(matches!(missing, Err(CalibrationError::MissingKey(_))));

        let bad = MeiIntrinsics::<f64>::parse("xi = 0.8\nk1 = abc\n");
        assert!(matches!(bad, Err(CalibrationError::BadValue { line: 2, .. })));

        let unknown = MeiIntrinsics::<f64>::parse("focal = 3\n");
        assert!(matches!(
            unknown,
            Err(CalibrationError::UnknownKey { line: 1, .. })
        ));

        let mut invalid = cam.clone();
        invalid.gamma1 = -1.0;
        let text = invalid.to_file_string();
        assert!(matches!(
            MeiIntrinsics::<f64>::parse(&text),
            Err(CalibrationError::Invalid(_))
        ));
    }

    #[test]
    fn generic_over_f32_agrees_with_f64_at_low_precision() {
        let cam64 = derived_cam();
        let cam32 = MeiIntrinsics::<f32> {
            xi: 0.8,
            k1: 0.05,
            k2: -0.005,
            gamma1: 300.0,
            gamma2: 300.0,
            u0: 320.0,
            v0: 320.0,
            width: 640,
            height: 640,
        };
        let p64 = cam64.project(&Vector3::new(0.4, -0.3, 1.7)).unwrap();
        let p32 = cam32.project(&Vector3::new(0.4, -0.3, 1.7)).unwrap();
        assert_abs_diff_eq!(p32.u as f64, p64.u, epsilon = 1e-3);
        assert_abs_diff_eq!(p32.v as f64, p64.v, epsilon = 1e-3);
    }

    proptest! {
        /// Round-trip property over the valid hemisphere.
        #[test]
        fn prop_round_trip(
            x in -3.0f64..3.0,
            y in -3.0f64..3.0,
            z in -1.0f64..6.0,
        ) {
            let cam = derived_cam();
            let p = Vector3::new(x, y, z);
            prop_assume!(p.norm() > 1e-3);
            let on_sphere = p.normalize();
            prop_assume!(on_sphere.z + cam.xi > 0.05);
            let px = match cam.project(&p) {
                Ok(px) => px,
                Err(_) => return Ok(()),
            };
            prop_assume!(px.u >= 0.0 && px.u < cam.width as f64);
            prop_assume!(px.v >= 0.0 && px.v < cam.height as f64);
            let d = cam.unproject(px).unwrap();
            for i in 0..3 {
                prop_assert!((d[i] - on_sphere[i]).abs() < 1e-7);
            }
        }

        /// Newton-Raphson residual bound on successful returns.
        #[test]
        fn prop_newton_residual(
            r_d in 0.0f64..1.5,
            k1 in -0.1f64..0.3,
            k2 in -0.05f64..0.05,
        ) {
            if let Ok(r) = newton_raphson_radius(r_d, k1, k2) {
                let r_sq = r * r;
                let residual = r * (1.0 + k1 * r_sq + k2 * r_sq * r_sq) - r_d;
                prop_assert!(residual.abs() < 1e-10);
                // Deterministic for identical inputs.
                prop_assert_eq!(r, newton_raphson_radius(r_d, k1, k2).unwrap());
            }
        }

        /// Bisection agrees with the closed-form quadratic root.
        #[test]
        fn prop_mirror_matches_closed_form(
            x in -1.5f64..1.5,
            y in -1.5f64..1.5,
            xi in 0.0f64..1.3,
        ) {
            let n = NormalizedPlanePoint { x, y };
            match (invert_mirror(&n, xi), invert_mirror_closed_form(&n, xi)) {
                (Ok(a), Ok(b)) => {
                    for i in 0..3 {
                        prop_assert!((a[i] - b[i]).abs() < 1e-9);
                    }
                    prop_assert!((a.norm() - 1.0).abs() < 1e-9);
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "paths disagree: {a:?} vs {b:?}"),
            }
        }

        /// Pinhole reduction: with xi = 0 and no distortion the projection is
        /// the classic gamma * X / Z + c.
        #[test]
        fn prop_pinhole_reduction(
            x in -2.0f64..2.0,
            y in -2.0f64..2.0,
            z in 0.1f64..10.0,
        ) {
            let cam = pinhole_cam(120.0, 256.0, 512);
            let px = cam.project(&Vector3::new(x, y, z)).unwrap();
            prop_assert!((px.u - (120.0 * x / z + 256.0)).abs() < 1e-12);
            prop_assert!((px.v - (120.0 * y / z + 256.0)).abs() < 1e-12);
        }
    }
}
