//! Planar pose algebra and the Mahalanobis machinery used by the motion model.
//!
//! Angles are kept in the half-open interval (-π, π]. Relative poses are
//! composed as SE(2) elements; covariance matrices are ordered (x, y, θ).

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Wraps an angle into (-π, π]. Rejects non-finite input.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(theta))
}

/// Unchecked wrap; NaN passes through.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut r = theta - TAU * (theta / TAU).round();
    if r <= -PI {
        r += TAU;
    } else if r > PI {
        r -= TAU;
    }
    r
}

/// Relative planar pose (Δx, Δy, Δθ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    dx: f64,
    dy: f64,
    dtheta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        dx: 0.0,
        dy: 0.0,
        dtheta: 0.0,
    };

    /// Builds a pose, wrapping the heading.
    #[inline]
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self {
            dx,
            dy,
            dtheta: wrap(dtheta),
        }
    }

    /// Like [`Pose2::new`] but rejects non-finite components.
    pub fn try_new(dx: f64, dy: f64, dtheta: f64) -> Result<Self> {
        if !(dx.is_finite() && dy.is_finite() && dtheta.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        Ok(Self::new(dx, dy, dtheta))
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.dy
    }

    #[inline]
    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.dtheta]
    }

    /// Translation length √(dx² + dy²).
    #[inline]
    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// `self ∘ other`: the pose reached by applying `other` in the frame of `self`.
    #[inline]
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.dtheta.sin_cos();
        Pose2::new(
            self.dx + c * other.dx - s * other.dy,
            self.dy + s * other.dx + c * other.dy,
            self.dtheta + other.dtheta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.dtheta.sin_cos();
        Pose2::new(
            -c * self.dx - s * self.dy,
            s * self.dx - c * self.dy,
            -self.dtheta,
        )
    }

    /// Componentwise interpolation `(1 - s)·self + s·other`, with the heading of
    /// `other` unwrapped to the representative closest to `self` first.
    #[inline]
    pub fn lerp(&self, other: &Pose2, s: f64) -> Pose2 {
        let dth = wrap(other.dtheta - self.dtheta);
        Pose2::new(
            self.dx + s * (other.dx - self.dx),
            self.dy + s * (other.dy - self.dy),
            self.dtheta + s * dth,
        )
    }

    #[inline]
    pub fn midpoint(&self, other: &Pose2) -> Pose2 {
        self.lerp(other, 0.5)
    }
}

/// Free-function form of [`Pose2::compose`].
#[inline]
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

/// Global planar pose, used only for ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl WorldPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn distance(&self, other: &WorldPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute wrapped heading difference in radians, in [0, π].
    pub fn heading_diff(&self, other: &WorldPose) -> f64 {
        wrap(self.theta - other.theta).abs()
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn relative_to(&self, other: &WorldPose) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let ex = other.x - self.x;
        let ey = other.y - self.y;
        Pose2::new(c * ex + s * ey, -s * ex + c * ey, other.theta - self.theta)
    }

    /// Moves `self` by the relative pose `step`.
    pub fn apply(&self, step: &Pose2) -> WorldPose {
        let (s, c) = self.theta.sin_cos();
        WorldPose::new(
            self.x + c * step.dx() - s * step.dy(),
            self.y + s * step.dx() + c * step.dy(),
            self.theta + step.dtheta(),
        )
    }
}

/// Symmetric positive definite 3×3 covariance over (x, y, θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3 {
    matrix: Matrix3<f64>,
    precision: Matrix3<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl Covariance3 {
    /// Validates symmetry and positive definiteness, then caches the inverse.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance"));
        }
        let scale = m.amax().max(1.0);
        for r in 0..3 {
            for c in (r + 1)..3 {
                if (m[(r, c)] - m[(c, r)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let sym = (m + m.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite)?;
        if chol.l().diagonal().iter().any(|d| *d <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let precision = chol.inverse();
        Ok(Self {
            matrix: sym,
            precision: (precision + precision.transpose()) * 0.5,
        })
    }

    pub fn diagonal(var_x: f64, var_y: f64, var_theta: f64) -> Result<Self> {
        Self::new([
            [var_x, 0.0, 0.0],
            [0.0, var_y, 0.0],
            [0.0, 0.0, var_theta],
        ])
    }

    pub fn identity() -> Self {
        Self::diagonal(1.0, 1.0, 1.0).expect("identity is positive definite")
    }

    /// From upper-triangular entries `[xx, xy, xθ, yy, yθ, θθ]`.
    pub fn from_upper(u: [f64; 6]) -> Result<Self> {
        Self::new([[u[0], u[1], u[2]], [u[1], u[3], u[4]], [u[2], u[4], u[5]]])
    }

    pub fn upper(&self) -> [f64; 6] {
        let m = &self.matrix;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn precision(&self) -> &Matrix3<f64> {
        &self.precision
    }

    /// Multiplies every entry by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let m = self.matrix * factor;
        Self::new(m.into())
    }

    #[inline]
    fn quad(&self, r: &Vector3<f64>) -> f64 {
        r.dot(&(self.precision * r))
    }
}

#[inline]
fn residual(x: &Pose2, mu: &Pose2) -> Vector3<f64> {
    Vector3::new(x.dx - mu.dx, x.dy - mu.dy, wrap(x.dtheta - mu.dtheta))
}

/// Squared Mahalanobis distance rᵀΣ⁻¹r with the angular residual wrapped.
#[inline]
pub fn mahalanobis_sq(x: &Pose2, mu: &Pose2, sigma: &Covariance3) -> f64 {
    sigma.quad(&residual(x, mu)).max(0.0)
}

/// Minimum of [`mahalanobis_sq`] along a straight segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMin {
    pub d2: f64,
    /// Interpolation parameter in [0, 1] of the minimizer (0 at `a`).
    pub s_star: f64,
}

const DEGENERATE_SEGMENT: f64 = 1e-12;

/// Minimizes the squared Mahalanobis distance from `mu` to T(s) = (1-s)·a + s·b
/// over s ∈ [0, 1] using the closed form of the one-dimensional quadratic.
pub fn min_mahalanobis_on_segment(
    a: &Pose2,
    b: &Pose2,
    mu: &Pose2,
    sigma: &Covariance3,
) -> SegmentMin {
    let v = Vector3::new(b.dx - a.dx, b.dy - a.dy, wrap(b.dtheta - a.dtheta));
    if v.amax() < DEGENERATE_SEGMENT {
        return SegmentMin {
            d2: mahalanobis_sq(a, mu, sigma),
            s_star: 0.0,
        };
    }
    let w = Vector3::new(mu.dx - a.dx, mu.dy - a.dy, wrap(mu.dtheta - a.dtheta));
    let pv = sigma.precision * v;
    let den = pv.dot(&v);
    let s_star = if den > 0.0 {
        (pv.dot(&w) / den).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let point = Pose2::new(
        a.dx + s_star * v[0],
        a.dy + s_star * v[1],
        a.dtheta + s_star * v[2],
    );
    SegmentMin {
        d2: mahalanobis_sq(&point, mu, sigma),
        s_star,
    }
}

/// CDF of the chi-squared distribution with three degrees of freedom.
pub fn chi2_cdf_3(d2: f64) -> Result<f64> {
    if d2.is_nan() {
        return Err(Error::NonFinite("chi-squared argument"));
    }
    if d2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "chi-squared argument must be nonnegative, got {d2}"
        )));
    }
    Ok(chi2_cdf_3_unchecked(d2))
}

#[inline]
pub(crate) fn chi2_cdf_3_unchecked(d2: f64) -> f64 {
    if d2 == f64::INFINITY {
        return 1.0;
    }
    let r = d2.sqrt();
    let v = libm::erf(r / std::f64::consts::SQRT_2)
        - (2.0 / PI).sqrt() * r * (-0.5 * d2).exp();
    v.clamp(0.0, 1.0)
}
