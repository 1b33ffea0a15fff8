//! Lines, half-planes and planes in R^3.
//!
//! Non-horizontal affine lines are charted by `(y1, y2, alpha1, alpha2)`:
//! the line meets the plane `x3 = 0` at `(y1, y2, 0)` and is traversed along
//! the (non-unit) direction `(alpha1, alpha2, 1)`. Only this chart is
//! implemented; horizontal lines are rejected.

use nalgebra::{Matrix3, Rotation2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Ball, Vec3};

/// A non-horizontal affine line in John coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineNH {
    pub y1: f64,
    pub y2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// `k = sqrt(1 + |alpha|^2)`, `k1 = sqrt(1 + alpha1^2)`, `k2 = sqrt(1 + alpha2^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KFactors {
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
}

impl LineNH {
    pub const fn new(y1: f64, y2: f64, alpha1: f64, alpha2: f64) -> Self {
        Self { y1, y2, alpha1, alpha2 }
    }

    /// The vertical line through `(y1, y2, 0)`.
    pub const fn vertical(y1: f64, y2: f64) -> Self {
        Self::new(y1, y2, 0.0, 0.0)
    }

    pub const fn from_coords(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub const fn coords(&self) -> [f64; 4] {
        [self.y1, self.y2, self.alpha1, self.alpha2]
    }

    /// Chart map: the line through `x` with direction `xi`.
    pub fn from_point_direction(x: &Vec3, xi: &Vec3) -> Result<Self> {
        if xi[2] == 0.0 || !xi[2].is_finite() {
            return Err(Error::HorizontalDirection(xi[0], xi[1], xi[2]));
        }
        let a1 = xi[0] / xi[2];
        let a2 = xi[1] / xi[2];
        Ok(Self::new(x[0] - a1 * x[2], x[1] - a2 * x[2], a1, a2))
    }

    pub fn k_factors(&self) -> KFactors {
        let a1 = self.alpha1 * self.alpha1;
        let a2 = self.alpha2 * self.alpha2;
        KFactors {
            k: (1.0 + a1 + a2).sqrt(),
            k1: (1.0 + a1).sqrt(),
            k2: (1.0 + a2).sqrt(),
        }
    }

    /// `(alpha1, alpha2, 1)`.
    pub fn direction(&self) -> Vec3 {
        Vec3::new(self.alpha1, self.alpha2, 1.0)
    }

    /// `e_m = (alpha1, alpha2, 1) / k`.
    pub fn unit_direction(&self) -> Vec3 {
        self.direction() / self.k_factors().k
    }

    /// The point `(y1, y2, 0)`.
    pub fn anchor(&self) -> Vec3 {
        Vec3::new(self.y1, self.y2, 0.0)
    }

    /// `(y1 + alpha1 t, y2 + alpha2 t, t)`.
    pub fn point_at(&self, t: f64) -> Vec3 {
        Vec3::new(self.y1 + self.alpha1 * t, self.y2 + self.alpha2 * t, t)
    }

    /// Parameter `t` of the point of the line closest to `c`.
    pub fn closest_parameter(&self, c: &Vec3) -> f64 {
        let d = self.direction();
        (c - self.anchor()).dot(&d) / d.norm_squared()
    }

    pub fn closest_point(&self, c: &Vec3) -> Vec3 {
        self.point_at(self.closest_parameter(c))
    }

    pub fn distance_to(&self, c: &Vec3) -> f64 {
        (self.closest_point(c) - c).norm()
    }

    /// Parameter interval `[t0, t1]` on which the line lies inside `ball`,
    /// or `None` if it misses the open ball.
    pub fn chord(&self, ball: &Ball) -> Option<(f64, f64)> {
        let d = self.direction();
        let q = self.anchor() - ball.center;
        let a = d.norm_squared();
        let b = 2.0 * q.dot(&d);
        let c = q.norm_squared() - ball.radius * ball.radius;
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        Some(((-b - root) / (2.0 * a), (-b + root) / (2.0 * a)))
    }

    /// Image of the line under rotation by `theta` about the `x3`-axis.
    pub fn rotated_about_x3(&self, theta: f64) -> Self {
        let rot = Rotation2::new(theta);
        let y = rot * Vector2::new(self.y1, self.y2);
        let a = rot * Vector2::new(self.alpha1, self.alpha2);
        Self::new(y[0], y[1], a[0], a[1])
    }
}

pub fn chart_from_point_direction(x: &Vec3, xi: &Vec3) -> Result<LineNH> {
    LineNH::from_point_direction(x, xi)
}

pub fn k_factors(line: &LineNH) -> KFactors {
    line.k_factors()
}

/// Which of the two coordinate half-planes bounded by a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HalfPlaneSide {
    /// Parallel to the `x1`-axis, interior towards `+x1`; lies in `x2 = y2 + alpha2 x3`.
    H1,
    /// Parallel to the `x2`-axis, interior towards `+x2`; lies in `x1 = y1 + alpha1 x3`.
    H2,
}

/// Oriented half-plane with boundary line `m`.
///
/// Orthonormal parametrization: `point(s, t) = origin + t e_m + s nu_m`,
/// `s >= 0`, where `nu_m` is the interior normal of `m` inside the half-plane
/// and `(e_m, nu_m, nu_H)` is positively oriented.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlaneFrame {
    pub line: LineNH,
    pub side: HalfPlaneSide,
    pub origin: Vec3,
    pub along: Vec3,
    pub inward: Vec3,
    pub normal: Vec3,
}

impl HalfPlaneFrame {
    /// Frame with origin at the anchor `(y1, y2, 0)` of the line.
    pub fn new(line: LineNH, side: HalfPlaneSide) -> Self {
        Self::anchored(line, side, &line.anchor())
    }

    /// Frame whose origin is the point of `m` closest to `anchor`.
    pub fn anchored(line: LineNH, side: HalfPlaneSide, anchor: &Vec3) -> Self {
        let KFactors { k1, k2, .. } = line.k_factors();
        let along = line.unit_direction();
        let (axis, normal) = match side {
            HalfPlaneSide::H1 => (Vec3::x(), Vec3::new(0.0, 1.0 / k2, -line.alpha2 / k2)),
            HalfPlaneSide::H2 => (Vec3::y(), Vec3::new(-1.0 / k1, 0.0, line.alpha1 / k1)),
        };
        let inward = (axis - along * axis.dot(&along)).normalize();
        let frame = Self {
            line,
            side,
            origin: line.closest_point(anchor),
            along,
            inward,
            normal,
        };
        let det = frame.orientation();
        assert!(
            (det - 1.0).abs() <= 1e-12,
            "half-plane frame is not positively oriented (det = {det})"
        );
        frame
    }

    /// `det(e_m, nu_m, nu_H)`; +1 for a valid frame.
    pub fn orientation(&self) -> f64 {
        Matrix3::from_columns(&[self.along, self.inward, self.normal]).determinant()
    }

    pub fn point(&self, s: f64, t: f64) -> Vec3 {
        self.origin + self.along * t + self.inward * s
    }

    /// Boundary value `l_i = y_i + alpha_i x3` of the free chart coordinate.
    pub fn chart_boundary(&self, x3: f64) -> f64 {
        match self.side {
            HalfPlaneSide::H1 => self.line.y1 + self.line.alpha1 * x3,
            HalfPlaneSide::H2 => self.line.y2 + self.line.alpha2 * x3,
        }
    }

    /// Chart parametrization: H1 maps `(x1, x3) -> (x1, y2 + alpha2 x3, x3)`,
    /// H2 maps `(x2, x3) -> (y1 + alpha1 x3, x2, x3)`. Points of the
    /// half-plane have free coordinate above `chart_boundary(x3)`.
    pub fn chart_point(&self, free: f64, x3: f64) -> Vec3 {
        let l = &self.line;
        match self.side {
            HalfPlaneSide::H1 => Vec3::new(free, l.y2 + l.alpha2 * x3, x3),
            HalfPlaneSide::H2 => Vec3::new(l.y1 + l.alpha1 * x3, free, x3),
        }
    }

    /// Area element of the chart parametrization: `k2` on H1, `k1` on H2.
    pub fn chart_area_factor(&self) -> f64 {
        let k = self.line.k_factors();
        match self.side {
            HalfPlaneSide::H1 => k.k2,
            HalfPlaneSide::H2 => k.k1,
        }
    }
}

pub fn half_plane_frame(line: LineNH, side: HalfPlaneSide) -> HalfPlaneFrame {
    HalfPlaneFrame::new(line, side)
}

/// Affine plane `{x : <x, normal> = offset}` with an orthonormal in-plane basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub normal: Vec3,
    pub offset: f64,
    pub b1: Vec3,
    pub b2: Vec3,
}

impl PlaneFrame {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "plane normal must be non-zero and finite, got {normal:?}"
            )));
        }
        let normal = normal / n;
        // seed with the coordinate axis least aligned with the normal
        let i = normal.iamin();
        let mut seed = Vec3::zeros();
        seed[i] = 1.0;
        let b1 = (seed - normal * seed.dot(&normal)).normalize();
        let b2 = normal.cross(&b1);
        Ok(Self { normal, offset, b1, b2 })
    }

    /// Plane with normal `(sin th cos ph, sin th sin ph, cos th)` at signed distance `d`.
    pub fn from_angles(theta: f64, phi: f64, d: f64) -> Self {
        let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        Self::new(n, d).expect("unit normal")
    }

    pub fn through_point(point: &Vec3, normal: &Vec3) -> Result<Self> {
        let n = normal.normalize();
        Self::new(n, point.dot(&n))
    }

    pub fn origin(&self) -> Vec3 {
        self.normal * self.offset
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        self.origin() + self.b1 * a + self.b2 * b
    }

    /// In-plane coordinates of the orthogonal projection of `x`.
    pub fn project(&self, x: &Vec3) -> (f64, f64) {
        let r = x - self.origin();
        (r.dot(&self.b1), r.dot(&self.b2))
    }

    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        x.dot(&self.normal) - self.offset
    }
}

/// Box from which random lines are drawn: `|y_i| <= y_half_width`,
/// `|alpha_i| <= alpha_half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineBox {
    pub y_half_width: f64,
    pub alpha_half_width: f64,
}

impl Default for LineBox {
    fn default() -> Self {
        Self {
            y_half_width: 0.8,
            alpha_half_width: 2.0,
        }
    }
}

impl LineBox {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LineNH {
        let y = self.y_half_width;
        let a = self.alpha_half_width;
        LineNH::new(
            rng.random_range(-y..=y),
            rng.random_range(-y..=y),
            rng.random_range(-a..=a),
            rng.random_range(-a..=a),
        )
    }

    /// Line box scaled to a support ball: lines through the ball's
    /// neighbourhood with the default slope range.
    pub fn for_support(ball: &Ball) -> Self {
        Self {
            y_half_width: 0.8 * ball.radius,
            alpha_half_width: 2.0,
        }
    }
}

/// Random line through a point drawn uniformly from the ball of radius
/// `fraction * R` about the support centre, with slopes in
/// `[-alpha_half_width, alpha_half_width]^2`.
pub fn sample_line_through<R: Rng + ?Sized>(rng: &mut R, ball: &Ball, fraction: f64, alpha_half_width: f64) -> LineNH {
    let x = ball.center + sample_in_ball(rng, fraction * ball.radius);
    let a = alpha_half_width;
    let (a1, a2) = (rng.random_range(-a..=a), rng.random_range(-a..=a));
    LineNH::new(x[0] - a1 * x[2], x[1] - a2 * x[2], a1, a2)
}

/// Uniform point in the ball of radius `radius` about the origin.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let x = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if x.norm_squared() <= 1.0 {
            return x * radius;
        }
    }
}

/// Uniformly random plane meeting the ball of radius `reach` about `center`.
pub fn sample_plane<R: Rng + ?Sized>(rng: &mut R, center: &Vec3, reach: f64) -> PlaneFrame {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let n = Vec3::new(r * phi.cos(), r * phi.sin(), z);
    let d: f64 = rng.random_range(-reach..=reach);
    PlaneFrame::new(n, center.dot(&n) + d).expect("unit normal")
}
