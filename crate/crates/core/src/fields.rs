//! Compactly supported smooth scalar, vector and symmetric rank-2 fields on R^3.
//!
//! A [`SmoothField`] is an evaluator plus metadata (rank, support ball,
//! optional analytic gradient). Fields are never sampled onto grids: the
//! transforms evaluate them at arbitrary quadrature nodes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_gauss;

pub type Vec3 = Vector3<f64>;

/// Closed ball `|x - center| <= radius`; fields vanish outside its interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn origin(radius: f64) -> Self {
        Self::new(Vec3::zeros(), radius)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (x - self.center).norm_squared() < self.radius * self.radius
    }

    pub fn is_disjoint(&self, other: &Ball) -> bool {
        (self.center - other.center).norm() >= self.radius + other.radius
    }

    /// Smallest ball containing both.
    pub fn enclosing(&self, other: &Ball) -> Ball {
        let d = (other.center - self.center).norm();
        if d + other.radius <= self.radius {
            return *self;
        }
        if d + self.radius <= other.radius {
            return *other;
        }
        let radius = 0.5 * (d + self.radius + other.radius);
        let dir = (other.center - self.center) / d;
        Ball::new(self.center + dir * (radius - self.radius), radius)
    }
}

/// Components of a symmetric tensor of rank 0, 1 or 2 at one point.
/// Rank-2 components are stored row-major (`3 i + j`).
#[derive(Clone, Copy, PartialEq)]
pub struct Tensor {
    rank: usize,
    c: [f64; 9],
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{}{:?}", self.rank, self.components())
    }
}

/// Number of stored components of a rank-`h` tensor in three dimensions.
pub const fn component_count(rank: usize) -> usize {
    match rank {
        0 => 1,
        1 => 3,
        _ => 9,
    }
}

impl Tensor {
    #[inline]
    pub fn zero(rank: usize) -> Self {
        debug_assert!(rank <= 2, "tensor rank {rank} not supported");
        Self { rank, c: [0.0; 9] }
    }

    #[inline]
    pub fn scalar(v: f64) -> Self {
        let mut c = [0.0; 9];
        c[0] = v;
        Self { rank: 0, c }
    }

    #[inline]
    pub fn vector(v: &Vec3) -> Self {
        let mut c = [0.0; 9];
        c[0] = v[0];
        c[1] = v[1];
        c[2] = v[2];
        Self { rank: 1, c }
    }

    pub fn matrix(m: &Matrix3<f64>) -> Self {
        let mut t = Self::zero(2);
        for i in 0..3 {
            for j in 0..3 {
                t.c[3 * i + j] = m[(i, j)];
            }
        }
        t
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn components(&self) -> &[f64] {
        &self.c[..component_count(self.rank)]
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        let n = component_count(self.rank);
        &mut self.c[..n]
    }

    pub fn as_scalar(&self) -> f64 {
        self.c[0]
    }

    #[inline]
    pub fn as_vector(&self) -> Vec3 {
        Vec3::new(self.c[0], self.c[1], self.c[2])
    }

    pub fn as_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.c[3 * i + j])
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.c[3 * i + j]
    }

    /// `sum f_{i1..ih} d_{i1} ... d_{ih}`.
    pub fn contract(&self, d: &Vec3) -> f64 {
        match self.rank {
            0 => self.c[0],
            1 => self.c[0] * d[0] + self.c[1] * d[1] + self.c[2] * d[2],
            _ => {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += self.c[3 * i + j] * d[i] * d[j];
                    }
                }
                s
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.components().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn add_scaled(&mut self, other: &Tensor, s: f64) {
        for (a, b) in self.c.iter_mut().zip(other.c.iter()) {
            *a += s * b;
        }
    }
}

/// `d[comp][m] = ∂_m f_comp`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorGradient {
    pub rank: usize,
    pub d: [[f64; 3]; 9],
}

impl TensorGradient {
    pub fn zero(rank: usize) -> Self {
        Self { rank, d: [[0.0; 3]; 9] }
    }

    /// Jacobian `J[(i, m)] = ∂_m v_i` of a vector field.
    pub fn jacobian(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, m| self.d[i][m])
    }

    pub fn from_jacobian(j: &Matrix3<f64>) -> Self {
        let mut g = Self::zero(1);
        for i in 0..3 {
            for m in 0..3 {
                g.d[i][m] = j[(i, m)];
            }
        }
        g
    }
}

type ValueFn = dyn Fn(&Vec3) -> Tensor + Send + Sync;
type GradientFn = dyn Fn(&Vec3) -> TensorGradient + Send + Sync;

/// Compactly supported smooth tensor field of rank 0, 1 or 2.
#[derive(Clone)]
pub struct SmoothField {
    rank: usize,
    support: Ball,
    label: String,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothField")
            .field("label", &self.label)
            .field("rank", &self.rank)
            .field("support", &self.support)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Relative step of the fallback 4th-order gradient stencil.
pub const GRADIENT_STEP: f64 = 1e-4;
/// Relative step of the second-derivative stencils.
pub const HESSIAN_STEP: f64 = 1e-3;

const D1_OFFSETS: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

impl SmoothField {
    pub fn new<F>(rank: usize, support: Ball, label: impl Into<String>, value: F) -> Self
    where
        F: Fn(&Vec3) -> Tensor + Send + Sync + 'static,
    {
        assert!(rank <= 2, "field rank {rank} not supported");
        Self {
            rank,
            support,
            label: label.into(),
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&Vec3) -> TensorGradient + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn zero(rank: usize, support: Ball) -> Self {
        Self::new(rank, support, "zero", move |_| Tensor::zero(rank)).with_gradient(move |_| TensorGradient::zero(rank))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn support(&self) -> Ball {
        self.support
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Components at `x`; exactly zero outside the support ball.
    #[inline]
    pub fn value(&self, x: &Vec3) -> Tensor {
        if !self.support.contains(x) {
            return Tensor::zero(self.rank);
        }
        (self.value)(x)
    }

    /// First partial derivatives: analytic when supplied, otherwise a
    /// 4th-order central difference with step `GRADIENT_STEP * R`.
    pub fn gradient(&self, x: &Vec3) -> TensorGradient {
        match &self.gradient {
            Some(g) if self.support.contains(x) => g(x),
            Some(_) => TensorGradient::zero(self.rank),
            None => self.fd_gradient(x, GRADIENT_STEP * self.support.radius),
        }
    }

    pub fn fd_gradient(&self, x: &Vec3, h: f64) -> TensorGradient {
        let mut g = TensorGradient::zero(self.rank);
        let n = component_count(self.rank);
        for m in 0..3 {
            let mut acc = [0.0; 9];
            for (off, w) in D1_OFFSETS {
                let mut p = *x;
                p[m] += off * h;
                let v = self.value(&p);
                for (a, c) in acc.iter_mut().zip(v.components()) {
                    *a += w * c;
                }
            }
            for (comp, a) in acc.iter().enumerate().take(n) {
                g.d[comp][m] = a / (12.0 * h);
            }
        }
        g
    }

    /// Second derivatives `H[(a, b)] = ∂_a ∂_b f_comp`: a 4th-order central
    /// difference of the analytic gradient when available, otherwise a
    /// 4th-order stencil on values.
    pub fn hessian(&self, x: &Vec3, comp: usize) -> Matrix3<f64> {
        let h = HESSIAN_STEP * self.support.radius;
        let mut out = Matrix3::zeros();
        if self.gradient.is_some() {
            for b in 0..3 {
                let mut col = [0.0; 3];
                for (off, w) in D1_OFFSETS {
                    let mut p = *x;
                    p[b] += off * h;
                    let g = self.gradient(&p);
                    for (a, c) in col.iter_mut().enumerate() {
                        *c += w * g.d[comp][a];
                    }
                }
                for (a, c) in col.iter().enumerate() {
                    out[(a, b)] = c / (12.0 * h);
                }
            }
            return 0.5 * (out + out.transpose());
        }
        let f = |p: Vec3| self.value(&p).components()[comp];
        for a in 0..3 {
            for b in a..3 {
                let v = if a == b {
                    let w2 = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];
                    w2.iter()
                        .map(|(o, w)| {
                            let mut p = *x;
                            p[a] += o * h;
                            w * f(p)
                        })
                        .sum::<f64>()
                        / (12.0 * h * h)
                } else {
                    let mut s = 0.0;
                    for (oa, wa) in D1_OFFSETS {
                        for (ob, wb) in D1_OFFSETS {
                            let mut p = *x;
                            p[a] += oa * h;
                            p[b] += ob * h;
                            s += wa * wb * f(p);
                        }
                    }
                    s / (144.0 * h * h)
                };
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        out
    }

    /// Pointwise sum; both fields must share the rank.
    pub fn add(&self, other: &SmoothField) -> Result<SmoothField> {
        if self.rank != other.rank {
            return Err(Error::RankMismatch {
                expected: self.rank,
                got: other.rank,
            });
        }
        let (a, b) = (self.clone(), other.clone());
        let support = self.support.enclosing(&other.support);
        let label = format!("{}+{}", self.label, other.label);
        let mut out = SmoothField::new(self.rank, support, label, {
            let (a, b) = (a.clone(), b.clone());
            move |x| {
                let mut v = a.value(x);
                v.add_scaled(&b.value(x), 1.0);
                v
            }
        });
        if a.has_analytic_gradient() && b.has_analytic_gradient() {
            out = out.with_gradient(move |x| {
                let mut g = a.gradient(x);
                let gb = b.gradient(x);
                for (r, s) in g.d.iter_mut().zip(gb.d.iter()) {
                    for (u, v) in r.iter_mut().zip(s.iter()) {
                        *u += v;
                    }
                }
                g
            });
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> SmoothField {
        let f = self.clone();
        let mut out = SmoothField::new(self.rank, self.support, format!("{factor}*{}", self.label), {
            let f = f.clone();
            move |x| {
                let mut v = f.value(x);
                v.components_mut().iter_mut().for_each(|c| *c *= factor);
                v
            }
        });
        if f.has_analytic_gradient() {
            out = out.with_gradient(move |x| {
                let mut g = f.gradient(x);
                g.d.iter_mut().flatten().for_each(|c| *c *= factor);
                g
            });
        }
        out
    }

    /// Push-forward under a rotation: `f_rot(x) = R . f(R^T x)` with the
    /// tensor law applied to each index.
    pub fn rotated(&self, rot: &Rotation3<f64>) -> SmoothField {
        let f = self.clone();
        let r = *rot.matrix();
        let rank = self.rank;
        let support = Ball::new(rot * self.support.center, self.support.radius);
        SmoothField::new(rank, support, format!("rot({})", self.label), move |x| {
            let v = f.value(&(r.transpose() * x));
            match rank {
                0 => v,
                1 => Tensor::vector(&(r * v.as_vector())),
                _ => Tensor::matrix(&(r * v.as_matrix() * r.transpose())),
            }
        })
    }
}

/// Shape of a radial profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `A exp(-1 / (R^2 - s))` for `s < R^2`.
    Bump,
    /// `A (R^2 - s)^4` for `s < R^2`.
    Polynomial,
}

/// A function of the squared radius `s = |x|^2`, vanishing for `s >= R^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialProfile {
    kind: ProfileKind,
    radius: f64,
    amplitude: f64,
}

impl RadialProfile {
    pub fn new(kind: ProfileKind, radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "profile radius must be positive and finite, got {radius}"
            )));
        }
        if !amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "profile amplitude must be finite, got {amplitude}"
            )));
        }
        Ok(Self {
            kind,
            radius,
            amplitude,
        })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `S_max = R^2`.
    pub fn support_bound(&self) -> f64 {
        self.radius * self.radius
    }

    pub fn value(&self, s: f64) -> f64 {
        let u = self.support_bound() - s;
        if u <= 0.0 {
            return 0.0;
        }
        match self.kind {
            ProfileKind::Bump => self.amplitude * (-1.0 / u).exp(),
            ProfileKind::Polynomial => self.amplitude * u.powi(4),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let u = self.support_bound() - s;
        if u <= 0.0 {
            return 0.0;
        }
        match self.kind {
            ProfileKind::Bump => -self.amplitude * (-1.0 / u).exp() / (u * u),
            ProfileKind::Polynomial => -4.0 * self.amplitude * u.powi(3),
        }
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        let u = self.support_bound() - s;
        if u <= 0.0 {
            return 0.0;
        }
        match self.kind {
            ProfileKind::Bump => {
                let e = self.amplitude * (-1.0 / u).exp();
                e / u.powi(4) - 2.0 * e / u.powi(3)
            }
            ProfileKind::Polynomial => 12.0 * self.amplitude * u * u,
        }
    }
}

pub fn make_bump_profile(radius: f64, amplitude: f64) -> Result<RadialProfile> {
    RadialProfile::new(ProfileKind::Bump, radius, amplitude)
}

pub fn make_polynomial_profile(radius: f64, amplitude: f64) -> Result<RadialProfile> {
    RadialProfile::new(ProfileKind::Polynomial, radius, amplitude)
}

/// `v(x) = psi(|x - c|^2) (x - c)` with analytic Jacobian.
pub fn radial_velocity_at(profile: RadialProfile, center: Vec3) -> SmoothField {
    let support = Ball::new(center, profile.radius());
    SmoothField::new(1, support, "radial_velocity", move |x| {
        let r = x - center;
        Tensor::vector(&(r * profile.value(r.norm_squared())))
    })
    .with_gradient(move |x| {
        let r = x - center;
        let s = r.norm_squared();
        let (p, dp) = (profile.value(s), profile.derivative(s));
        let j = Matrix3::identity() * p + r * r.transpose() * (2.0 * dp);
        TensorGradient::from_jacobian(&j)
    })
}

pub fn radial_velocity(profile: RadialProfile) -> SmoothField {
    radial_velocity_at(profile, Vec3::zeros())
}

/// Scalar `psi(|x - c|^2)` with analytic gradient.
pub fn radial_scalar_at(profile: RadialProfile, center: Vec3) -> SmoothField {
    let support = Ball::new(center, profile.radius());
    SmoothField::new(0, support, "radial_scalar", move |x| {
        Tensor::scalar(profile.value((x - center).norm_squared()))
    })
    .with_gradient(move |x| {
        let r = x - center;
        let d = 2.0 * profile.derivative(r.norm_squared());
        let mut g = TensorGradient::zero(0);
        g.d[0] = [d * r[0], d * r[1], d * r[2]];
        g
    })
}

/// `Δ psi(|x - c|^2) = 4 s psi''(s) + 6 psi'(s)`.
pub fn radial_scalar_laplacian_at(profile: RadialProfile, center: Vec3) -> SmoothField {
    let support = Ball::new(center, profile.radius());
    SmoothField::new(0, support, "radial_scalar_laplacian", move |x| {
        let s = (x - center).norm_squared();
        Tensor::scalar(4.0 * s * profile.second_derivative(s) + 6.0 * profile.derivative(s))
    })
}

/// Tabulated pressure primitive
/// `G(s) = 2 ∫_s^{S_max} (psi(t) psi'(t) t + psi(t)^2) dt`
/// on piecewise Chebyshev–Lobatto panels over `[0, S_max]`.
#[derive(Clone, Debug)]
pub struct PressureTable {
    profile: RadialProfile,
    panel_width: f64,
    /// per panel: values at the Lobatto nodes, ordered from the panel's left end
    values: Vec<Vec<f64>>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// largest adaptive-quadrature error estimate seen while building
    pub error_estimate: f64,
}

const PRESSURE_PANELS: usize = 64;
const PRESSURE_NODES: usize = 17;

impl PressureTable {
    pub fn build(profile: RadialProfile) -> Result<Self> {
        let smax = profile.support_bound();
        let width = smax / PRESSURE_PANELS as f64;
        let n = PRESSURE_NODES;
        // Lobatto nodes on [0, 1], ascending
        let nodes: Vec<f64> = (0..n)
            .map(|j| 0.5 * (1.0 - (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos()))
            .collect();
        let weights: Vec<f64> = (0..n)
            .map(|j| {
                let w = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    0.5 * w
                } else {
                    w
                }
            })
            .collect();
        let integrand = |t: f64| {
            let p = profile.value(t);
            2.0 * (p * profile.derivative(t) * t + p * p)
        };
        let scale = (0..=200)
            .map(|i| integrand(smax * i as f64 / 200.0).abs())
            .fold(0.0, f64::max)
            * smax;
        let tol = 1e-15 * scale.max(f64::MIN_POSITIVE) / (PRESSURE_PANELS * n) as f64;
        let mut values = vec![vec![0.0; n]; PRESSURE_PANELS];
        let mut err_max: f64 = 0.0;
        // integrate from the outer end inwards, node by node
        let mut acc = 0.0;
        let mut prev = smax;
        for p in (0..PRESSURE_PANELS).rev() {
            let left = p as f64 * width;
            for j in (0..n).rev() {
                let s = left + width * nodes[j];
                if s < prev {
                    let (v, e) = adaptive_gauss(&integrand, s, prev, tol)?;
                    acc += v;
                    err_max = err_max.max(e);
                    prev = s;
                }
                values[p][j] = acc;
            }
        }
        Ok(Self {
            profile,
            panel_width: width,
            values,
            nodes,
            weights,
            error_estimate: err_max,
        })
    }

    pub fn profile(&self) -> RadialProfile {
        self.profile
    }

    /// Interpolated `G(s)`; zero for `s >= S_max`.
    pub fn g(&self, s: f64) -> f64 {
        let smax = self.profile.support_bound();
        if s >= smax {
            return 0.0;
        }
        let s = s.max(0.0);
        let p = ((s / self.panel_width) as usize).min(PRESSURE_PANELS - 1);
        let x = (s - p as f64 * self.panel_width) / self.panel_width;
        let vals = &self.values[p];
        let mut num = 0.0;
        let mut den = 0.0;
        for ((node, w), v) in self.nodes.iter().zip(&self.weights).zip(vals) {
            let d = x - node;
            if d == 0.0 {
                return *v;
            }
            let q = w / d;
            num += q * v;
            den += q;
        }
        num / den
    }

    /// `G'(s) = -2 (psi psi' s + psi^2)`, exact.
    pub fn g_prime(&self, s: f64) -> f64 {
        let p = self.profile.value(s);
        -2.0 * (p * self.profile.derivative(s) * s + p * p)
    }
}

/// Pressure `p(x) = G(|x - c|^2)` making `(radial_velocity_at(psi, c), p)`
/// a solution of `div(v ⊗ v) + ∇p = 0`.
pub fn radial_pressure_at(profile: RadialProfile, center: Vec3) -> Result<SmoothField> {
    let table = Arc::new(PressureTable::build(profile)?);
    let support = Ball::new(center, profile.radius());
    let t = table.clone();
    Ok(SmoothField::new(0, support, "radial_pressure", move |x| {
        Tensor::scalar(t.g((x - center).norm_squared()))
    })
    .with_gradient(move |x| {
        let r = x - center;
        let gp = table.g_prime(r.norm_squared());
        let mut g = TensorGradient::zero(0);
        for m in 0..3 {
            g.d[0][m] = 2.0 * r[m] * gp;
        }
        g
    }))
}

pub fn radial_pressure(profile: RadialProfile) -> Result<SmoothField> {
    radial_pressure_at(profile, Vec3::zeros())
}

/// A velocity/pressure pair solving `div(v ⊗ v) + ∇p = 0`.
#[derive(Clone, Debug)]
pub struct SolutionPair {
    pub velocity: SmoothField,
    pub pressure: SmoothField,
    pub family: String,
}

impl SolutionPair {
    pub fn radial(profile: RadialProfile, center: Vec3) -> Result<Self> {
        Ok(Self {
            velocity: radial_velocity_at(profile, center),
            pressure: radial_pressure_at(profile, center)?,
            family: format!("radial[{:?}]", profile.kind()).to_lowercase(),
        })
    }

    pub fn zero(support: Ball) -> Self {
        Self {
            velocity: SmoothField::zero(1, support),
            pressure: SmoothField::zero(0, support),
            family: "zero".into(),
        }
    }

    /// Superposition of solutions with disjoint supports, itself a solution.
    pub fn superpose(&self, other: &SolutionPair) -> Result<Self> {
        if !self.velocity.support().is_disjoint(&other.velocity.support()) {
            return Err(Error::OverlappingSupports);
        }
        Ok(Self {
            velocity: self.velocity.add(&other.velocity)?,
            pressure: self.pressure.add(&other.pressure)?,
            family: format!("{}+{}", self.family, other.family),
        })
    }

    pub fn support(&self) -> Ball {
        self.velocity.support().enclosing(&self.pressure.support())
    }
}

/// `Q0 = (p + |v|^2) δ - 2 v ⊗ v`.
pub fn q_zero(v: &SmoothField, p: &SmoothField) -> SmoothField {
    assert_eq!(v.rank(), 1);
    assert_eq!(p.rank(), 0);
    let support = v.support().enclosing(&p.support());
    let (vv, pp) = (v.clone(), p.clone());
    let mut out = SmoothField::new(2, support, "q_zero", {
        let (v, p) = (vv.clone(), pp.clone());
        move |x| {
            let u = v.value(x).as_vector();
            let m = Matrix3::identity() * (p.value(x).as_scalar() + u.norm_squared()) - u * u.transpose() * 2.0;
            Tensor::matrix(&m)
        }
    });
    if v.has_analytic_gradient() && p.has_analytic_gradient() {
        out = out.with_gradient(move |x| {
            let u = vv.value(x).as_vector();
            let j = vv.gradient(x).jacobian();
            let gp = pp.gradient(x);
            let mut g = TensorGradient::zero(2);
            for m in 0..3 {
                let trace_part = gp.d[0][m] + 2.0 * (0..3).map(|l| u[l] * j[(l, m)]).sum::<f64>();
                for i in 0..3 {
                    for k in 0..3 {
                        let delta = if i == k { trace_part } else { 0.0 };
                        g.d[3 * i + k][m] = delta - 2.0 * (j[(i, m)] * u[k] + u[i] * j[(k, m)]);
                    }
                }
            }
            g
        });
    }
    out
}

/// `v ⊗ v`.
pub fn outer_square(v: &SmoothField) -> SmoothField {
    assert_eq!(v.rank(), 1);
    let vv = v.clone();
    let mut out = SmoothField::new(2, v.support(), "v_outer_v", {
        let v = vv.clone();
        move |x| {
            let u = v.value(x).as_vector();
            Tensor::matrix(&(u * u.transpose()))
        }
    });
    if v.has_analytic_gradient() {
        out = out.with_gradient(move |x| {
            let u = vv.value(x).as_vector();
            let j = vv.gradient(x).jacobian();
            let mut g = TensorGradient::zero(2);
            for i in 0..3 {
                for k in 0..3 {
                    for m in 0..3 {
                        g.d[3 * i + k][m] = j[(i, m)] * u[k] + u[i] * j[(k, m)];
                    }
                }
            }
            g
        });
    }
    out
}

/// Symmetric inner derivative `d_s u`: gradient of a scalar, or the
/// symmetrized Jacobian `(∂_j u_i + ∂_i u_j) / 2` of a vector field.
pub fn symmetric_gradient(u: &SmoothField) -> Result<SmoothField> {
    let rank = match u.rank() {
        0 => 1,
        1 => 2,
        r => return Err(Error::RankMismatch { expected: 1, got: r }),
    };
    let f = u.clone();
    Ok(SmoothField::new(
        rank,
        u.support(),
        format!("d_s({})", u.label()),
        move |x| {
            let g = f.gradient(x);
            if rank == 1 {
                Tensor::vector(&Vec3::new(g.d[0][0], g.d[0][1], g.d[0][2]))
            } else {
                let j = g.jacobian();
                Tensor::matrix(&((j + j.transpose()) * 0.5))
            }
        },
    ))
}

/// Symmetrized curl of `v ⊗ v`:
/// `2 Psi^{ij} = eps_{ilm} ∂_m(v^j v^l) + eps_{jlm} ∂_m(v^i v^l)`.
pub fn psi_tensor(v: &SmoothField) -> SmoothField {
    assert_eq!(v.rank(), 1);
    let f = v.clone();
    SmoothField::new(2, v.support(), "psi", move |x| {
        let u = f.value(x).as_vector();
        let j = f.gradient(x).jacobian();
        // d[a][l][m] = ∂_m (v^a v^l)
        let d = |a: usize, l: usize, m: usize| j[(a, m)] * u[l] + u[a] * j[(l, m)];
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for jj in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    for m in 0..3 {
                        s += levi_civita(i, l, m) * d(jj, l, m) + levi_civita(jj, l, m) * d(i, l, m);
                    }
                }
                out[(i, jj)] = 0.5 * s;
            }
        }
        Tensor::matrix(&out)
    })
}

pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Unit bump `exp(1 - 1/(1 - q))`, `q = |x - c|^2 / R^2`, and its gradient.
fn unit_bump(x: &Vec3, ball: &Ball) -> (f64, Vec3) {
    let r = x - ball.center;
    let r2 = ball.radius * ball.radius;
    let q = r.norm_squared() / r2;
    if q >= 1.0 {
        return (0.0, Vec3::zeros());
    }
    let u = 1.0 - q;
    let b = (1.0 - 1.0 / u).exp();
    (b, r * (-2.0 * b / (u * u * r2)))
}

/// `f(x) = beta(x) (a + sum_m b_m (x - c)_m)` componentwise, `beta` the unit
/// bump on `support`. A generic (non-solution) test field with analytic gradient.
pub fn bump_modulated(support: Ball, constant: Tensor, linear: [Tensor; 3]) -> SmoothField {
    let rank = constant.rank();
    assert!(linear.iter().all(|t| t.rank() == rank));
    SmoothField::new(rank, support, "bump_modulated", move |x| {
        let (b, _) = unit_bump(x, &support);
        let r = x - support.center;
        let mut out = constant;
        for (m, lin) in linear.iter().enumerate() {
            out.add_scaled(lin, r[m]);
        }
        out.components_mut().iter_mut().for_each(|c| *c *= b);
        out
    })
    .with_gradient(move |x| {
        let (b, db) = unit_bump(x, &support);
        let r = x - support.center;
        let mut poly = constant;
        for (m, lin) in linear.iter().enumerate() {
            poly.add_scaled(lin, r[m]);
        }
        let mut g = TensorGradient::zero(rank);
        for comp in 0..component_count(rank) {
            for m in 0..3 {
                g.d[comp][m] = db[m] * poly.c[comp] + b * linear[m].c[comp];
            }
        }
        g
    })
}

fn random_tensor<R: Rng + ?Sized>(rank: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::zero(rank);
    for c in t.components_mut() {
        *c = rng.random_range(-1.0..=1.0);
    }
    if rank == 2 {
        let m = t.as_matrix();
        t = Tensor::matrix(&((m + m.transpose()) * 0.5));
    }
    t
}

/// Random bump-modulated affine field of the given rank.
pub fn random_field<R: Rng + ?Sized>(rank: usize, support: Ball, rng: &mut R) -> SmoothField {
    let constant = random_tensor(rank, rng);
    let linear = [
        random_tensor(rank, rng),
        random_tensor(rank, rng),
        random_tensor(rank, rng),
    ];
    bump_modulated(support, constant, linear).relabel(format!("random_rank{rank}"))
}

/// `div(v ⊗ v) + ∇p` at `x`, with 4th-order central differences of `v ⊗ v`
/// at step `h` and the pressure gradient from the field.
pub fn euler_residual(v: &SmoothField, p: &SmoothField, x: &Vec3, h: f64) -> Vec3 {
    let vv = |y: &Vec3| {
        let u = v.value(y).as_vector();
        u * u.transpose()
    };
    let mut div = Vec3::zeros();
    for j in 0..3 {
        let mut d = Matrix3::zeros();
        for (off, w) in D1_OFFSETS {
            let mut y = *x;
            y[j] += off * h;
            d += vv(&y) * w;
        }
        d /= 12.0 * h;
        for i in 0..3 {
            div[i] += d[(i, j)];
        }
    }
    let gp = p.gradient(x);
    div + Vec3::new(gp.d[0][0], gp.d[0][1], gp.d[0][2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bump() -> RadialProfile {
        make_bump_profile(1.0, 1.0).unwrap()
    }

    #[test]
    fn bump_profile_examples() {
        let p = bump();
        assert_eq!(p.value(1.5), 0.0);
        assert!((p.value(0.0) - (-1f64).exp()).abs() < 1e-16);
        let h = 1e-4;
        let fd = (p.value(0.5 + h) - p.value(0.5 - h)) / (2.0 * h);
        assert!((fd - p.derivative(0.5)).abs() < 1e-8);
    }

    #[test]
    fn non_positive_radius_rejected() {
        assert!(make_bump_profile(0.0, 1.0).is_err());
        assert!(make_bump_profile(-1.0, 1.0).is_err());
        assert!(make_polynomial_profile(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn profiles_vanish_beyond_support() {
        for p in [bump(), make_polynomial_profile(1.3, 2.0).unwrap()] {
            for i in 0..20 {
                let s = p.support_bound() * (1.0 + 0.1 * i as f64);
                assert_eq!(p.value(s), 0.0);
                assert_eq!(p.derivative(s), 0.0);
            }
        }
    }

    #[test]
    fn profile_derivatives_converge_at_second_order() {
        for p in [bump(), make_polynomial_profile(1.0, 1.0).unwrap()] {
            for s in [0.1, 0.4, 0.8] {
                let err = |h: f64| ((p.value(s + h) - p.value(s - h)) / (2.0 * h) - p.derivative(s)).abs();
                let (e1, e2) = (err(1e-2), err(5e-3));
                assert!(e1 / e2 > 3.5, "rate {} at s={s}", (e1 / e2).log2());
                let err2 =
                    |h: f64| ((p.derivative(s + h) - p.derivative(s - h)) / (2.0 * h) - p.second_derivative(s)).abs();
                assert!(err2(1e-2) / err2(5e-3) > 3.5);
            }
        }
    }

    #[test]
    fn radial_scalar_laplacian_matches_fd() {
        let c = Vec3::new(0.1, 0.2, -0.1);
        let f = radial_scalar_at(bump(), c);
        let lap = radial_scalar_laplacian_at(bump(), c);
        for x in [
            Vec3::new(0.3, 0.1, 0.0),
            Vec3::new(-0.2, 0.4, 0.3),
            Vec3::new(0.5, 0.5, -0.4),
        ] {
            let h = f.hessian(&x, 0);
            assert!((h.trace() - lap.value(&x).as_scalar()).abs() < 1e-8);
        }
    }

    #[test]
    fn radial_velocity_examples() {
        let v = radial_velocity(bump());
        assert_eq!(v.value(&Vec3::zeros()).as_vector(), Vec3::zeros());
        assert_eq!(v.value(&Vec3::new(0.0, 0.0, 2.0)).as_vector(), Vec3::zeros());
        let got = v.value(&Vec3::new(0.0, 0.0, 0.5)).as_vector();
        assert_eq!(got, Vec3::new(0.0, 0.0, 0.5 * bump().value(0.25)));
    }

    #[test]
    fn analytic_jacobian_matches_fd() {
        let v = radial_velocity_at(bump(), Vec3::new(0.1, -0.2, 0.05));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = Vec3::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
            );
            let a = v.gradient(&x).jacobian();
            let f = v.fd_gradient(&x, 1e-3).jacobian();
            assert!((a - f).amax() < 1e-7, "{}", (a - f).amax());
        }
    }

    #[test]
    fn pressure_table_matches_closed_form() {
        // G(s) = -s psi(s)^2 + ∫_s^{S} psi(t)^2 dt, integrated independently
        for p in [bump(), make_polynomial_profile(1.0, 1.0).unwrap()] {
            let table = PressureTable::build(p).unwrap();
            for s in [0.0, 0.013, 0.25, 0.5, 0.77, 0.99] {
                let (tail, _) = adaptive_gauss(&|t: f64| p.value(t).powi(2), s, 1.0, 1e-17).unwrap();
                let closed = -s * p.value(s).powi(2) + tail;
                assert!((table.g(s) - closed).abs() < 1e-14, "s={s}: {} vs {closed}", table.g(s));
            }
            assert_eq!(table.g(1.0), 0.0);
            assert_eq!(table.g(2.0), 0.0);
        }
    }

    #[test]
    fn pressure_vanishes_outside_support() {
        let p = radial_pressure(bump()).unwrap();
        for i in 0..20 {
            let x = Vec3::new(0.6, 0.8, 0.0) * (1.0 + 0.05 * i as f64);
            assert_eq!(p.value(&x).as_scalar(), 0.0);
        }
    }

    #[test]
    fn euler_residual_small_for_radial_pairs() {
        for prof in [bump(), make_polynomial_profile(1.0, 1.0).unwrap()] {
            let pair = SolutionPair::radial(prof, Vec3::zeros()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for _ in 0..100 {
                let x = Vec3::new(
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                );
                let r = euler_residual(&pair.velocity, &pair.pressure, &x, 1e-3);
                worst = worst.max(r.amax());
                let gp = pair.pressure.gradient(&x);
                scale = scale.max(gp.d[0].iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            }
            assert!(worst <= 1e-6 * scale, "{worst} vs {scale}");
        }
    }

    #[test]
    fn q_zero_examples() {
        let ball = Ball::origin(1.0);
        let q = q_zero(&SmoothField::zero(1, ball), &SmoothField::zero(0, ball));
        assert_eq!(q.value(&Vec3::new(0.1, 0.2, 0.3)).max_abs(), 0.0);

        let pair = SolutionPair::radial(bump(), Vec3::zeros()).unwrap();
        let q = q_zero(&pair.velocity, &pair.pressure);
        let x = Vec3::new(0.0, 0.0, 0.5);
        let m = q.value(&x).as_matrix();
        let p = pair.pressure.value(&x).as_scalar();
        let v = pair.velocity.value(&x).as_vector();
        assert!((m.trace() - (3.0 * p + v.norm_squared())).abs() < 1e-15);
        // direct component arithmetic
        let vz = 0.5 * bump().value(0.25);
        let expected = [p + vz * vz, p + vz * vz, p - vz * vz];
        for i in 0..3 {
            assert!((m[(i, i)] - expected[i]).abs() < 1e-15);
        }
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn q_zero_gradient_matches_fd() {
        let pair = SolutionPair::radial(bump(), Vec3::zeros()).unwrap();
        let q = q_zero(&pair.velocity, &pair.pressure);
        let x = Vec3::new(0.2, -0.3, 0.4);
        let a = q.gradient(&x);
        let f = q.fd_gradient(&x, 1e-3);
        for c in 0..9 {
            for m in 0..3 {
                assert!((a.d[c][m] - f.d[c][m]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_gradient_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_field(1, Ball::origin(1.0), &mut rng);
        let du = symmetric_gradient(&u).unwrap();
        assert_eq!(du.rank(), 2);
        for _ in 0..20 {
            let x = Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
            );
            let m = du.value(&x).as_matrix();
            assert!((m - m.transpose()).amax() == 0.0);
        }
        let z = symmetric_gradient(&SmoothField::zero(0, Ball::origin(1.0))).unwrap();
        assert_eq!(z.value(&Vec3::new(0.1, 0.1, 0.1)).max_abs(), 0.0);
        assert!(symmetric_gradient(&du).is_err());
    }

    #[test]
    fn psi_vanishes_for_radial_fields() {
        let v = radial_velocity_at(bump(), Vec3::new(0.2, 0.0, -0.1));
        let psi = psi_tensor(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let x = Vec3::new(
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
            );
            assert!(psi.value(&x).max_abs() < 1e-15);
        }
    }

    #[test]
    fn psi_is_symmetric_and_nonzero_for_generic_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v = random_field(1, Ball::origin(1.0), &mut rng);
        let psi = psi_tensor(&v);
        let m = psi.value(&Vec3::new(0.1, 0.2, -0.3)).as_matrix();
        assert!((m - m.transpose()).amax() < 1e-15);
        assert!(m.amax() > 1e-3);
    }

    #[test]
    fn fields_vanish_beyond_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ball = Ball::new(Vec3::new(0.3, 0.0, 0.1), 0.7);
        let pair = SolutionPair::radial(make_polynomial_profile(0.7, 1.0).unwrap(), ball.center).unwrap();
        let fields = [
            random_field(0, ball, &mut rng),
            random_field(2, ball, &mut rng),
            pair.velocity.clone(),
            pair.pressure.clone(),
            q_zero(&pair.velocity, &pair.pressure),
            psi_tensor(&pair.velocity),
        ];
        for f in &fields {
            for _ in 0..20 {
                let dir = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let x = ball.center + dir * ball.radius * rng.random_range(1.0..2.0);
                assert_eq!(f.value(&x).max_abs(), 0.0, "{}", f.label());
            }
        }
    }

    #[test]
    fn superposition_requires_disjoint_supports() {
        let p = make_bump_profile(0.5, 1.0).unwrap();
        let a = SolutionPair::radial(p, Vec3::new(-0.6, 0.0, 0.0)).unwrap();
        let b = SolutionPair::radial(p, Vec3::new(0.6, 0.0, 0.0)).unwrap();
        let c = SolutionPair::radial(p, Vec3::new(0.2, 0.0, 0.0)).unwrap();
        assert!(a.superpose(&b).is_ok());
        assert!(matches!(a.superpose(&c), Err(Error::OverlappingSupports)));
    }

    #[test]
    fn enclosing_ball_contains_both() {
        let a = Ball::new(Vec3::new(-0.6, 0.0, 0.0), 0.5);
        let b = Ball::new(Vec3::new(0.6, 0.2, 0.0), 0.3);
        let e = a.enclosing(&b);
        for (ball, sign) in [(a, 1.0), (b, -1.0)] {
            let dir = (b.center - a.center).normalize() * sign;
            let far = ball.center - dir * ball.radius;
            assert!((far - e.center).norm() <= e.radius + 1e-12);
        }
    }

    #[test]
    fn rotated_vector_field_transforms_covariantly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = random_field(1, Ball::new(Vec3::new(0.2, 0.1, 0.0), 1.0), &mut rng);
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), 0.4);
        let vr = v.rotated(&rot);
        let x = Vec3::new(0.1, 0.3, -0.2);
        let lhs = vr.value(&(rot * x)).as_vector();
        let rhs = rot * v.value(&x).as_vector();
        assert!((lhs - rhs).amax() < 1e-15);
    }
}
