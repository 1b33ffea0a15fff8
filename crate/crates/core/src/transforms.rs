//! Line, half-plane and plane integrals of fields: the X-ray transform, the
//! chart function used by John's range conditions, the plane transform of
//! rank-2 fields, and the Euler-specific objects `w`, `F`, `w0` and `IQ0`.
//!
//! Two normalizations of line integrals are in play. `Chart` integrates
//! along `t -> (y + alpha t, t)` and contracts with `(alpha1, alpha2, 1)`;
//! `UnitSpeed` integrates by arclength and contracts with the unit direction.
//! For a rank-`h` field they differ by `unit = k^(1-h) chart`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fields::{Ball, SmoothField, Vec3};
use crate::geometry::{HalfPlaneFrame, HalfPlaneSide, LineNH, PlaneFrame};
use crate::quadrature::Quadrature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `dt` with direction `(alpha1, alpha2, 1)`.
    Chart,
    /// arclength with unit direction.
    UnitSpeed,
}

/// Factor taking a rank-`rank` line integral from one convention to another.
pub fn convention_factor(rank: usize, line: &LineNH, from: Convention, to: Convention) -> f64 {
    let k = line.k_factors().k;
    let chart_to_unit = k.powi(1 - rank as i32);
    match (from, to) {
        (Convention::Chart, Convention::UnitSpeed) => chart_to_unit,
        (Convention::UnitSpeed, Convention::Chart) => 1.0 / chart_to_unit,
        _ => 1.0,
    }
}

/// `∫ f(y1 + alpha1 t, y2 + alpha2 t, t)[a, .., a] dt`, `a = (alpha1, alpha2, 1)`.
pub fn xray(f: &SmoothField, line: &LineNH, quad: &Quadrature) -> f64 {
    let d = line.direction();
    quad.integrate_line(|t| f.value(&line.point_at(t)).contract(&d), line, &f.support())
}

/// [`xray`] together with the `L¹` mass of its integrand.
pub fn xray_with_mass(f: &SmoothField, line: &LineNH, quad: &Quadrature) -> (f64, f64) {
    let d = line.direction();
    let g = |t: f64| f.value(&line.point_at(t)).contract(&d);
    let value = quad.integrate_line(g, line, &f.support());
    let mass = quad.integrate_line(|t| g(t).abs(), line, &f.support());
    (value, mass)
}

/// `∫ g(x) ds` by arclength over the chord of `line` in `ball`.
fn unit_speed_integral<G: FnMut(&Vec3, &Vec3) -> f64>(line: &LineNH, ball: &Ball, quad: &Quadrature, g: G) -> f64 {
    oriented_integral(&line.anchor(), &line.unit_direction(), ball, quad, g)
}

/// `∫ g(x0 + s e, e) ds` over the chord of the oriented line through `point`
/// with unit direction `e`, centred at the point closest to the ball.
fn oriented_integral<G: FnMut(&Vec3, &Vec3) -> f64>(
    point: &Vec3,
    e: &Vec3,
    ball: &Ball,
    quad: &Quadrature,
    mut g: G,
) -> f64 {
    let mid = point + e * (ball.center - point).dot(e);
    let d2 = (mid - ball.center).norm_squared();
    let r2 = ball.radius * ball.radius;
    if d2 >= r2 {
        return 0.0;
    }
    let half = (r2 - d2).sqrt();
    quad.segment(-half, half, quad.panels_for(ball.radius), |s| g(&(mid + e * s), e))
}

/// Unit-speed X-ray transform `∫ f(x0 + s e)[e, .., e] ds`.
pub fn xray_unit_speed(f: &SmoothField, line: &LineNH, quad: &Quadrature) -> f64 {
    unit_speed_integral(line, &f.support(), quad, |x, e| f.value(x).contract(e))
}

/// Unit-speed transform along the oriented line through `point` with unit
/// direction `e`; horizontal lines are allowed here.
pub fn xray_oriented(f: &SmoothField, point: &Vec3, e: &Vec3, quad: &Quadrature) -> f64 {
    oriented_integral(point, e, &f.support(), quad, |x, e| f.value(x).contract(e))
}

/// The chart function `phi = k^(h-1) (I f)` of the unit-speed transform,
/// which coincides with [`xray`].
pub fn phi_chart(f: &SmoothField, y: [f64; 2], alpha: [f64; 2], quad: &Quadrature) -> f64 {
    let line = LineNH::new(y[0], y[1], alpha[0], alpha[1]);
    convention_factor(f.rank(), &line, Convention::UnitSpeed, Convention::Chart) * xray_unit_speed(f, &line, quad)
}

/// `∫_L (tr Q - Q(nu, nu)) dσ`, the trace of `Q` restricted to the plane.
pub fn radon_plane(q: &SmoothField, plane: &PlaneFrame, quad: &Quadrature) -> f64 {
    radon_plane_with_mass(q, plane, quad).0
}

/// Plane transform together with the `L¹` mass of its integrand.
pub fn radon_plane_with_mass(q: &SmoothField, plane: &PlaneFrame, quad: &Quadrature) -> (f64, f64) {
    assert_eq!(q.rank(), 2, "plane transform takes a rank-2 field");
    let nu = plane.normal;
    let restricted_trace = |a: f64, b: f64| {
        let m = q.value(&plane.point(a, b)).as_matrix();
        m.trace() - (m * nu).dot(&nu)
    };
    let value = quad.integrate_plane(restricted_trace, plane, &q.support());
    let mass = quad.integrate_plane(|a, b| restricted_trace(a, b).abs(), plane, &q.support());
    (value, mass)
}

/// `∫_L <v, z> <v, nu_L> dσ` and `∫_L |v|² dσ`.
pub fn plane_flux_moment(v: &SmoothField, plane: &PlaneFrame, z: &Vec3, quad: &Quadrature) -> (f64, f64) {
    let nu = plane.normal;
    let value = quad.integrate_plane(
        |a, b| {
            let u = v.value(&plane.point(a, b)).as_vector();
            u.dot(z) * u.dot(&nu)
        },
        plane,
        &v.support(),
    );
    let energy = quad.integrate_plane(
        |a, b| v.value(&plane.point(a, b)).as_vector().norm_squared(),
        plane,
        &v.support(),
    );
    (value, energy)
}

/// Interval of `x3` where the plane `x_fixed = y + alpha x3` meets `ball`.
fn slab_interval(y: f64, alpha: f64, centre_fixed: f64, ball: &Ball) -> Option<(f64, f64)> {
    let c3 = ball.center[2];
    let a = 1.0 + alpha * alpha;
    let b = 2.0 * (alpha * (y - centre_fixed) - c3);
    let c = (y - centre_fixed).powi(2) + c3 * c3 - ball.radius * ball.radius;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
}

/// `w(m)` from the chart formulas for the half-plane `side`:
///
/// H2: `∫∫_{x2 > l2} (1/k) (a.v) (v1 - alpha1 v3) |_(l1, x2, x3) dx2 dx3`,
/// H1: `-∫∫_{x1 > l1} (1/k) (a.v) (v2 - alpha2 v3) |_(x1, l2, x3) dx1 dx3`,
///
/// with `l_i = y_i + alpha_i x3` and `a = (alpha1, alpha2, 1)`. The two
/// agree when `v` solves the Euler system.
pub fn build_w(v: &SmoothField, line: &LineNH, side: HalfPlaneSide, quad: &Quadrature) -> f64 {
    build_w_with_mass(v, line, side, quad).0
}

/// [`build_w`] together with the `L¹` mass of its integrand.
pub fn build_w_with_mass(v: &SmoothField, line: &LineNH, side: HalfPlaneSide, quad: &Quadrature) -> (f64, f64) {
    let value = chart_halfplane_integral(v, line, side, quad, |g| g);
    let mass = chart_halfplane_integral(v, line, side, quad, f64::abs);
    (value, mass.abs())
}

/// Iterated chart integral behind [`build_w`], with `post` applied to the
/// integrand before integration.
fn chart_halfplane_integral(
    v: &SmoothField,
    line: &LineNH,
    side: HalfPlaneSide,
    quad: &Quadrature,
    post: fn(f64) -> f64,
) -> f64 {
    let ball = v.support();
    let k = line.k_factors().k;
    let (a1, a2) = (line.alpha1, line.alpha2);
    let dir = line.direction();
    // H2 fixes x1 on the plane and integrates over x2 > l2; H1 swaps the roles.
    let (fixed, free, y_fixed, alpha_fixed, y_free, alpha_free, sign) = match side {
        HalfPlaneSide::H2 => (0, 1, line.y1, a1, line.y2, a2, 1.0),
        HalfPlaneSide::H1 => (1, 0, line.y2, a2, line.y1, a1, -1.0),
    };
    let Some((z0, z1)) = slab_interval(y_fixed, alpha_fixed, ball.center[fixed], &ball) else {
        return 0.0;
    };
    let panels = quad.panels_for(ball.radius);
    let r2 = ball.radius * ball.radius;
    let total = quad.segment(z0, z1, panels, |x3| {
        let lf = y_fixed + alpha_fixed * x3;
        let sigma2 = r2 - (lf - ball.center[fixed]).powi(2) - (x3 - ball.center[2]).powi(2);
        if sigma2 <= 0.0 {
            return 0.0;
        }
        let sigma = sigma2.sqrt();
        let lo = (y_free + alpha_free * x3).max(ball.center[free] - sigma);
        let hi = ball.center[free] + sigma;
        quad.segment(lo, hi, panels, |s| {
            let mut x = Vec3::new(0.0, 0.0, x3);
            x[fixed] = lf;
            x[free] = s;
            let u = v.value(&x).as_vector();
            let g = match side {
                HalfPlaneSide::H2 => dir.dot(&u) * (u[0] - a1 * u[2]),
                HalfPlaneSide::H1 => dir.dot(&u) * (u[1] - a2 * u[2]),
            };
            post(sign * g)
        })
    });
    total / k
}

/// `w(m) = -∫_H <e_m, v> <nu_H, v> dσ` evaluated in the orthonormal frame of
/// the half-plane: an independent path to [`build_w`].
pub fn w_definition(v: &SmoothField, line: &LineNH, side: HalfPlaneSide, quad: &Quadrature) -> f64 {
    let ball = v.support();
    let frame = HalfPlaneFrame::anchored(*line, side, &ball.center);
    quad.integrate_halfplane(
        |s, t| {
            let u = v.value(&frame.point(s, t)).as_vector();
            -u.dot(&frame.along) * u.dot(&frame.normal)
        },
        &frame,
        &ball,
    )
}

/// `F(x1, x2) = ∫ (-v2 v3, v1 v3) dx3` along the vertical line through `(x1, x2)`.
pub fn build_f(v: &SmoothField, x1: f64, x2: f64, quad: &Quadrature) -> [f64; 2] {
    let line = LineNH::vertical(x1, x2);
    let ball = v.support();
    let component =
        |pick: fn(&Vec3) -> f64| quad.integrate_line(|t| pick(&v.value(&line.point_at(t)).as_vector()), &line, &ball);
    [component(|u| -u[1] * u[2]), component(|u| u[0] * u[2])]
}

/// Chord `[s0, s1]` of the ray `p0 + s d`, `s >= 0`, inside the disc of `ball`'s
/// horizontal cross-section.
fn ray_chord(p0: [f64; 2], d: [f64; 2], ball: &Ball) -> Option<(f64, f64)> {
    let (ox, oy) = (p0[0] - ball.center[0], p0[1] - ball.center[1]);
    let b = ox * d[0] + oy * d[1];
    let c = ox * ox + oy * oy - ball.radius * ball.radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (s0, s1) = ((-b - sq).max(0.0), -b + sq);
    (s1 > s0).then_some((s0, s1))
}

/// `w0(P0) = ∫_0^∞ <d, F(P0 + s d)> ds`; independent of `d` for solutions.
pub fn w0_ray(v: &SmoothField, p0: [f64; 2], direction: [f64; 2], quad: &Quadrature) -> f64 {
    let norm = direction[0].hypot(direction[1]);
    assert!((norm - 1.0).abs() < 1e-12, "ray direction must be a unit vector");
    let ball = v.support();
    let Some((s0, s1)) = ray_chord(p0, direction, &ball) else {
        return 0.0;
    };
    quad.segment(s0, s1, quad.panels_for(ball.radius), |s| {
        let f = build_f(v, p0[0] + s * direction[0], p0[1] + s * direction[1], quad);
        f[0] * direction[0] + f[1] * direction[1]
    })
}

/// 2-D X-ray transform of `F` along the full line `p + s d` in the plane.
pub fn xray_f(v: &SmoothField, p: [f64; 2], direction: [f64; 2], quad: &Quadrature) -> f64 {
    let ball = v.support();
    let (ox, oy) = (p[0] - ball.center[0], p[1] - ball.center[1]);
    let b = ox * direction[0] + oy * direction[1];
    let c = ox * ox + oy * oy - ball.radius * ball.radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    quad.segment(-b - sq, -b + sq, quad.panels_for(ball.radius), |s| {
        let f = build_f(v, p[0] + s * direction[0], p[1] + s * direction[1], quad);
        f[0] * direction[0] + f[1] * direction[1]
    })
}

/// `IQ0(m) = ∫_m (p + |v|² - 2 <v, e_m>²) ds`, unit speed.
pub fn iq_zero_lineintegral(v: &SmoothField, p: &SmoothField, line: &LineNH, quad: &Quadrature) -> f64 {
    iq_zero_with_mass(v, p, line, quad).0
}

/// [`iq_zero_lineintegral`] with the `L¹` mass of its integrand.
pub fn iq_zero_with_mass(v: &SmoothField, p: &SmoothField, line: &LineNH, quad: &Quadrature) -> (f64, f64) {
    let ball = v.support().enclosing(&p.support());
    let integrand = |x: &Vec3, e: &Vec3| {
        let u = v.value(x).as_vector();
        p.value(x).as_scalar() + u.norm_squared() - 2.0 * u.dot(e).powi(2)
    };
    let value = unit_speed_integral(line, &ball, quad, integrand);
    let mass = unit_speed_integral(line, &ball, quad, |x, e| integrand(x, e).abs());
    (value, mass)
}

/// Right-hand sides of the one-dimensional formulas for second derivatives
/// of `w` at the vertical line through `(y1, y2)`, each with the `L¹` mass
/// of its integrand.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VerticalLineDerivatives {
    /// `∂²w / ∂y2 ∂alpha1 = ∫ (v3² - v1² - x3 ∂1(v3 v1)) dx3`
    pub d_y2_alpha1: (f64, f64),
    /// `∂²w / ∂y1 ∂alpha2 = ∫ (v2² - v3² + x3 ∂2(v3 v2)) dx3`
    pub d_y1_alpha2: (f64, f64),
    /// `(∂²_y1 + ∂²_y2) w = ∫ (∂1(v2 v3) - ∂2(v1 v3)) dx3`
    pub laplace_y: (f64, f64),
    /// `∂²w/∂y1∂alpha2 - ∂²w/∂y2∂alpha1 = ∫ (p + v1² + v2² - v3²) dx3`
    pub difference: (f64, f64),
}

pub fn vertical_line_derivatives(
    v: &SmoothField,
    p: &SmoothField,
    y1: f64,
    y2: f64,
    quad: &Quadrature,
) -> VerticalLineDerivatives {
    let line = LineNH::vertical(y1, y2);
    let ball = v.support().enclosing(&p.support());
    // value and L¹ mass of the sum of the terms, with the mass taken term by
    // term so that integrands cancelling pointwise still get a scale
    let pair = |g: &dyn Fn(&Vec3) -> [f64; 3]| {
        let value = quad.integrate_line(|t| g(&line.point_at(t)).iter().sum(), &line, &ball);
        let mass = quad.integrate_line(|t| g(&line.point_at(t)).iter().map(|v| v.abs()).sum(), &line, &ball);
        (value, mass)
    };
    // ∂_m (v_a v_b) from the Jacobian
    let d_prod = |x: &Vec3, a: usize, b: usize, m: usize| {
        let u = v.value(x).as_vector();
        let j = v.gradient(x).jacobian();
        j[(a, m)] * u[b] + u[a] * j[(b, m)]
    };
    VerticalLineDerivatives {
        d_y2_alpha1: pair(&|x| {
            let u = v.value(x).as_vector();
            [u[2] * u[2], -u[0] * u[0], -x[2] * d_prod(x, 2, 0, 0)]
        }),
        d_y1_alpha2: pair(&|x| {
            let u = v.value(x).as_vector();
            [u[1] * u[1], -u[2] * u[2], x[2] * d_prod(x, 2, 1, 1)]
        }),
        laplace_y: pair(&|x| [d_prod(x, 1, 2, 0), -d_prod(x, 0, 2, 1), 0.0]),
        difference: pair(&|x| {
            let u = v.value(x).as_vector();
            [p.value(x).as_scalar(), u[0] * u[0] + u[1] * u[1], -u[2] * u[2]]
        }),
    }
}

/// Which construction produced a [`GrassmannFunction`].
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Xray { rank: usize, convention: Convention },
    W(HalfPlaneSide),
    IqZero,
    Custom(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Xray { rank, convention } => write!(f, "xray(rank {rank}, {convention:?})"),
            Provenance::W(side) => write!(f, "w({side:?})"),
            Provenance::IqZero => write!(f, "IQ0"),
            Provenance::Custom(s) => f.write_str(s),
        }
    }
}

type LineEval = dyn Fn(&LineNH) -> f64 + Send + Sync;

/// A function on non-horizontal lines together with a record of how it is
/// computed. Evaluation is deterministic for a fixed quadrature rule.
#[derive(Clone)]
pub struct GrassmannFunction {
    provenance: Provenance,
    fields: Vec<SmoothField>,
    eval: Arc<LineEval>,
}

impl fmt::Debug for GrassmannFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrassmannFunction")
            .field("provenance", &self.provenance)
            .field("fields", &self.fields.iter().map(|s| s.label()).collect::<Vec<_>>())
            .finish()
    }
}

impl fmt::Display for GrassmannFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.provenance.fmt(f)
    }
}

impl GrassmannFunction {
    pub fn from_fn<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&LineNH) -> f64 + Send + Sync + 'static,
    {
        Self {
            provenance: Provenance::Custom(label.into()),
            fields: Vec::new(),
            eval: Arc::new(f),
        }
    }

    /// Chart-normalized X-ray transform (equal to the chart function `phi`).
    pub fn xray(f: &SmoothField, quad: &Quadrature) -> Self {
        let (g, q) = (f.clone(), quad.clone());
        Self {
            provenance: Provenance::Xray {
                rank: f.rank(),
                convention: Convention::Chart,
            },
            fields: vec![f.clone()],
            eval: Arc::new(move |l| xray(&g, l, &q)),
        }
    }

    pub fn xray_unit_speed(f: &SmoothField, quad: &Quadrature) -> Self {
        let (g, q) = (f.clone(), quad.clone());
        Self {
            provenance: Provenance::Xray {
                rank: f.rank(),
                convention: Convention::UnitSpeed,
            },
            fields: vec![f.clone()],
            eval: Arc::new(move |l| xray_unit_speed(&g, l, &q)),
        }
    }

    pub fn w(v: &SmoothField, side: HalfPlaneSide, quad: &Quadrature) -> Self {
        let (g, q) = (v.clone(), quad.clone());
        Self {
            provenance: Provenance::W(side),
            fields: vec![v.clone()],
            eval: Arc::new(move |l| build_w(&g, l, side, &q)),
        }
    }

    pub fn iq_zero(v: &SmoothField, p: &SmoothField, quad: &Quadrature) -> Self {
        let (gv, gp, q) = (v.clone(), p.clone(), quad.clone());
        Self {
            provenance: Provenance::IqZero,
            fields: vec![v.clone(), p.clone()],
            eval: Arc::new(move |l| iq_zero_lineintegral(&gv, &gp, l, &q)),
        }
    }

    pub fn eval(&self, line: &LineNH) -> f64 {
        (self.eval)(line)
    }

    pub fn eval_coords(&self, c: [f64; 4]) -> f64 {
        self.eval(&LineNH::from_coords(c))
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn fields(&self) -> &[SmoothField] {
        &self.fields
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump_profile, q_zero, random_field, symmetric_gradient, SolutionPair, Tensor};
    use crate::geometry::LineBox;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> Quadrature {
        Quadrature::default()
    }

    fn radial_pair() -> SolutionPair {
        SolutionPair::radial(make_bump_profile(1.0, 1.0).unwrap(), Vec3::zeros()).unwrap()
    }

    fn lines(seed: u64, n: usize) -> Vec<LineNH> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| LineBox::default().sample(&mut rng)).collect()
    }

    #[test]
    fn zero_field_transforms_vanish() {
        let ball = Ball::origin(1.0);
        let q = quad();
        for rank in 0..3 {
            let f = SmoothField::zero(rank, ball);
            for l in lines(1, 10) {
                assert_eq!(xray(&f, &l, &q), 0.0);
            }
        }
        let v = SmoothField::zero(1, ball);
        let l = LineNH::new(0.1, 0.2, 0.3, 0.4);
        assert_eq!(build_w(&v, &l, HalfPlaneSide::H2, &q), 0.0);
        assert_eq!(build_w(&v, &l, HalfPlaneSide::H1, &q), 0.0);
        assert_eq!(build_f(&v, 0.1, 0.2, &q), [0.0, 0.0]);
        let plane = PlaneFrame::from_angles(0.3, 0.4, 0.1);
        assert_eq!(radon_plane(&SmoothField::zero(2, ball), &plane, &q), 0.0);
    }

    #[test]
    fn lines_missing_support_give_zero() {
        let pair = radial_pair();
        let q = quad();
        let far = LineNH::vertical(1.5, 0.0);
        assert_eq!(xray(&pair.pressure, &far, &q), 0.0);
        assert_eq!(iq_zero_lineintegral(&pair.velocity, &pair.pressure, &far, &q), 0.0);
        assert_eq!(build_f(&pair.velocity, 1.2, 0.0, &q), [0.0, 0.0]);
        assert_eq!(w0_ray(&pair.velocity, [1.5, 0.0], [1.0, 0.0], &q), 0.0);
    }

    #[test]
    fn potential_fields_are_in_the_kernel() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ball = Ball::new(Vec3::new(0.1, -0.1, 0.2), 0.9);
        for rank in 0..2 {
            let u = random_field(rank, ball, &mut rng);
            let du = symmetric_gradient(&u).unwrap();
            let comparable = random_field(rank + 1, ball, &mut rng);
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for l in lines(6, 40) {
                worst = worst.max(xray(&du, &l, &q).abs());
                scale = scale.max(xray(&comparable, &l, &q).abs());
            }
            assert!(worst <= 1e-8 * scale, "rank {rank}: {worst} vs {scale}");
        }
    }

    #[test]
    fn radial_scalar_depends_only_on_distance() {
        let q = quad();
        let f = radial_pair().pressure;
        let reference = xray(&f, &LineNH::vertical(0.4, 0.0), &q);
        assert!(reference.abs() > 1e-6);
        for i in 0..20 {
            let th = 0.31 * i as f64;
            let l = LineNH::vertical(0.4 * th.cos(), 0.4 * th.sin());
            assert!((xray(&f, &l, &q) - reference).abs() < 1e-13);
        }
    }

    #[test]
    fn chart_function_equals_xray() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ball = Ball::new(Vec3::new(0.0, 0.1, -0.1), 0.8);
        for rank in 0..3 {
            let f = random_field(rank, ball, &mut rng);
            for l in lines(10, 100) {
                let phi = phi_chart(&f, [l.y1, l.y2], [l.alpha1, l.alpha2], &q);
                let direct = xray(&f, &l, &q);
                assert!(
                    (phi - direct).abs() <= 1e-12 * (1.0 + direct.abs()),
                    "{phi} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn vertical_line_conventions_agree() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(2, Ball::origin(1.0), &mut rng);
        let l = LineNH::vertical(0.2, -0.3);
        assert!((phi_chart(&f, [0.2, -0.3], [0.0, 0.0], &q) - xray(&f, &l, &q)).abs() < 1e-15);
    }

    #[test]
    fn scalar_chart_function_times_k_is_unit_speed_integral() {
        let q = quad();
        let f = radial_pair().pressure;
        for l in lines(12, 20) {
            let k = l.k_factors().k;
            let phi = phi_chart(&f, [l.y1, l.y2], [l.alpha1, l.alpha2], &q);
            assert!((phi * k - xray_unit_speed(&f, &l, &q)).abs() < 1e-13);
        }
    }

    #[test]
    fn representation_independence() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = random_field(2, Ball::origin(1.0), &mut rng);
        for l in lines(14, 20) {
            let base = xray_unit_speed(&f, &l, &q);
            let x = l.point_at(rng.random_range(-1.0..1.0));
            let xi = l.direction() * rng.random_range(0.2..3.0);
            let again = LineNH::from_point_direction(&x, &xi).unwrap();
            let e = xi.normalize();
            let via_point = xray_oriented(&f, &x, &e, &q);
            assert!((xray_unit_speed(&f, &again, &q) - base).abs() <= 1e-10 * (1.0 + base.abs()));
            assert!((via_point - base).abs() <= 1e-10 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn parity_under_reversal() {
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for rank in 0..3 {
            let f = random_field(rank, Ball::origin(1.0), &mut rng);
            for l in lines(16, 10) {
                let (x, e) = (l.anchor(), l.unit_direction());
                let fwd = xray_oriented(&f, &x, &e, &q);
                let back = xray_oriented(&f, &x, &(-e), &q);
                let sign = if rank % 2 == 0 { 1.0 } else { -1.0 };
                assert!((back - sign * fwd).abs() < 1e-14, "rank {rank}");
            }
        }
    }

    #[test]
    fn convention_table_round_trips() {
        let l = LineNH::new(0.1, 0.2, 0.7, -0.4);
        let k = l.k_factors().k;
        for rank in 0..3 {
            let a = convention_factor(rank, &l, Convention::Chart, Convention::UnitSpeed);
            let b = convention_factor(rank, &l, Convention::UnitSpeed, Convention::Chart);
            assert!((a * b - 1.0).abs() < 1e-15);
            assert!((a - k.powi(1 - rank as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn iq_zero_normalization_oracle() {
        // holds for any pair of fields: IQ0 = xray(Q0) / k
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ball = Ball::origin(1.0);
        let v = random_field(1, ball, &mut rng);
        let p = random_field(0, ball, &mut rng);
        let q0 = q_zero(&v, &p);
        for l in lines(18, 20) {
            let k = l.k_factors().k;
            let a = iq_zero_lineintegral(&v, &p, &l, &q);
            let b = xray(&q0, &l, &q) / k;
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn radon_plane_of_scalar_multiple_of_identity() {
        let q = quad();
        let s = radial_pair().pressure;
        let ball = s.support();
        let g = s.clone();
        let q_field = SmoothField::new(2, ball, "p_delta", move |x| {
            Tensor::matrix(&(Matrix3::identity() * g.value(x).as_scalar()))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let plane = crate::geometry::sample_plane(&mut rng, &Vec3::zeros(), 0.8);
            let scalar = q.integrate_plane(|a, b| s.value(&plane.point(a, b)).as_scalar(), &plane, &ball);
            let got = radon_plane(&q_field, &plane, &q);
            assert!((got - 2.0 * scalar).abs() < 1e-14);
        }
    }

    #[test]
    fn radial_solution_objects_vanish() {
        let q = quad();
        let pair = radial_pair();
        let q0 = q_zero(&pair.velocity, &pair.pressure);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..30 {
            let plane = crate::geometry::sample_plane(&mut rng, &Vec3::zeros(), 0.8);
            let (v, mass) = radon_plane_with_mass(&q0, &plane, &q);
            assert!(v.abs() <= 1e-10 * mass, "{v} vs {mass}");
        }
        for l in lines(21, 30) {
            let (w, mass) = build_w_with_mass(&pair.velocity, &l, HalfPlaneSide::H2, &q);
            assert!(w.abs() <= 1e-10 * mass.max(1e-300), "{w} {mass}");
            let (iq, m2) = iq_zero_with_mass(&pair.velocity, &pair.pressure, &l, &q);
            assert!(iq.abs() <= 1e-10 * m2.max(1e-300));
        }
    }

    #[test]
    fn chart_formula_matches_half_plane_definition_for_any_field() {
        // the chart formulas are a change of variables of the definition on
        // the same half-plane, so they agree even off solutions
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let v = random_field(1, Ball::new(Vec3::new(0.1, 0.0, -0.1), 0.9), &mut rng);
        for l in lines(23, 20) {
            for side in [HalfPlaneSide::H1, HalfPlaneSide::H2] {
                let (a, mass) = build_w_with_mass(&v, &l, side, &q);
                let b = w_definition(&v, &l, side, &q);
                assert!(
                    (a - b).abs() <= 1e-9 * mass.max(1e-300),
                    "{side:?}: {a} vs {b} (mass {mass})"
                );
            }
        }
    }

    #[test]
    fn halfplanes_agree_on_solutions() {
        let q = quad();
        let a = SolutionPair::radial(make_bump_profile(0.5, 1.0).unwrap(), Vec3::new(-0.45, 0.1, 0.05)).unwrap();
        let b = SolutionPair::radial(make_bump_profile(0.4, 1.0).unwrap(), Vec3::new(0.5, -0.2, -0.1)).unwrap();
        let v = a.superpose(&b).unwrap().velocity;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for l in lines(24, 30) {
            let (w2, mass) = build_w_with_mass(&v, &l, HalfPlaneSide::H2, &q);
            let w1 = build_w(&v, &l, HalfPlaneSide::H1, &q);
            worst = worst.max((w1 - w2).abs());
            scale = scale.max(mass);
        }
        assert!(worst <= 1e-9 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn y2_derivative_of_w_is_minus_second_component_of_f() {
        // ∂w/∂y2 = -∫ v1 v3 dx3 at vertical lines, for any field (H2 formula)
        let q = quad();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let v = random_field(1, Ball::origin(0.9), &mut rng);
        let h = 1e-3;
        for (y1, y2) in [(0.1, 0.2), (-0.3, 0.05), (0.0, -0.4)] {
            let w = |y2: f64| build_w(&v, &LineNH::vertical(y1, y2), HalfPlaneSide::H2, &q);
            let d = (w(y2 - 2.0 * h) - 8.0 * w(y2 - h) + 8.0 * w(y2 + h) - w(y2 + 2.0 * h)) / (12.0 * h);
            let f = build_f(&v, y1, y2, &q);
            assert!((d + f[1]).abs() < 1e-8 * (1.0 + f[1].abs()), "{d} vs {}", -f[1]);
        }
    }

    #[test]
    fn w0_ray_matches_w_on_vertical_lines_for_solutions() {
        let q = quad();
        let pair = radial_pair();
        let w = build_w(&pair.velocity, &LineNH::vertical(0.2, 0.1), HalfPlaneSide::H2, &q);
        let w0 = w0_ray(&pair.velocity, [0.2, 0.1], [1.0, 0.0], &q);
        let w0b = w0_ray(&pair.velocity, [0.2, 0.1], [0.0, 1.0], &q);
        assert!(w.abs() < 1e-14 && w0.abs() < 1e-14 && w0b.abs() < 1e-14);
    }

    #[test]
    fn grassmann_function_records_provenance() {
        let q = quad();
        let pair = radial_pair();
        let w = GrassmannFunction::w(&pair.velocity, HalfPlaneSide::H2, &q);
        assert_eq!(w.provenance(), &Provenance::W(HalfPlaneSide::H2));
        assert_eq!(w.fields().len(), 1);
        let l = LineNH::new(0.1, 0.2, 0.3, 0.4);
        assert_eq!(w.eval(&l), build_w(&pair.velocity, &l, HalfPlaneSide::H2, &q));
        let x = GrassmannFunction::xray(&pair.pressure, &q);
        assert_eq!(x.eval(&l), xray(&pair.pressure, &l, &q));
        assert_eq!(x.to_string(), "xray(rank 0, Chart)");
    }
}
