//! Composite Gauss–Legendre integration over lines, half-planes and planes,
//! truncated to the support ball of the integrand.
//!
//! Panel counts depend only on the support radius, never on where the
//! domain cuts the ball, so every integral is a smooth function of the
//! domain parameters. Finite differences taken across line space rely on it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Ball;
use crate::geometry::{HalfPlaneFrame, LineNH, PlaneFrame};

/// Accuracy policy: `panels_per_unit` composite panels per unit length of
/// support diameter, each carrying an `order`-point Gauss–Legendre rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub panels_per_unit: usize,
    pub order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            panels_per_unit: 8,
            order: 16,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panels_per_unit < 1 || self.order < 4 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs panels_per_unit >= 1 and order >= 4, got {} and {}",
                self.panels_per_unit, self.order
            )));
        }
        Ok(())
    }

    /// Same panels, twice the rule order.
    pub fn doubled(&self) -> Self {
        Self {
            order: 2 * self.order,
            ..*self
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared rule table; rules are immutable once built.
pub fn gauss_rule(order: usize) -> Arc<GaussRule> {
    static TABLE: OnceLock<Mutex<BTreeMap<usize, Arc<GaussRule>>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = table.lock().expect("rule table poisoned");
    guard
        .entry(order)
        .or_insert_with(|| Arc::new(GaussRule::new(order)))
        .clone()
}

/// A validated [`QuadratureSpec`] together with its Gauss rule.
#[derive(Debug, Clone)]
pub struct Quadrature {
    spec: QuadratureSpec,
    rule: Arc<GaussRule>,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(QuadratureSpec::default()).expect("default spec is valid")
    }
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rule: gauss_rule(spec.order),
        })
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    pub fn doubled(&self) -> Self {
        Self::new(self.spec.doubled()).expect("doubling keeps a valid spec")
    }

    /// Panels used for any interval inside a ball of radius `radius`.
    pub fn panels_for(&self, radius: f64) -> usize {
        ((self.spec.panels_per_unit as f64) * 2.0 * radius).ceil().max(1.0) as usize
    }

    /// Composite rule on `[a, b]` with `panels` equal panels.
    pub fn segment<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let half = 0.5 * h;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            let mut s = 0.0;
            for (x, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                s += w * f(mid + half * x);
            }
            total += half * s;
        }
        total
    }

    /// Tensor-product composite rule on `[a0, a1] x [b0, b1]`.
    pub fn rectangle<F: FnMut(f64, f64) -> f64>(
        &self,
        (a0, a1): (f64, f64),
        (b0, b1): (f64, f64),
        panels: usize,
        mut f: F,
    ) -> f64 {
        self.segment(a0, a1, panels, |a| self.segment(b0, b1, panels, |b| f(a, b)))
    }

    /// `∫ f(t) dt` over the chord where `line(t) = (y + alpha t, t)` meets `support`.
    pub fn integrate_line<F: FnMut(f64) -> f64>(&self, f: F, line: &LineNH, support: &Ball) -> f64 {
        match line.chord(support) {
            Some((t0, t1)) => self.segment(t0, t1, self.panels_for(support.radius), f),
            None => 0.0,
        }
    }

    /// `∫∫ f(s, t) ds dt` over the half-plane in the frame's orthonormal
    /// coordinates (unit area element).
    pub fn integrate_halfplane<F: FnMut(f64, f64) -> f64>(&self, f: F, frame: &HalfPlaneFrame, support: &Ball) -> f64 {
        let dist = (support.center - frame.origin).dot(&frame.normal);
        let rho2 = support.radius * support.radius - dist * dist;
        if rho2 <= 0.0 {
            return 0.0;
        }
        let rho = rho2.sqrt();
        let rel = support.center - frame.origin;
        let sc = rel.dot(&frame.inward);
        let tc = rel.dot(&frame.along);
        let (s0, s1) = ((sc - rho).max(0.0), sc + rho);
        if s1 <= 0.0 {
            return 0.0;
        }
        self.rectangle((s0, s1), (tc - rho, tc + rho), self.panels_for(support.radius), f)
    }

    /// `∫∫ f(a, b) da db` over the plane in its orthonormal coordinates.
    pub fn integrate_plane<F: FnMut(f64, f64) -> f64>(&self, f: F, plane: &PlaneFrame, support: &Ball) -> f64 {
        let dist = plane.signed_distance(&support.center);
        let rho2 = support.radius * support.radius - dist * dist;
        if rho2 <= 0.0 {
            return 0.0;
        }
        let rho = rho2.sqrt();
        let (ac, bc) = plane.project(&support.center);
        self.rectangle(
            (ac - rho, ac + rho),
            (bc - rho, bc + rho),
            self.panels_for(support.radius),
            f,
        )
    }
}

pub fn integrate_line<F: FnMut(f64) -> f64>(f: F, line: &LineNH, support: &Ball, quad: &Quadrature) -> f64 {
    quad.integrate_line(f, line, support)
}

pub fn integrate_halfplane<F: FnMut(f64, f64) -> f64>(
    f: F,
    frame: &HalfPlaneFrame,
    support: &Ball,
    quad: &Quadrature,
) -> f64 {
    quad.integrate_halfplane(f, frame, support)
}

pub fn integrate_plane<F: FnMut(f64, f64) -> f64>(f: F, plane: &PlaneFrame, support: &Ball, quad: &Quadrature) -> f64 {
    quad.integrate_plane(f, plane, support)
}

/// Adaptive bisection with a 16/32-point Gauss pair. Returns the value and
/// the accumulated error estimate.
pub fn adaptive_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let low = gauss_rule(16);
    let high = gauss_rule(32);
    // (integral, integral of |f|)
    let apply = |rule: &GaussRule, a: f64, b: f64| {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let (mut s, mut sa) = (0.0, 0.0);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let v = w * f(mid + half * x);
            s += v;
            sa += v.abs();
        }
        (half * s, half.abs() * sa)
    };
    fn recurse<G: Fn(&GaussRule, f64, f64) -> (f64, f64)>(
        apply: &G,
        low: &GaussRule,
        high: &GaussRule,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> (f64, f64, bool) {
        let (coarse, _) = apply(low, a, b);
        let (fine, magnitude) = apply(high, a, b);
        let err = (fine - coarse).abs();
        // below the rounding floor of the panel no refinement can help
        if err <= tol || err <= 64.0 * f64::EPSILON * magnitude {
            return (fine, err, true);
        }
        if depth == 0 {
            return (fine, err, false);
        }
        let m = 0.5 * (a + b);
        let (v1, e1, ok1) = recurse(apply, low, high, a, m, 0.5 * tol, depth - 1);
        let (v2, e2, ok2) = recurse(apply, low, high, m, b, 0.5 * tol, depth - 1);
        (v1 + v2, e1 + e2, ok1 && ok2)
    }
    let (value, err, ok) = recurse(&apply, &low, &high, a, b, tol, 40);
    if ok {
        Ok((value, err))
    } else {
        Err(Error::QuadratureNonConvergence {
            a,
            b,
            estimate: err,
            target: tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Vec3;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for order in [8, 16, 32] {
            let rule = GaussRule::new(order);
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14);
            for deg in 0..(2 * order) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                assert!((got - exact).abs() < 1e-13, "order {order} degree {deg}");
            }
        }
    }

    #[test]
    fn nodes_are_symmetric() {
        let rule = GaussRule::new(16);
        for i in 0..16 {
            assert_eq!(rule.nodes[i], -rule.nodes[15 - i]);
            assert_eq!(rule.weights[i], rule.weights[15 - i]);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec {
            panels_per_unit: 0,
            order: 16
        }
        .validate()
        .is_err());
        assert!(QuadratureSpec {
            panels_per_unit: 8,
            order: 3
        }
        .validate()
        .is_err());
        assert!(QuadratureSpec::default().validate().is_ok());
    }

    #[test]
    fn line_missing_support_is_zero() {
        let q = Quadrature::default();
        let ball = Ball::origin(1.0);
        let line = LineNH::vertical(1.5, 0.0);
        assert_eq!(q.integrate_line(|_| 1.0, &line, &ball), 0.0);
    }

    #[test]
    fn constant_integrand_gives_chord_length() {
        let q = Quadrature::default();
        let ball = Ball::origin(1.0);
        let line = LineNH::new(0.3, -0.2, 0.7, 0.4);
        let k = line.k_factors().k;
        let d = line.distance_to(&Vec3::zeros());
        let chord = 2.0 * (1.0 - d * d).sqrt();
        // dt measure: chord length divided by |alpha|
        let got = q.integrate_line(|_| k, &line, &ball);
        assert!((got - chord).abs() < 1e-12);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let (v, e) = adaptive_gauss(&|x: f64| x.exp(), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
        assert!(e <= 1e-14);
    }

    #[test]
    fn adaptive_reports_non_convergence() {
        let f = |x: f64| if x < 0.3 { 0.0 } else { 1.0 };
        let err = adaptive_gauss(&f, 0.0, 1.0, 1e-300).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }
}
