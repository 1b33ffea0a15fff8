//! Finite-difference realizations of the John operator `L`, the invariant
//! operators `P` and `Δ_M` on functions of lines, and their compositions.
//!
//! Every expression is first compiled to a linear functional over an
//! integer lattice of line-coordinate offsets (`[y1, y2, alpha1, alpha2]`
//! in units of the finest step). Nested applications use steps doubling
//! outward; Richardson extrapolation combines functionals built at halved
//! steps. The distinct lattice nodes are then evaluated once each and the
//! weighted sum taken in lattice order, which keeps results independent of
//! the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LineNH;
use crate::transforms::GrassmannFunction;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSpec {
    /// step in `y1`, `y2`
    pub h_y: f64,
    /// step in `alpha1`, `alpha2`
    pub h_alpha: f64,
    /// order of the central stencils, 2 or 4
    pub order: u32,
    /// Richardson extrapolation levels
    pub richardson: u32,
    /// stencil nodes must satisfy `|alpha_i| <= chart_box`
    pub chart_box: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            h_y: 5e-3,
            h_alpha: 5e-3,
            order: 4,
            richardson: 1,
            chart_box: 3.0,
        }
    }
}

impl FdSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_y > 0.0 && self.h_alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "finite-difference steps must be positive, got h_y={} h_alpha={}",
                self.h_y, self.h_alpha
            )));
        }
        if self.order != 2 && self.order != 4 {
            return Err(Error::InvalidParameter(format!(
                "stencil order must be 2 or 4, got {}",
                self.order
            )));
        }
        if self.richardson > 4 {
            return Err(Error::InvalidParameter(format!(
                "at most 4 Richardson levels supported, got {}",
                self.richardson
            )));
        }
        if self.chart_box.is_nan() || self.chart_box <= 0.0 {
            return Err(Error::InvalidParameter("chart box must be positive".into()));
        }
        Ok(())
    }

    /// Steps no larger than `R / 50` for a support of radius `R`.
    pub fn fits_support(&self, radius: f64) -> bool {
        self.h_y <= radius / 50.0
    }

    pub fn with_steps(&self, h_y: f64, h_alpha: f64) -> Self {
        Self { h_y, h_alpha, ..*self }
    }
}

/// Coordinate axes of the chart, in lattice order.
pub const Y1: usize = 0;
pub const Y2: usize = 1;
pub const A1: usize = 2;
pub const A2: usize = 3;

/// Coefficient of a term, evaluated at the node where the operator acts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// `c k^2 = c (1 + alpha1^2 + alpha2^2)`
    KSquared(f64),
    /// `c k1^2 = c (1 + alpha1^2)`
    K1Squared(f64),
    /// `c k2^2 = c (1 + alpha2^2)`
    K2Squared(f64),
    /// `c alpha1`
    Alpha1(f64),
    /// `c alpha2`
    Alpha2(f64),
    /// `c alpha1 alpha2`
    Alpha12(f64),
}

impl Coefficient {
    pub fn at(&self, a1: f64, a2: f64) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::KSquared(c) => c * (1.0 + a1 * a1 + a2 * a2),
            Coefficient::K1Squared(c) => c * (1.0 + a1 * a1),
            Coefficient::K2Squared(c) => c * (1.0 + a2 * a2),
            Coefficient::Alpha1(c) => c * a1,
            Coefficient::Alpha2(c) => c * a2,
            Coefficient::Alpha12(c) => c * a1 * a2,
        }
    }
}

/// `coefficient * ∂_{axes[0]} ∂_{axes[1]} ...` (one or two axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coefficient: Coefficient,
    pub axes: Vec<usize>,
}

/// A second-order linear operator on functions of lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineOperator {
    /// `L = ∂²/∂alpha2∂y1 - ∂²/∂alpha1∂y2`
    John,
    /// `P = k² L + alpha1 ∂/∂y2 - alpha2 ∂/∂y1`
    Invariant,
    /// `Δ_M = k1² ∂²/∂y1² + k2² ∂²/∂y2² + 2 alpha1 alpha2 ∂²/∂y1∂y2`
    Laplace,
}

impl LineOperator {
    pub fn terms(&self) -> Vec<Term> {
        let t = |coefficient, axes: &[usize]| Term {
            coefficient,
            axes: axes.to_vec(),
        };
        match self {
            LineOperator::John => vec![
                t(Coefficient::Constant(1.0), &[A2, Y1]),
                t(Coefficient::Constant(-1.0), &[A1, Y2]),
            ],
            LineOperator::Invariant => vec![
                t(Coefficient::KSquared(1.0), &[A2, Y1]),
                t(Coefficient::KSquared(-1.0), &[A1, Y2]),
                t(Coefficient::Alpha1(1.0), &[Y2]),
                t(Coefficient::Alpha2(-1.0), &[Y1]),
            ],
            LineOperator::Laplace => vec![
                t(Coefficient::K1Squared(1.0), &[Y1, Y1]),
                t(Coefficient::K2Squared(1.0), &[Y2, Y2]),
                t(Coefficient::Alpha12(2.0), &[Y1, Y2]),
            ],
        }
    }

    /// The operator as an expression.
    pub fn expr(self) -> Expr {
        Expr::word(vec![Factor::Op(self)])
    }

    pub fn power(self, n: usize) -> Expr {
        Expr::word(vec![Factor::Op(self); n])
    }
}

/// One factor of a composition: a whole operator or a single term of one.
#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Op(LineOperator),
    Term(Term),
}

impl Factor {
    fn terms(&self) -> Vec<Term> {
        match self {
            Factor::Op(op) => op.terms(),
            Factor::Term(t) => vec![t.clone()],
        }
    }
}

/// A linear combination of compositions. A word `[A, B, C]` means
/// `A(B(C u))`; its innermost factor uses the base steps and each enclosing
/// factor doubles them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expr {
    pub words: Vec<(f64, Vec<Factor>)>,
}

impl Expr {
    pub fn word(factors: Vec<Factor>) -> Self {
        Self {
            words: vec![(1.0, factors)],
        }
    }

    pub fn term(coefficient: Coefficient, axes: &[usize]) -> Self {
        Self::word(vec![Factor::Term(Term {
            coefficient,
            axes: axes.to_vec(),
        })])
    }

    /// Identity (evaluation at the line itself).
    pub fn identity() -> Self {
        Self::word(Vec::new())
    }

    pub fn plus(mut self, c: f64, other: Expr) -> Self {
        for (w, f) in other.words {
            self.words.push((c * w, f));
        }
        self
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.words.iter_mut().for_each(|(w, _)| *w *= c);
        self
    }
}

type Offset = [i64; 4];

/// Weights of a linear functional on lattice offsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Functional {
    weights: BTreeMap<Offset, f64>,
}

impl Functional {
    fn add(&mut self, at: Offset, w: f64) {
        *self.weights.entry(at).or_insert(0.0) += w;
    }

    fn axpy(&mut self, c: f64, other: &Functional) {
        for (k, w) in &other.weights {
            self.add(*k, c * w);
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offsets(&self) -> impl Iterator<Item = &Offset> {
        self.weights.keys()
    }

    /// Sum of `|weight|`, the amplification of evaluation noise.
    pub fn noise_gain(&self) -> f64 {
        self.weights.values().map(|w| w.abs()).sum()
    }
}

/// 1-D central stencil `(offset, weight)` in units of the step.
fn stencil(derivative: usize, order: u32) -> &'static [(i64, f64)] {
    const D1_O2: [(i64, f64); 2] = [(-1, -0.5), (1, 0.5)];
    const D1_O4: [(i64, f64); 4] = [(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
    const D2_O2: [(i64, f64); 3] = [(-1, 1.0), (0, -2.0), (1, 1.0)];
    const D2_O4: [(i64, f64); 5] = [
        (-2, -1.0 / 12.0),
        (-1, 16.0 / 12.0),
        (0, -30.0 / 12.0),
        (1, 16.0 / 12.0),
        (2, -1.0 / 12.0),
    ];
    match (derivative, order) {
        (1, 2) => &D1_O2,
        (1, _) => &D1_O4,
        (2, 2) => &D2_O2,
        _ => &D2_O4,
    }
}

/// Stencil of `∂_{axes}` as lattice offsets and weights for the given step
/// (in lattice units per axis) and physical unit lengths.
fn term_stencil(axes: &[usize], step: i64, unit: &[f64; 4], order: u32) -> Vec<(Offset, f64)> {
    let mut out = vec![([0i64; 4], 1.0)];
    let mut counts = [0usize; 4];
    for &a in axes {
        counts[a] += 1;
    }
    for (axis, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let h = step as f64 * unit[axis];
        let st = stencil(n, order);
        let scale = h.powi(n as i32);
        let mut next = Vec::with_capacity(out.len() * st.len());
        for (off, w) in &out {
            for (o, sw) in st {
                let mut k = *off;
                k[axis] += o * step;
                next.push((k, w * sw / scale));
            }
        }
        out = next;
    }
    out
}

struct Compiler<'a> {
    base: &'a LineNH,
    unit: [f64; 4],
    order: u32,
    chart_box: f64,
}

impl Compiler<'_> {
    fn alpha_at(&self, at: &Offset) -> (f64, f64) {
        (
            self.base.alpha1 + at[A1] as f64 * self.unit[A1],
            self.base.alpha2 + at[A2] as f64 * self.unit[A2],
        )
    }

    /// Functional of `factors[0](factors[1](... u))` centred at `at`, the
    /// innermost factor using `step` lattice units.
    fn word(&self, factors: &[Factor], at: Offset, step: i64, out: &mut Functional, scale: f64) -> Result<()> {
        let (a1, a2) = self.alpha_at(&at);
        if a1.abs() > self.chart_box || a2.abs() > self.chart_box {
            return Err(Error::StencilOutOfChart(a1, a2, self.chart_box));
        }
        let Some((outer, inner)) = factors.split_first() else {
            out.add(at, scale);
            return Ok(());
        };
        let my_step = step << inner.len();
        for term in outer.terms() {
            let c = term.coefficient.at(a1, a2);
            if c == 0.0 {
                continue;
            }
            for (off, w) in term_stencil(&term.axes, my_step, &self.unit, self.order) {
                let mut node = at;
                for i in 0..4 {
                    node[i] += off[i];
                }
                self.word(inner, node, step, out, scale * c * w)?;
            }
        }
        Ok(())
    }

    fn expr(&self, e: &Expr, step: i64) -> Result<Functional> {
        let mut out = Functional::default();
        for (c, factors) in &e.words {
            self.word(factors, [0; 4], step, &mut out, *c)?;
        }
        Ok(out)
    }
}

/// Lattice unit lengths (finest step) of `fd`.
fn lattice_unit(fd: &FdSpec) -> [f64; 4] {
    let d = (1u64 << fd.richardson) as f64;
    [fd.h_y / d, fd.h_y / d, fd.h_alpha / d, fd.h_alpha / d]
}

/// Compile `e` at `line` into one functional, Richardson extrapolation
/// included.
pub fn compile(e: &Expr, line: &LineNH, fd: &FdSpec) -> Result<Functional> {
    fd.validate()?;
    let c = Compiler {
        base: line,
        unit: lattice_unit(fd),
        order: fd.order,
        chart_box: fd.chart_box,
    };
    let levels = fd.richardson as usize;
    // table[i] holds the estimate at step 2^(levels - i) lattice units
    let mut column: Vec<Functional> = (0..=levels)
        .map(|i| c.expr(e, 1i64 << (levels - i)))
        .collect::<Result<_>>()?;
    for j in 1..=levels {
        let ratio = 2f64.powi(fd.order as i32 + 2 * (j as i32 - 1));
        let denom = ratio - 1.0;
        let next: Vec<Functional> = (j..=levels)
            .map(|i| {
                let mut f = Functional::default();
                f.axpy(ratio / denom, &column[i - j + 1]);
                f.axpy(-1.0 / denom, &column[i - j]);
                f
            })
            .collect();
        column = next;
    }
    let mut out = column.pop().expect("Richardson table is never empty");
    out.weights.retain(|_, w| *w != 0.0);
    Ok(out)
}

/// Line at lattice offset `at` from `line`.
pub fn node_line(line: &LineNH, at: &Offset, fd: &FdSpec) -> LineNH {
    let u = lattice_unit(fd);
    LineNH::new(
        line.y1 + at[Y1] as f64 * u[Y1],
        line.y2 + at[Y2] as f64 * u[Y2],
        line.alpha1 + at[A1] as f64 * u[A1],
        line.alpha2 + at[A2] as f64 * u[A2],
    )
}

/// Evaluate several expressions at `line`, sharing function evaluations.
pub fn evaluate_many(u: &GrassmannFunction, line: &LineNH, fd: &FdSpec, exprs: &[Expr]) -> Result<Vec<f64>> {
    let functionals: Vec<Functional> = exprs.iter().map(|e| compile(e, line, fd)).collect::<Result<_>>()?;
    let mut nodes: BTreeMap<Offset, f64> = BTreeMap::new();
    for f in &functionals {
        for k in f.offsets() {
            nodes.insert(*k, 0.0);
        }
    }
    let keys: Vec<Offset> = nodes.keys().copied().collect();
    let values: Vec<f64> = keys.par_iter().map(|k| u.eval(&node_line(line, k, fd))).collect();
    for (k, v) in keys.iter().zip(values) {
        nodes.insert(*k, v);
    }
    Ok(functionals
        .iter()
        .map(|f| f.weights.iter().map(|(k, w)| w * nodes[k]).sum())
        .collect())
}

pub fn evaluate(u: &GrassmannFunction, line: &LineNH, fd: &FdSpec, e: &Expr) -> Result<f64> {
    Ok(evaluate_many(u, line, fd, std::slice::from_ref(e))?[0])
}

/// `L u` at `line`.
pub fn john_l(u: &GrassmannFunction, line: &LineNH, fd: &FdSpec) -> Result<f64> {
    evaluate(u, line, fd, &LineOperator::John.expr())
}

/// `P u` at `line`.
pub fn op_p(u: &GrassmannFunction, line: &LineNH, fd: &FdSpec) -> Result<f64> {
    evaluate(u, line, fd, &LineOperator::Invariant.expr())
}

/// `Δ_M u` at `line`.
pub fn op_laplace_m(u: &GrassmannFunction, line: &LineNH, fd: &FdSpec) -> Result<f64> {
    evaluate(u, line, fd, &LineOperator::Laplace.expr())
}

/// `op^n u` at `line` with steps doubling outward.
pub fn op_power(op: LineOperator, n: usize, u: &GrassmannFunction, line: &LineNH, fd: &FdSpec) -> Result<f64> {
    if n > 3 {
        return Err(Error::InvalidParameter(format!(
            "operator powers above 3 not supported, got {n}"
        )));
    }
    evaluate(u, line, fd, &op.power(n))
}

/// Each term of `op` as its own expression, for magnitude scales.
pub fn term_exprs(op: LineOperator) -> Vec<Expr> {
    op.terms()
        .into_iter()
        .map(|t| Expr::word(vec![Factor::Term(t)]))
        .collect()
}

/// `sum |term|` over the terms of `op` applied to `u` at `line`.
pub fn term_magnitude(op: LineOperator, u: &GrassmannFunction, line: &LineNH, fd: &FdSpec) -> Result<f64> {
    Ok(evaluate_many(u, line, fd, &term_exprs(op))?
        .iter()
        .map(|v| v.abs())
        .sum())
}

/// First partial derivative along `axis`.
pub fn partial(axis: usize) -> Expr {
    Expr::term(Coefficient::Constant(1.0), &[axis])
}

/// Mixed or repeated second partial derivative.
pub fn partial2(a: usize, b: usize) -> Expr {
    Expr::term(Coefficient::Constant(1.0), &[a, b])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(f: fn([f64; 4]) -> f64) -> GrassmannFunction {
        GrassmannFunction::from_fn("poly", move |l| f(l.coords()))
    }

    fn fd2() -> FdSpec {
        FdSpec {
            h_y: 1e-2,
            h_alpha: 1e-2,
            order: 2,
            richardson: 0,
            chart_box: 3.0,
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let u = poly(|_| 3.5);
        let line = LineNH::new(0.1, -0.2, 0.3, 0.4);
        for fd in [fd2(), FdSpec::default()] {
            assert!(john_l(&u, &line, &fd).unwrap().abs() < 1e-9);
            assert!(op_p(&u, &line, &fd).unwrap().abs() < 1e-9);
            assert!(op_laplace_m(&u, &line, &fd).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn bilinear_examples_are_exact() {
        let line = LineNH::new(0.2, 0.3, -0.1, 0.6);
        let a = john_l(&poly(|c| c[0] * c[3]), &line, &fd2()).unwrap();
        let b = john_l(&poly(|c| c[1] * c[2]), &line, &fd2()).unwrap();
        assert!((a - 1.0).abs() < 1e-10, "{a}");
        assert!((b + 1.0).abs() < 1e-10, "{b}");
    }

    #[test]
    fn laplace_of_radius_squared_at_vertical_line() {
        let u = poly(|c| c[0] * c[0] + c[1] * c[1]);
        let v = op_laplace_m(&u, &LineNH::new(0.4, -0.7, 0.0, 0.0), &fd2()).unwrap();
        assert!((v - 4.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn p_reduces_to_l_at_vertical_lines() {
        let u = poly(|c| (c[0] * c[3]).sin() + c[1] * c[2] * c[2] + (c[0] - c[1]).exp() * c[3]);
        let line = LineNH::new(0.1, 0.2, 0.0, 0.0);
        let fd = FdSpec::default();
        let p = op_p(&u, &line, &fd).unwrap();
        let l = john_l(&u, &line, &fd).unwrap();
        assert!((p - l).abs() < 1e-9);
    }

    #[test]
    fn explicit_formula_on_smooth_function() {
        // u = sin(y1) alpha2^2 + cos(y2) alpha1 + y1 y2
        let u = poly(|c| c[0].sin() * c[3] * c[3] + c[1].cos() * c[2] + c[0] * c[1]);
        let line = LineNH::new(0.3, -0.4, 0.5, 0.2);
        let (y1, y2, a1, a2) = (0.3f64, -0.4f64, 0.5f64, 0.2f64);
        let k2 = 1.0 + a1 * a1 + a2 * a2;
        // L u = 2 cos(y1) a2 + sin(y2)
        let l = 2.0 * y1.cos() * a2 + y2.sin();
        let p = k2 * l + a1 * (-y2.sin() * a1 + y1) - a2 * (y1.cos() * a2 * a2 + y2);
        let lap = (1.0 + a1 * a1) * (-y1.sin() * a2 * a2) + (1.0 + a2 * a2) * (-y2.cos() * a1) + 2.0 * a1 * a2;
        let fd = FdSpec::default();
        assert!((john_l(&u, &line, &fd).unwrap() - l).abs() < 1e-9);
        assert!((op_p(&u, &line, &fd).unwrap() - p).abs() < 1e-9);
        assert!((op_laplace_m(&u, &line, &fd).unwrap() - lap).abs() < 1e-9);
    }

    #[test]
    fn power_one_is_base_operator() {
        let u = poly(|c| (c[0] + 2.0 * c[3]).sin() * (c[1] - c[2]).cos());
        let line = LineNH::new(0.1, 0.2, 0.3, -0.2);
        let fd = FdSpec::default();
        for op in [LineOperator::John, LineOperator::Invariant, LineOperator::Laplace] {
            let a = op_power(op, 1, &u, &line, &fd).unwrap();
            let b = evaluate(&u, &line, &fd, &op.expr()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn nested_power_matches_closed_form() {
        // u = exp(y1 + alpha2): L u = u, L² u = u
        let u = poly(|c| (c[0] + c[3]).exp());
        let line = LineNH::new(0.1, 0.0, 0.2, 0.3);
        let fd = FdSpec::default().with_steps(5e-2, 5e-2);
        let exact = (0.1f64 + 0.3).exp();
        let l2 = op_power(LineOperator::John, 2, &u, &line, &fd).unwrap();
        assert!((l2 - exact).abs() < 1e-8, "{l2} vs {exact}");
    }

    #[test]
    fn richardson_improves_accuracy() {
        let u = poly(|c| (3.0 * c[0]).sin() * (2.0 * c[3]).cos());
        let line = LineNH::new(0.2, 0.0, 0.0, 0.4);
        let exact = -6.0 * (0.6f64).cos() * (0.8f64).sin();
        let mut fd = FdSpec {
            h_y: 2e-2,
            h_alpha: 2e-2,
            order: 2,
            richardson: 0,
            chart_box: 3.0,
        };
        let e0 = (john_l(&u, &line, &fd).unwrap() - exact).abs();
        fd.richardson = 1;
        let e1 = (john_l(&u, &line, &fd).unwrap() - exact).abs();
        assert!(e1 < e0 * 1e-2, "{e0} {e1}");
    }

    #[test]
    fn chart_box_is_enforced() {
        let u = poly(|_| 1.0);
        let fd = FdSpec {
            chart_box: 1.0,
            ..FdSpec::default()
        };
        let err = op_p(&u, &LineNH::new(0.0, 0.0, 0.999, 0.0), &fd).unwrap_err();
        assert!(matches!(err, Error::StencilOutOfChart(..)));
        assert!(err.is_numerical());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut fd = FdSpec::default();
        fd.order = 3;
        assert!(fd.validate().is_err());
        fd.order = 4;
        fd.h_y = 0.0;
        assert!(fd.validate().is_err());
    }
}
