//! Named verification suites. Each suite samples lines, planes or points
//! from a seeded generator, evaluates residuals of one family of identities
//! and compares the largest against `tolerance * scale`, where the scale is a
//! same-dimensional magnitude gathered from the same samples.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    ConjectureSettings, ConvergenceSettings, DerivativeFormulaSettings, KernelRangeSettings, MainPdeSettings,
    OperatorIdentitySettings, PlaneFluxSettings, PointwiseSettings, RunConfig, WConstructionSettings,
};
use crate::error::{Error, Result};
use crate::fields::{
    make_bump_profile, outer_square, psi_tensor, q_zero, radial_scalar_at, radial_scalar_laplacian_at, random_field,
    symmetric_gradient, Ball, SmoothField, SolutionPair, Vec3,
};
use crate::geometry::{sample_in_ball, sample_line_through, sample_plane, HalfPlaneSide, LineNH, PlaneFrame};
use crate::operators::{evaluate_many, partial, partial2, Expr, Factor, FdSpec, LineOperator, A1, A2, Y1, Y2};
use crate::quadrature::Quadrature;
use crate::transforms::{
    build_f, build_w, build_w_with_mass, iq_zero_with_mass, plane_flux_moment, radon_plane_with_mass,
    vertical_line_derivatives, w0_ray, xray, xray_f, xray_unit_speed, xray_with_mass, GrassmannFunction,
};

/// Suite names accepted by [`run_suite`], in the order `all` runs them.
pub const SUITES: [&str; 9] = [
    "plane_flux",
    "kernel_range",
    "w_construction",
    "derivative_formulas",
    "main_pde",
    "conjectures_radial",
    "pointwise_pdes",
    "operator_identities",
    "quadrature_convergence",
];

const SOLUTION_RESTRICTION: &str = "solution-dependent checks run on radial solutions (single or superposed) only";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub sample_id: usize,
    pub coords: [f64; 4],
    pub residual: f64,
}

/// One identity checked over a set of samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub scale: f64,
    pub rows: Vec<Row>,
}

impl Check {
    pub fn new(name: impl Into<String>, tolerance: f64, scale: f64, rows: Vec<Row>) -> Self {
        Self {
            name: name.into(),
            tolerance,
            scale,
            rows,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.residual.abs()))
    }

    pub fn bound(&self) -> f64 {
        self.tolerance * self.scale
    }

    pub fn row_passes(&self, row: &Row) -> bool {
        row.residual.abs() <= self.bound()
    }

    /// `max |residual| <= tolerance * scale`, with NaN never passing.
    pub fn passes(&self) -> bool {
        self.scale.is_finite() && self.rows.iter().all(|r| self.row_passes(r))
    }

    /// `max |residual| / scale`, or 0 when both vanish.
    pub fn relative_residual(&self) -> f64 {
        let m = self.max_residual();
        if m == 0.0 {
            0.0
        } else {
            m / self.scale
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub suite: String,
    pub family: String,
    pub seed: u64,
    pub restriction: Option<String>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl ResidualReport {
    fn new(suite: &str, family: &str, seed: u64) -> Self {
        Self {
            suite: suite.into(),
            family: family.into(),
            seed,
            restriction: None,
            checks: Vec::new(),
            runtime: Duration::ZERO,
        }
    }

    fn restricted(mut self) -> Self {
        self.restriction = Some(SOLUTION_RESTRICTION.into());
        self
    }

    pub fn passes(&self) -> bool {
        self.checks.iter().all(Check::passes)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| m.max(c.max_residual()))
    }

    pub fn total_rows(&self) -> usize {
        self.checks.iter().map(|c| c.rows.len()).sum()
    }

    /// One line per check: verdict, name, largest residual against its bound.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}/{}: relative residual {:.3e} (tolerance {:.1e}; max residual {:.3e}, scale {:.3e}, {} samples)",
                    if c.passes() { "PASS" } else { "FAIL" },
                    self.suite,
                    c.name,
                    c.relative_residual(),
                    c.tolerance,
                    c.max_residual(),
                    c.scale,
                    c.rows.len()
                )
            })
            .collect()
    }
}

/// Header of the CSV report.
pub const CSV_HEADER: [&str; 10] = [
    "suite",
    "sample_id",
    "coord_1",
    "coord_2",
    "coord_3",
    "coord_4",
    "residual",
    "scale",
    "tolerance",
    "pass",
];

/// Write `reports` as CSV, preceded by a `#` comment naming the config hash
/// and seed. Floats use the shortest round-trip form, so equal results give
/// equal bytes.
pub fn write_csv<W: Write>(out: W, reports: &[ResidualReport], config_hash: &str, seed: u64) -> Result<()> {
    let mut out = out;
    writeln!(out, "# config_sha256={config_hash} seed={seed}")?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let map_csv = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(map_csv)?;
    for r in reports {
        for c in &r.checks {
            let suite = format!("{}/{}", r.suite, c.name);
            for row in &c.rows {
                let mut rec = vec![suite.clone(), row.sample_id.to_string()];
                rec.extend(row.coords.iter().map(|v| fmt_float(*v)));
                rec.push(fmt_float(row.residual));
                rec.push(fmt_float(c.scale));
                rec.push(fmt_float(c.tolerance));
                rec.push(c.row_passes(row).to_string());
                w.write_record(&rec).map_err(map_csv)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:e}")
}

/// Per-suite entries of the JSON summary.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteSummary {
    pub verdict: &'static str,
    pub family: String,
    pub max_residual: f64,
    pub max_relative_residual: f64,
    pub runtime_seconds: f64,
    pub config_sha256: String,
    pub seed: u64,
    pub restriction: Option<String>,
    pub checks: Vec<CheckSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub verdict: &'static str,
    pub max_residual: f64,
    pub scale: f64,
    pub tolerance: f64,
    pub samples: usize,
}

pub fn summarize(report: &ResidualReport, config_hash: &str) -> SuiteSummary {
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    SuiteSummary {
        verdict: verdict(report.passes()),
        family: report.family.clone(),
        max_residual: report.max_residual(),
        max_relative_residual: report.checks.iter().fold(0.0, |m, c| m.max(c.relative_residual())),
        runtime_seconds: report.runtime.as_secs_f64(),
        config_sha256: config_hash.into(),
        seed: report.seed,
        restriction: report.restriction.clone(),
        checks: report
            .checks
            .iter()
            .map(|c| CheckSummary {
                name: c.name.clone(),
                verdict: verdict(c.passes()),
                max_residual: c.max_residual(),
                scale: c.scale,
                tolerance: c.tolerance,
                samples: c.rows.len(),
            })
            .collect(),
    }
}

/// Seed for one suite, decorrelated from the others by the suite name.
pub fn suite_seed(seed: u64, suite: &str) -> u64 {
    // FNV-1a of the name
    let salt = suite.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    seed ^ salt
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Map in parallel, keeping sample order.
fn par_map<T: Sync, R: Send, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

fn line_rows(lines: &[LineNH], residuals: &[f64]) -> Vec<Row> {
    lines
        .iter()
        .zip(residuals)
        .enumerate()
        .map(|(i, (l, r))| Row {
            sample_id: i,
            coords: l.coords(),
            residual: *r,
        })
        .collect()
}

fn plane_coords(plane: &PlaneFrame, extra: f64) -> [f64; 4] {
    let n = plane.normal;
    [n[2].clamp(-1.0, 1.0).acos(), n[1].atan2(n[0]), plane.offset, extra]
}

fn sample_lines(rng: &mut ChaCha8Rng, ball: &Ball, n: usize, alpha_half_width: f64) -> Vec<LineNH> {
    (0..n)
        .map(|_| sample_line_through(rng, ball, 0.8, alpha_half_width))
        .collect()
}

/// Run one suite by name with the settings in `config`.
pub fn run_suite(name: &str, config: &RunConfig) -> Result<ResidualReport> {
    if !SUITES.contains(&name) {
        return Err(Error::UnknownSuite(name.into()));
    }
    let start = Instant::now();
    let pair = config.family.solution()?;
    let quad = Quadrature::new(config.quadrature)?;
    let family = config.family.name();
    let seed = suite_seed(config.seed, name);
    let s = &config.suites;
    let mut report = match name {
        "plane_flux" => suite_plane_flux(&pair, &s.plane_flux, &quad, seed)?,
        "kernel_range" => suite_kernel_and_range(
            &pair.support(),
            &s.kernel_range,
            &quad,
            &config.fd,
            &config.nested_fd,
            seed,
        )?,
        "w_construction" => suite_w_construction(&pair, &s.w_construction, &quad, seed)?,
        "derivative_formulas" => suite_derivative_formulas(&pair, &s.derivative_formulas, &quad, &config.fd, seed)?,
        "main_pde" => suite_main_pde(&pair, &s.main_pde, &quad, &config.fd, &config.nested_fd, seed)?,
        "conjectures_radial" => suite_conjectures_radial(&pair, &s.conjectures_radial, &quad, seed)?,
        "pointwise_pdes" => suite_pointwise_pdes(&pair, &s.pointwise_pdes, seed)?,
        "operator_identities" => suite_operator_identities(
            &pair.support(),
            &s.operator_identities,
            &quad,
            &config.fd,
            &config.nested_fd,
            seed,
        )?,
        "quadrature_convergence" => suite_quadrature_convergence(&pair, &s.quadrature_convergence, &quad, seed)?,
        _ => unreachable!("suite list checked above"),
    };
    report.family = family.into();
    report.seed = config.seed;
    report.runtime = start.elapsed();
    Ok(report)
}

/// Resolve `all` or a single name to the suites to run.
pub fn suite_names(selector: &str) -> Result<Vec<&'static str>> {
    if selector == "all" {
        return Ok(SUITES.to_vec());
    }
    SUITES
        .iter()
        .find(|s| **s == selector)
        .map(|s| vec![*s])
        .ok_or_else(|| Error::UnknownSuite(selector.into()))
}

/// `∫_L <v, z> <v, nu_L> dσ = 0` for solution pairs, over random planes and
/// in-plane directions `z`. Scale: `max ∫_L |v|² dσ`.
pub fn suite_plane_flux(
    pair: &SolutionPair,
    settings: &PlaneFluxSettings,
    quad: &Quadrature,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let mut samples = Vec::new();
    for _ in 0..settings.planes {
        let plane = sample_plane(&mut rng, &ball.center, 0.8 * ball.radius);
        for _ in 0..settings.directions {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            samples.push((plane, angle));
        }
    }
    let values = par_map(&samples, |(plane, angle)| {
        let z = plane.b1 * angle.cos() + plane.b2 * angle.sin();
        Ok(plane_flux_moment(&pair.velocity, plane, &z, quad))
    })?;
    let rows = samples
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, ((plane, angle), (v, _)))| Row {
            sample_id: i,
            coords: plane_coords(plane, *angle),
            residual: *v,
        })
        .collect();
    let scale = max_of(values.iter().map(|v| v.1));
    let mut report = ResidualReport::new("plane_flux", "", seed).restricted();
    report
        .checks
        .push(Check::new("flux_moment", settings.tolerance, scale, rows));
    Ok(report)
}

/// Every composition of single terms of `op`, `n` deep; the sum of their
/// magnitudes bounds the size of `op^n u` before cancellation.
pub fn term_words(op: LineOperator, n: usize) -> Vec<Expr> {
    let terms = op.terms();
    let mut words: Vec<Vec<Factor>> = vec![Vec::new()];
    for _ in 0..n {
        words = words
            .into_iter()
            .flat_map(|w| {
                terms.iter().map(move |t| {
                    let mut next = w.clone();
                    next.push(Factor::Term(t.clone()));
                    next
                })
            })
            .collect();
    }
    words.into_iter().map(Expr::word).collect()
}

/// Kernel of the X-ray transform (`I(d_s u) = 0`) and John's range
/// conditions (`L^{h+1} phi = 0`) on random bump-modulated fields.
pub fn suite_kernel_and_range(
    support: &Ball,
    settings: &KernelRangeSettings,
    quad: &Quadrature,
    fd: &FdSpec,
    nested_fd: &FdSpec,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = *support;
    let mut report = ResidualReport::new("kernel_range", "", seed);
    for rank in 1..=2usize {
        let mut residuals = Vec::new();
        let mut scale: f64 = 0.0;
        let mut all_lines = Vec::new();
        for _ in 0..settings.potentials {
            let u = random_field(rank - 1, ball, &mut rng);
            let du = symmetric_gradient(&u)?;
            let comparable = random_field(rank, ball, &mut rng);
            let lines = sample_lines(&mut rng, &ball, settings.kernel_lines, 2.0);
            let vals = par_map(&lines, |l| Ok((xray(&du, l, quad), xray(&comparable, l, quad))))?;
            residuals.extend(vals.iter().map(|v| v.0));
            scale = scale.max(max_of(vals.iter().map(|v| v.1)));
            all_lines.extend(lines);
        }
        report.checks.push(Check::new(
            format!("kernel_rank{rank}"),
            settings.kernel_tolerance,
            scale,
            line_rows(&all_lines, &residuals),
        ));
    }
    for rank in 0..=2usize {
        if rank == 2 && !settings.include_rank2_range {
            continue;
        }
        let f = random_field(rank, ball, &mut rng);
        let phi = GrassmannFunction::xray(&f, quad);
        let n = if rank == 2 {
            settings.rank2_range_lines
        } else {
            settings.range_lines
        };
        let lines = sample_lines(&mut rng, &ball, n, 1.5);
        let spec = if rank < 2 { fd } else { nested_fd };
        let mut exprs = vec![LineOperator::John.power(rank + 1)];
        exprs.extend(term_words(LineOperator::John, rank + 1));
        let vals = par_map(&lines, |l| evaluate_many(&phi, l, spec, &exprs))?;
        let residuals: Vec<f64> = vals.iter().map(|v| v[0]).collect();
        let scale = max_of(vals.iter().map(|v| v[1..].iter().map(|t| t.abs()).sum::<f64>()));
        let tol = if rank == 2 {
            settings.rank2_range_tolerance
        } else {
            settings.range_tolerance
        };
        report.checks.push(Check::new(
            format!("range_rank{rank}"),
            tol,
            scale,
            line_rows(&lines, &residuals),
        ));
    }
    Ok(report)
}

/// Coherence of the constructions of `w`: the two half-plane formulas agree,
/// the ray integral `w0` does not depend on the ray, `w` on vertical lines
/// equals `w0`, and the planar X-ray transform of `F` vanishes. Scale: the
/// largest `L¹` mass of the half-plane integrand over the samples.
pub fn suite_w_construction(
    pair: &SolutionPair,
    settings: &WConstructionSettings,
    quad: &Quadrature,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = &pair.velocity;
    let ball = pair.support();
    let n = settings.samples;
    let lines = sample_lines(&mut rng, &ball, n, 2.0);
    let disc = |rng: &mut ChaCha8Rng| {
        let p = sample_in_ball(rng, 0.8 * ball.radius);
        [ball.center[0] + p[0], ball.center[1] + p[1]]
    };
    let points: Vec<([f64; 2], f64)> = (0..n)
        .map(|_| (disc(&mut rng), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let planar: Vec<([f64; 2], f64)> = (0..n)
        .map(|_| (disc(&mut rng), rng.random_range(0.0..std::f64::consts::PI)))
        .collect();

    let halfplanes = par_map(&lines, |l| {
        let (w2, mass) = build_w_with_mass(v, l, HalfPlaneSide::H2, quad);
        Ok((build_w(v, l, HalfPlaneSide::H1, quad) - w2, mass))
    })?;
    let rays = par_map(&points, |(p0, th)| {
        let d1 = [th.cos(), th.sin()];
        let d2 = [-th.sin(), th.cos()];
        let a = w0_ray(v, *p0, d1, quad);
        let b = w0_ray(v, *p0, d2, quad);
        let (w, mass) = build_w_with_mass(v, &LineNH::vertical(p0[0], p0[1]), HalfPlaneSide::H2, quad);
        Ok((a - b, w - a, mass))
    })?;
    let f_lines = par_map(&planar, |(p, th)| Ok(xray_f(v, *p, [th.cos(), th.sin()], quad)))?;

    let scale = max_of(halfplanes.iter().map(|h| h.1).chain(rays.iter().map(|r| r.2)));
    let point_rows = |pick: fn(&(f64, f64, f64)) -> f64| {
        points
            .iter()
            .zip(&rays)
            .enumerate()
            .map(|(i, ((p, th), r))| Row {
                sample_id: i,
                coords: [p[0], p[1], *th, 0.0],
                residual: pick(r),
            })
            .collect::<Vec<_>>()
    };
    let mut report = ResidualReport::new("w_construction", "", seed).restricted();
    let tol = settings.tolerance;
    report.checks.push(Check::new(
        "halfplane_h1_vs_h2",
        tol,
        scale,
        line_rows(&lines, &halfplanes.iter().map(|h| h.0).collect::<Vec<_>>()),
    ));
    report
        .checks
        .push(Check::new("ray_independence", tol, scale, point_rows(|r| r.0)));
    report
        .checks
        .push(Check::new("vertical_w_vs_ray", tol, scale, point_rows(|r| r.1)));
    report.checks.push(Check::new(
        "planar_xray_of_f",
        tol,
        scale,
        planar
            .iter()
            .zip(&f_lines)
            .enumerate()
            .map(|(i, ((p, th), r))| Row {
                sample_id: i,
                coords: [p[0], p[1], *th, 0.0],
                residual: *r,
            })
            .collect(),
    ));
    Ok(report)
}

/// Finite-difference second derivatives of `w` at vertical lines against
/// the one-dimensional integral formulas for `∂²w/∂y2∂alpha1`,
/// `∂²w/∂y1∂alpha2`, `(∂²_y1 + ∂²_y2) w` and their difference `L w`.
pub fn suite_derivative_formulas(
    pair: &SolutionPair,
    settings: &DerivativeFormulaSettings,
    quad: &Quadrature,
    fd: &FdSpec,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let mut feet = vec![[ball.center[0], ball.center[1]]];
    while feet.len() < settings.lines.max(1) {
        let p = sample_in_ball(&mut rng, 0.6 * ball.radius);
        feet.push([ball.center[0] + p[0], ball.center[1] + p[1]]);
    }
    feet.truncate(settings.lines);
    let w = GrassmannFunction::w(&pair.velocity, HalfPlaneSide::H2, quad);
    let exprs = [
        partial2(A1, Y2),
        partial2(A2, Y1),
        partial2(Y1, Y1).plus(1.0, partial2(Y2, Y2)),
        LineOperator::John.expr(),
    ];
    let vals = par_map(&feet, |y| {
        let line = LineNH::vertical(y[0], y[1]);
        let fdv = evaluate_many(&w, &line, fd, &exprs)?;
        let f = vertical_line_derivatives(&pair.velocity, &pair.pressure, y[0], y[1], quad);
        Ok((fdv, [f.d_y2_alpha1, f.d_y1_alpha2, f.laplace_y, f.difference]))
    })?;
    let lines: Vec<LineNH> = feet.iter().map(|y| LineNH::vertical(y[0], y[1])).collect();
    let mut report = ResidualReport::new("derivative_formulas", "", seed).restricted();
    for (k, name) in ["d2w_dy2_dalpha1", "d2w_dy1_dalpha2", "laplace_y_w", "difference_l_w"]
        .iter()
        .enumerate()
    {
        let residuals: Vec<f64> = vals.iter().map(|(fdv, f)| fdv[k] - f[k].0).collect();
        let scale = max_of(vals.iter().map(|(_, f)| f[k].1));
        report.checks.push(Check::new(
            *name,
            settings.tolerance,
            scale,
            line_rows(&lines, &residuals),
        ));
    }
    Ok(report)
}

/// The fourth-order equation `P²w + 4 Δ_M w = 0`, the identities
/// `P I(v⊗v) = 2 Δ_M w` and `P w = I Q0`, and `P(I p) = 0` for the scalar
/// pressure.
///
/// For radial solutions `P I(v⊗v)` vanishes identically, so the scale of the
/// first two checks is the largest sum of magnitudes of the separate terms
/// of `P I(v⊗v)`; `P w = I Q0` is scaled by the `L¹` mass of the `I Q0`
/// integrand and `P(I p)` by `|∇_y I p|`.
pub fn suite_main_pde(
    pair: &SolutionPair,
    settings: &MainPdeSettings,
    quad: &Quadrature,
    fd: &FdSpec,
    nested_fd: &FdSpec,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let (v, p) = (&pair.velocity, &pair.pressure);
    let lines = sample_lines(&mut rng, &ball, settings.lines, 1.5);
    let w = GrassmannFunction::w(v, HalfPlaneSide::H2, quad);
    let ivv = GrassmannFunction::xray_unit_speed(&outer_square(v), quad);
    let w_exprs = [
        LineOperator::Invariant.power(2).plus(4.0, LineOperator::Laplace.expr()),
        LineOperator::Laplace.expr(),
        LineOperator::Invariant.expr(),
    ];
    let mut ivv_exprs = vec![LineOperator::Invariant.expr()];
    ivv_exprs.extend(term_words(LineOperator::Invariant, 1));
    let vals = par_map(&lines, |l| {
        let wv = evaluate_many(&w, l, nested_fd, &w_exprs)?;
        let iv = evaluate_many(&ivv, l, nested_fd, &ivv_exprs)?;
        let (iq, iq_mass) = iq_zero_with_mass(v, p, l, quad);
        let terms: f64 = iv[1..].iter().map(|t| t.abs()).sum();
        Ok([wv[0], iv[0] - 2.0 * wv[1], wv[2] - iq, terms, iq_mass])
    })?;
    let scale = max_of(vals.iter().map(|r| r[3]));
    let iq_scale = max_of(vals.iter().map(|r| r[4]));
    let col = |k: usize| vals.iter().map(|r| r[k]).collect::<Vec<_>>();

    let scalar_lines = sample_lines(&mut rng, &ball, settings.scalar_lines, 2.0);
    let ip = GrassmannFunction::xray_unit_speed(p, quad);
    let scalar_exprs = [LineOperator::Invariant.expr(), partial(Y1), partial(Y2)];
    let svals = par_map(&scalar_lines, |l| evaluate_many(&ip, l, fd, &scalar_exprs))?;
    let grad_scale = max_of(svals.iter().map(|s| s[1].hypot(s[2])));

    let mut report = ResidualReport::new("main_pde", "", seed).restricted();
    let tol = settings.tolerance;
    report
        .checks
        .push(Check::new("p2w_plus_4lap_w", tol, scale, line_rows(&lines, &col(0))));
    report
        .checks
        .push(Check::new("p_ivv_minus_2lap_w", tol, scale, line_rows(&lines, &col(1))));
    report
        .checks
        .push(Check::new("pw_minus_iq0", tol, iq_scale, line_rows(&lines, &col(2))));
    report.checks.push(Check::new(
        "p_of_scalar_xray",
        settings.scalar_tolerance,
        grad_scale,
        line_rows(&scalar_lines, &svals.iter().map(|s| s[0]).collect::<Vec<_>>()),
    ));
    Ok(report)
}

/// `w = 0`, `I Q0 = 0` on lines and `J Q0 = 0` on planes, each scaled by the
/// largest `L¹` mass of its integrand.
pub fn suite_conjectures_radial(
    pair: &SolutionPair,
    settings: &ConjectureSettings,
    quad: &Quadrature,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let (v, p) = (&pair.velocity, &pair.pressure);
    let lines = sample_lines(&mut rng, &ball, settings.lines, 2.0);
    let planes: Vec<PlaneFrame> = (0..settings.planes)
        .map(|_| sample_plane(&mut rng, &ball.center, 0.8 * ball.radius))
        .collect();
    let q0 = q_zero(v, p);
    let lv = par_map(&lines, |l| {
        let (w, wm) = build_w_with_mass(v, l, HalfPlaneSide::H2, quad);
        let (iq, im) = iq_zero_with_mass(v, p, l, quad);
        Ok([w, wm, iq, im])
    })?;
    let pv = par_map(&planes, |pl| Ok(radon_plane_with_mass(&q0, pl, quad)))?;
    let mut report = ResidualReport::new("conjectures_radial", "", seed).restricted();
    let tol = settings.tolerance;
    report.checks.push(Check::new(
        "w",
        tol,
        max_of(lv.iter().map(|r| r[1])),
        line_rows(&lines, &lv.iter().map(|r| r[0]).collect::<Vec<_>>()),
    ));
    report.checks.push(Check::new(
        "iq0",
        tol,
        max_of(lv.iter().map(|r| r[3])),
        line_rows(&lines, &lv.iter().map(|r| r[2]).collect::<Vec<_>>()),
    ));
    report.checks.push(Check::new(
        "jq0",
        tol,
        max_of(pv.iter().map(|r| r.1)),
        planes
            .iter()
            .zip(&pv)
            .enumerate()
            .map(|(i, (pl, r))| Row {
                sample_id: i,
                coords: plane_coords(pl, 0.0),
                residual: r.0,
            })
            .collect(),
    ));
    Ok(report)
}

/// Second derivatives of all components of `Q0` at `x`: `h[c][(a, b)]`.
fn q_hessians(q0: &SmoothField, x: &Vec3) -> [Matrix3<f64>; 9] {
    std::array::from_fn(|c| q0.hessian(x, c))
}

/// Pointwise consequences of `J Q0 = 0` and `I Q0 = 0`:
/// `∑ ∂i∂j q^{ij} = Δ tr Q0`, `2 ∂i∂j q^{ij} = ∂j² q^{ii} + ∂i² q^{jj}` for
/// `i < j`, and the symmetrized curl `Psi(v) = 0`.
pub fn suite_pointwise_pdes(pair: &SolutionPair, settings: &PointwiseSettings, seed: u64) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let points: Vec<Vec3> = (0..settings.points)
        .map(|_| ball.center + sample_in_ball(&mut rng, ball.radius))
        .collect();
    let q0 = q_zero(&pair.velocity, &pair.pressure);
    let psi = psi_tensor(&pair.velocity);
    let vv = outer_square(&pair.velocity);
    let vals = par_map(&points, |x| {
        let h = q_hessians(&q0, x);
        let q = |i: usize, j: usize| 3 * i + j;
        let mixed: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| h[q(i, j)][(i, j)])
            .sum();
        let lap_trace: f64 = (0..3).map(|i| h[q(i, i)].trace()).sum();
        let system =
            [(0, 1), (0, 2), (1, 2)].map(|(i, j)| 2.0 * h[q(i, j)][(i, j)] - h[q(i, i)][(j, j)] - h[q(j, j)][(i, i)]);
        let second = h.iter().fold(0.0f64, |m, hc| m.max(hc.amax()));
        let g = vv.gradient(x);
        let first = g.d.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok([
            mixed - lap_trace,
            system[0],
            system[1],
            system[2],
            psi.value(x).max_abs(),
            second,
            first,
        ])
    })?;
    let rows = |k: usize| {
        points
            .iter()
            .zip(&vals)
            .enumerate()
            .map(|(i, (x, r))| Row {
                sample_id: i,
                coords: [x[0], x[1], x[2], 0.0],
                residual: r[k],
            })
            .collect::<Vec<_>>()
    };
    let second = max_of(vals.iter().map(|r| r[5]));
    let first = max_of(vals.iter().map(|r| r[6]));
    let tol = settings.tolerance;
    let mut report = ResidualReport::new("pointwise_pdes", "", seed).restricted();
    report
        .checks
        .push(Check::new("jq0_divergence_form", tol, second, rows(0)));
    report.checks.push(Check::new("system_12", tol, second, rows(1)));
    report.checks.push(Check::new("system_13", tol, second, rows(2)));
    report.checks.push(Check::new("system_23", tol, second, rows(3)));
    report.checks.push(Check::new("psi", tol, first, rows(4)));
    Ok(report)
}

/// Line through `R x` with direction `R xi` for the line `m`.
fn rotate_line(line: &LineNH, rot: &Rotation3<f64>) -> Result<LineNH> {
    LineNH::from_point_direction(&(rot * line.anchor()), &(rot * line.direction()))
}

/// Identities of the operators on X-ray transforms of generic fields:
/// `Δ_M (I f) = I (Δ f)`, invariance of `P` under rotations of space, and
/// optionally `P³ψ + 4 P Δ_M ψ = 0` for `ψ = I Q`.
pub fn suite_operator_identities(
    support: &Ball,
    settings: &OperatorIdentitySettings,
    quad: &Quadrature,
    fd: &FdSpec,
    nested_fd: &FdSpec,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = *support;
    let r = ball.radius;
    let mut report = ResidualReport::new("operator_identities", "", seed);

    // two off-centre bumps, so the scalar has no symmetry about sampled lines
    let c1 = ball.center + Vec3::new(0.25 * r, -0.1 * r, 0.05 * r);
    let c2 = ball.center + Vec3::new(-0.3 * r, 0.2 * r, -0.1 * r);
    let (p1, p2) = (make_bump_profile(0.6 * r, 1.0)?, make_bump_profile(0.5 * r, -0.7)?);
    let f = radial_scalar_at(p1, c1).add(&radial_scalar_at(p2, c2))?;
    let lap_f = radial_scalar_laplacian_at(p1, c1).add(&radial_scalar_laplacian_at(p2, c2))?;
    let i_f = GrassmannFunction::xray_unit_speed(&f, quad);
    let lines = sample_lines(&mut rng, &ball, settings.lines, 1.5);
    let mut exprs = vec![LineOperator::Laplace.expr()];
    exprs.extend(term_words(LineOperator::Laplace, 1));
    let vals = par_map(&lines, |l| {
        let v = evaluate_many(&i_f, l, fd, &exprs)?;
        Ok((
            v[0] - xray_unit_speed(&lap_f, l, quad),
            v[1..].iter().map(|t| t.abs()).sum::<f64>(),
        ))
    })?;
    report.checks.push(Check::new(
        "laplace_commutes_with_xray",
        settings.tolerance,
        max_of(vals.iter().map(|v| v.1)),
        line_rows(&lines, &vals.iter().map(|v| v.0).collect::<Vec<_>>()),
    ));

    let q = random_field(2, ball, &mut rng);
    let i_q = GrassmannFunction::xray_unit_speed(&q, quad);
    let mut p_exprs = vec![LineOperator::Invariant.expr()];
    p_exprs.extend(term_words(LineOperator::Invariant, 1));
    let rotations = [
        ("rotation_x3", Rotation3::from_axis_angle(&Vec3::z_axis(), 0.7), 1.5),
        (
            "rotation_tilted",
            Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, 1.0, 0.3)), 0.3),
            0.8,
        ),
    ];
    for (name, rot, alpha_half_width) in rotations {
        let q_rot = q.rotated(&rot);
        let i_q_rot = GrassmannFunction::xray_unit_speed(&q_rot, quad);
        let lines = sample_lines(&mut rng, &ball, settings.lines, alpha_half_width);
        let vals = par_map(&lines, |l| {
            let base = evaluate_many(&i_q, l, fd, &p_exprs)?;
            let moved = evaluate_many(&i_q_rot, &rotate_line(l, &rot)?, fd, &p_exprs[..1])?;
            Ok((moved[0] - base[0], base[1..].iter().map(|t| t.abs()).sum::<f64>()))
        })?;
        report.checks.push(Check::new(
            name,
            settings.tolerance,
            max_of(vals.iter().map(|v| v.1)),
            line_rows(&lines, &vals.iter().map(|v| v.0).collect::<Vec<_>>()),
        ));
    }

    if settings.include_third_order {
        let lines = sample_lines(&mut rng, &ball, settings.third_order_lines, 1.0);
        let pl = Expr::word(vec![
            Factor::Op(LineOperator::Invariant),
            Factor::Op(LineOperator::Laplace),
        ]);
        let mut exprs = vec![LineOperator::Invariant.power(3).plus(4.0, pl)];
        exprs.extend(term_words(LineOperator::Invariant, 3));
        let vals = par_map(&lines, |l| evaluate_many(&i_q, l, nested_fd, &exprs))?;
        report.checks.push(Check::new(
            "p3_plus_4p_lap",
            settings.third_order_tolerance,
            max_of(vals.iter().map(|v| v[1..].iter().map(|t| t.abs()).sum::<f64>())),
            line_rows(&lines, &vals.iter().map(|v| v[0]).collect::<Vec<_>>()),
        ));
    }
    Ok(report)
}

/// Change of every reported integral when the Gauss order is doubled,
/// against the largest `L¹` mass of its integrand over the samples.
pub fn suite_quadrature_convergence(
    pair: &SolutionPair,
    settings: &ConvergenceSettings,
    quad: &Quadrature,
    seed: u64,
) -> Result<ResidualReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = pair.support();
    let (v, p) = (&pair.velocity, &pair.pressure);
    let fine = quad.doubled();
    let lines = sample_lines(&mut rng, &ball, settings.lines, 2.0);
    let planes: Vec<(PlaneFrame, f64)> = (0..settings.planes)
        .map(|_| {
            (
                sample_plane(&mut rng, &ball.center, 0.8 * ball.radius),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let q0 = q_zero(v, p);
    let vv = outer_square(v);
    // (change, mass) for each integral type
    let line_vals = par_map(&lines, |l| {
        let pairs = [
            (xray_with_mass(p, l, quad), xray_with_mass(p, l, &fine)),
            (xray_with_mass(&q0, l, quad), xray_with_mass(&q0, l, &fine)),
            (xray_with_mass(&vv, l, quad), xray_with_mass(&vv, l, &fine)),
            (
                build_w_with_mass(v, l, HalfPlaneSide::H2, quad),
                build_w_with_mass(v, l, HalfPlaneSide::H2, &fine),
            ),
            (iq_zero_with_mass(v, p, l, quad), iq_zero_with_mass(v, p, l, &fine)),
        ];
        let mut out: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| ((a.0 - b.0).abs(), b.1)).collect();
        // F at the vertical line through the point of `l` level with the centre
        let x = l.point_at(ball.center[2]);
        let vertical = LineNH::vertical(x[0], x[1]);
        let f_mass = fine.integrate_line(
            |t| {
                let u = v.value(&vertical.point_at(t)).as_vector();
                (u[1] * u[2]).abs() + (u[0] * u[2]).abs()
            },
            &vertical,
            &ball,
        );
        let (fa, fb) = (build_f(v, x[0], x[1], quad), build_f(v, x[0], x[1], &fine));
        out.push(((fa[0] - fb[0]).abs().max((fa[1] - fb[1]).abs()), f_mass));
        Ok(out)
    })?;
    let plane_vals = par_map(&planes, |(pl, angle)| {
        let (a, b) = (
            radon_plane_with_mass(&q0, pl, quad),
            radon_plane_with_mass(&q0, pl, &fine),
        );
        let z = pl.b1 * angle.cos() + pl.b2 * angle.sin();
        let (c, d) = (plane_flux_moment(v, pl, &z, quad), plane_flux_moment(v, pl, &z, &fine));
        Ok(vec![((a.0 - b.0).abs(), b.1), ((c.0 - d.0).abs(), d.1)])
    })?;
    let mut report = ResidualReport::new("quadrature_convergence", "", seed);
    let names = ["xray_pressure", "xray_q0", "xray_vv", "w", "iq0", "f"];
    for (k, name) in names.iter().enumerate() {
        report.checks.push(Check::new(
            *name,
            settings.tolerance,
            max_of(line_vals.iter().map(|r| r[k].1)),
            line_rows(&lines, &line_vals.iter().map(|r| r[k].0).collect::<Vec<_>>()),
        ));
    }
    for (k, name) in ["jq0", "plane_flux_moment"].iter().enumerate() {
        report.checks.push(Check::new(
            *name,
            settings.tolerance,
            max_of(plane_vals.iter().map(|r| r[k].1)),
            planes
                .iter()
                .zip(&plane_vals)
                .enumerate()
                .map(|(i, ((pl, angle), r))| Row {
                    sample_id: i,
                    coords: plane_coords(pl, *angle),
                    residual: r[k].0,
                })
                .collect(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FamilyConfig;

    fn row(r: f64) -> Row {
        Row {
            sample_id: 0,
            coords: [0.0; 4],
            residual: r,
        }
    }

    #[test]
    fn check_verdict_uses_scaled_tolerance() {
        let c = Check::new("c", 1e-3, 10.0, vec![row(5e-3), row(-9e-3)]);
        assert!(c.passes());
        assert_eq!(c.max_residual(), 9e-3);
        let c = Check::new("c", 1e-3, 10.0, vec![row(1.1e-2)]);
        assert!(!c.passes());
        let c = Check::new("c", 1e-3, 10.0, vec![row(f64::NAN)]);
        assert!(!c.passes());
        let c = Check::new("c", 1e-3, 0.0, vec![row(0.0)]);
        assert!(c.passes());
        assert_eq!(c.relative_residual(), 0.0);
    }

    #[test]
    fn suite_selector() {
        assert_eq!(suite_names("all").unwrap().len(), SUITES.len());
        assert_eq!(suite_names("main_pde").unwrap(), vec!["main_pde"]);
        assert!(matches!(suite_names("nope"), Err(Error::UnknownSuite(_))));
        assert!(matches!(
            run_suite("nope", &RunConfig::default()),
            Err(Error::UnknownSuite(_))
        ));
    }

    #[test]
    fn suite_seeds_differ_per_suite() {
        let seeds: std::collections::BTreeSet<u64> = SUITES.iter().map(|s| suite_seed(1, s)).collect();
        assert_eq!(seeds.len(), SUITES.len());
        assert_eq!(suite_seed(1, "plane_flux"), suite_seed(1, "plane_flux"));
    }

    #[test]
    fn csv_layout() {
        let mut report = ResidualReport::new("s", "radial", 3);
        report
            .checks
            .push(Check::new("c", 1e-2, 1.0, vec![row(0.5), row(1e-3)]));
        let mut buf = Vec::new();
        write_csv(&mut buf, &[report], "abc", 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_sha256=abc seed=3");
        assert_eq!(lines[1], CSV_HEADER.join(","));
        assert_eq!(lines[2], "s/c,0,0e0,0e0,0e0,0e0,5e-1,1e0,1e-2,false");
        assert_eq!(lines[3], "s/c,0,0e0,0e0,0e0,0e0,1e-3,1e0,1e-2,true");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn fast_suites_pass_and_repeat() {
        let mut config = RunConfig::default();
        config.suites.plane_flux.planes = 4;
        config.suites.pointwise_pdes.points = 50;
        for name in ["plane_flux", "pointwise_pdes"] {
            let a = run_suite(name, &config).unwrap();
            let b = run_suite(name, &config).unwrap();
            assert!(a.passes(), "{:?}", a.summary_lines());
            assert_eq!(a.checks, b.checks);
            assert!(a.restriction.is_some());
        }
    }

    #[test]
    fn zero_family_has_zero_residuals() {
        let mut config = RunConfig::default();
        config.family = FamilyConfig::Zero { radius: 1.0 };
        config.suites.conjectures_radial.lines = 5;
        config.suites.conjectures_radial.planes = 3;
        let r = run_suite("conjectures_radial", &config).unwrap();
        assert_eq!(r.max_residual(), 0.0);
        assert!(r.passes());
    }

    #[test]
    fn term_words_enumerate_compositions() {
        assert_eq!(term_words(LineOperator::John, 2).len(), 4);
        assert_eq!(
            term_words(LineOperator::Invariant, 1).len(),
            LineOperator::Invariant.terms().len()
        );
        assert_eq!(term_words(LineOperator::Laplace, 0).len(), 1);
    }
}
