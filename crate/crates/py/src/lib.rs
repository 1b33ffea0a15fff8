//! Python module `igeuler`: lines, radial solutions and their transforms,
//! line-space operators and the verification suites.

use igeuler_core::config::{FamilyConfig, RadialSpec, RunConfig};
use igeuler_core::fields::{outer_square, q_zero, ProfileKind, SmoothField, SolutionPair, Vec3};
use igeuler_core::geometry::{HalfPlaneSide, LineNH, PlaneFrame};
use igeuler_core::operators::{evaluate, FdSpec, LineOperator};
use igeuler_core::quadrature::{Quadrature, QuadratureSpec};
use igeuler_core::transforms::{build_w, iq_zero_lineintegral, radon_plane, xray, GrassmannFunction};
use igeuler_core::verify::{self, summarize};
use igeuler_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_side(side: &str) -> PyResult<HalfPlaneSide> {
    match side {
        "H1" | "h1" => Ok(HalfPlaneSide::H1),
        "H2" | "h2" => Ok(HalfPlaneSide::H2),
        _ => Err(PyValueError::new_err(format!(
            "side must be 'H1' or 'H2', got {side:?}"
        ))),
    }
}

fn parse_operator(name: &str) -> PyResult<LineOperator> {
    match name {
        "L" | "john" => Ok(LineOperator::John),
        "P" | "invariant" => Ok(LineOperator::Invariant),
        "laplace" | "Delta_M" => Ok(LineOperator::Laplace),
        _ => Err(PyValueError::new_err(format!(
            "operator must be 'L', 'P' or 'laplace', got {name:?}"
        ))),
    }
}

/// Non-horizontal line `{(y1 + alpha1 t, y2 + alpha2 t, t)}`.
#[pyclass(name = "Line", frozen, from_py_object)]
#[derive(Clone)]
struct PyLine {
    inner: LineNH,
}

#[pymethods]
impl PyLine {
    #[new]
    fn new(y1: f64, y2: f64, alpha1: f64, alpha2: f64) -> Self {
        Self {
            inner: LineNH::new(y1, y2, alpha1, alpha2),
        }
    }

    #[staticmethod]
    fn vertical(y1: f64, y2: f64) -> Self {
        Self {
            inner: LineNH::vertical(y1, y2),
        }
    }

    #[staticmethod]
    fn from_point_direction(point: [f64; 3], direction: [f64; 3]) -> PyResult<Self> {
        LineNH::from_point_direction(&Vec3::from(point), &Vec3::from(direction))
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn coords(&self) -> [f64; 4] {
        self.inner.coords()
    }

    fn point_at(&self, t: f64) -> [f64; 3] {
        self.inner.point_at(t).into()
    }

    fn direction(&self) -> [f64; 3] {
        self.inner.direction().into()
    }

    fn __repr__(&self) -> String {
        let [y1, y2, a1, a2] = self.inner.coords();
        format!("Line(y1={y1}, y2={y2}, alpha1={a1}, alpha2={a2})")
    }
}

/// A radial steady Euler solution `v = psi(|x - c|²)(x - c)` with its
/// pressure, or a superposition of such solutions with disjoint supports.
#[pyclass(name = "RadialSolution", frozen)]
struct PySolution {
    pair: SolutionPair,
    quad: Quadrature,
    fd: FdSpec,
    nested_fd: FdSpec,
}

impl PySolution {
    fn field(&self, name: &str) -> PyResult<SmoothField> {
        match name {
            "pressure" => Ok(self.pair.pressure.clone()),
            "velocity" => Ok(self.pair.velocity.clone()),
            "velocity_square" => Ok(outer_square(&self.pair.velocity)),
            "q0" => Ok(q_zero(&self.pair.velocity, &self.pair.pressure)),
            _ => Err(PyValueError::new_err(format!(
                "field must be 'pressure', 'velocity', 'velocity_square' or 'q0', got {name:?}"
            ))),
        }
    }

    fn with_pair(&self, pair: SolutionPair) -> Self {
        Self {
            pair,
            quad: self.quad.clone(),
            fd: self.fd,
            nested_fd: self.nested_fd,
        }
    }
}

#[pymethods]
impl PySolution {
    #[new]
    #[pyo3(signature = (radius=1.0, amplitude=1.0, center=[0.0, 0.0, 0.0], profile="bump"))]
    fn new(radius: f64, amplitude: f64, center: [f64; 3], profile: &str) -> PyResult<Self> {
        let profile = match profile {
            "bump" => ProfileKind::Bump,
            "polynomial" => ProfileKind::Polynomial,
            _ => return Err(PyValueError::new_err(format!("unknown profile {profile:?}"))),
        };
        let spec = RadialSpec {
            profile,
            radius,
            amplitude,
            center,
        };
        let config = RunConfig::default();
        Ok(Self {
            pair: spec.solution().map_err(py_err)?,
            quad: Quadrature::new(QuadratureSpec::default()).map_err(py_err)?,
            fd: config.fd,
            nested_fd: config.nested_fd,
        })
    }

    /// Sum with another solution whose support is disjoint from this one.
    fn superpose(&self, other: &PySolution) -> PyResult<Self> {
        Ok(self.with_pair(self.pair.superpose(&other.pair).map_err(py_err)?))
    }

    /// Copy using `panels_per_unit` panels of `order`-point Gauss rules.
    fn with_quadrature(&self, panels_per_unit: usize, order: usize) -> PyResult<Self> {
        let quad = Quadrature::new(QuadratureSpec { panels_per_unit, order }).map_err(py_err)?;
        Ok(Self {
            quad,
            ..self.with_pair(self.pair.clone())
        })
    }

    /// Support ball as `(center, radius)`.
    fn support(&self) -> ([f64; 3], f64) {
        let b = self.pair.support();
        (b.center.into(), b.radius)
    }

    fn velocity(&self, x: [f64; 3]) -> [f64; 3] {
        self.pair.velocity.value(&Vec3::from(x)).as_vector().into()
    }

    fn pressure(&self, x: [f64; 3]) -> f64 {
        self.pair.pressure.value(&Vec3::from(x)).as_scalar()
    }

    /// Half-plane function `w` at `line`.
    #[pyo3(signature = (line, side="H2"))]
    fn w(&self, py: Python<'_>, line: PyLine, side: &str) -> PyResult<f64> {
        let side = parse_side(side)?;
        Ok(py.detach(|| build_w(&self.pair.velocity, &line.inner, side, &self.quad)))
    }

    /// Unit-speed X-ray transform of `Q0 = (p + |v|²) δ - 2 v ⊗ v`.
    fn iq0(&self, line: PyLine) -> f64 {
        iq_zero_lineintegral(&self.pair.velocity, &self.pair.pressure, &line.inner, &self.quad)
    }

    /// Chart-normalized X-ray transform of one of the solution's fields.
    #[pyo3(signature = (line, field="pressure"))]
    fn xray(&self, line: PyLine, field: &str) -> PyResult<f64> {
        Ok(xray(&self.field(field)?, &line.inner, &self.quad))
    }

    /// Plane transform of `Q0` over the plane with unit normal at polar
    /// angle `theta`, azimuth `phi`, offset `d`.
    fn plane_transform(&self, theta: f64, phi: f64, d: f64) -> f64 {
        let q = q_zero(&self.pair.velocity, &self.pair.pressure);
        radon_plane(&q, &PlaneFrame::from_angles(theta, phi, d), &self.quad)
    }

    /// `operator^power` applied by finite differences to `object` (`"w"`,
    /// `"iq0"` or `"xray_vv"`, the unit-speed transform of `v ⊗ v`) at `line`.
    #[pyo3(signature = (operator, object, line, power=1))]
    fn apply(&self, py: Python<'_>, operator: &str, object: &str, line: PyLine, power: usize) -> PyResult<f64> {
        let op = parse_operator(operator)?;
        if !(1..=3).contains(&power) {
            return Err(PyValueError::new_err("power must be 1, 2 or 3"));
        }
        let u = match object {
            "w" => GrassmannFunction::w(&self.pair.velocity, HalfPlaneSide::H2, &self.quad),
            "iq0" => GrassmannFunction::iq_zero(&self.pair.velocity, &self.pair.pressure, &self.quad),
            "xray_vv" => GrassmannFunction::xray_unit_speed(&outer_square(&self.pair.velocity), &self.quad),
            _ => return Err(PyValueError::new_err(format!("unknown object {object:?}"))),
        };
        let fd = if power == 1 { self.fd } else { self.nested_fd };
        py.detach(|| evaluate(&u, &line.inner, &fd, &op.power(power)))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let (c, r) = self.support();
        format!("RadialSolution(support center={c:?}, radius={r})")
    }
}

/// Names of the verification suites.
#[pyfunction]
fn suites() -> Vec<&'static str> {
    verify::SUITES.to_vec()
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Default configuration with the superposed two-bump family.
#[pyfunction]
fn pair_config() -> String {
    RunConfig {
        family: FamilyConfig::default_pair(),
        ..RunConfig::default()
    }
    .to_json()
}

/// SHA-256 identifying a configuration.
#[pyfunction]
fn config_hash(config_json: &str) -> PyResult<String> {
    Ok(RunConfig::from_json(config_json).map_err(py_err)?.hash())
}

/// Run one suite and return its JSON summary (verdicts, residuals, scales).
#[pyfunction]
#[pyo3(signature = (name, config_json=None))]
fn run_suite(py: Python<'_>, name: &str, config_json: Option<&str>) -> PyResult<String> {
    let config = match config_json {
        Some(text) => RunConfig::from_json(text).map_err(py_err)?,
        None => RunConfig::default(),
    };
    let report = py.detach(|| verify::run_suite(name, &config)).map_err(py_err)?;
    serde_json::to_string(&summarize(&report, &config.hash())).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn igeuler(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLine>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(suites, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(pair_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
