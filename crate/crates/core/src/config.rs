//! JSON run configuration: field family, numerical specs, per-suite sample
//! counts and tolerances, seed and parallelism.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{Ball, ProfileKind, RadialProfile, SolutionPair, Vec3};
use crate::operators::FdSpec;
use crate::quadrature::QuadratureSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub profile: ProfileKind,
    pub radius: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

impl RadialSpec {
    pub fn bump(radius: f64, amplitude: f64, center: [f64; 3]) -> Self {
        Self {
            profile: ProfileKind::Bump,
            radius,
            amplitude,
            center,
        }
    }

    pub fn solution(&self) -> Result<SolutionPair> {
        let profile = RadialProfile::new(self.profile, self.radius, self.amplitude)?;
        SolutionPair::radial(profile, Vec3::from(self.center))
    }
}

/// The solution family every suite is run on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// `v = psi(|x - c|^2)(x - c)` with its pressure.
    Radial(RadialSpec),
    /// Two radial solutions with disjoint supports.
    RadialPair { first: RadialSpec, second: RadialSpec },
    /// `v = 0`, `p = 0` on a ball of the given radius.
    Zero { radius: f64 },
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig::Radial(RadialSpec::bump(1.0, 1.0, [0.0; 3]))
    }
}

impl FamilyConfig {
    /// The two-bump family used alongside the centred bump: it breaks the
    /// symmetry of the quadrature about the origin.
    pub fn default_pair() -> Self {
        FamilyConfig::RadialPair {
            first: RadialSpec::bump(0.5, 1.0, [-0.45, 0.1, 0.05]),
            second: RadialSpec::bump(0.4, 1.0, [0.5, -0.2, -0.1]),
        }
    }

    pub fn solution(&self) -> Result<SolutionPair> {
        match self {
            FamilyConfig::Radial(r) => r.solution(),
            FamilyConfig::RadialPair { first, second } => first.solution()?.superpose(&second.solution()?),
            FamilyConfig::Zero { radius } => {
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "zero family needs a positive radius, got {radius}"
                    )));
                }
                Ok(SolutionPair::zero(Ball::origin(*radius)))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyConfig::Radial(_) => "radial",
            FamilyConfig::RadialPair { .. } => "radial_pair",
            FamilyConfig::Zero { .. } => "zero",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneFluxSettings {
    pub planes: usize,
    pub directions: usize,
    pub tolerance: f64,
}

impl Default for PlaneFluxSettings {
    fn default() -> Self {
        Self {
            planes: 20,
            directions: 3,
            tolerance: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelRangeSettings {
    pub kernel_lines: usize,
    pub potentials: usize,
    pub kernel_tolerance: f64,
    pub range_lines: usize,
    pub range_tolerance: f64,
    /// `L^3 phi = 0` for rank-2 fields (sixth-order stencil)
    pub include_rank2_range: bool,
    pub rank2_range_lines: usize,
    pub rank2_range_tolerance: f64,
}

impl Default for KernelRangeSettings {
    fn default() -> Self {
        Self {
            kernel_lines: 200,
            potentials: 3,
            kernel_tolerance: 1e-8,
            range_lines: 50,
            range_tolerance: 1e-5,
            include_rank2_range: true,
            rank2_range_lines: 10,
            rank2_range_tolerance: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WConstructionSettings {
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for WConstructionSettings {
    fn default() -> Self {
        Self {
            samples: 50,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeFormulaSettings {
    /// vertical lines, the first one through the support centre
    pub lines: usize,
    pub tolerance: f64,
}

impl Default for DerivativeFormulaSettings {
    fn default() -> Self {
        Self {
            lines: 8,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainPdeSettings {
    pub lines: usize,
    pub tolerance: f64,
    pub scalar_lines: usize,
    pub scalar_tolerance: f64,
}

impl Default for MainPdeSettings {
    fn default() -> Self {
        Self {
            lines: 20,
            tolerance: 1e-4,
            scalar_lines: 50,
            scalar_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjectureSettings {
    pub lines: usize,
    pub planes: usize,
    pub tolerance: f64,
}

impl Default for ConjectureSettings {
    fn default() -> Self {
        Self {
            lines: 100,
            planes: 30,
            tolerance: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointwiseSettings {
    pub points: usize,
    pub tolerance: f64,
}

impl Default for PointwiseSettings {
    fn default() -> Self {
        Self {
            points: 1000,
            tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorIdentitySettings {
    pub lines: usize,
    pub tolerance: f64,
    /// `P^3 psi + 4 P Δ_M psi = 0` for `psi = I Q`
    pub include_third_order: bool,
    pub third_order_lines: usize,
    pub third_order_tolerance: f64,
}

impl Default for OperatorIdentitySettings {
    fn default() -> Self {
        Self {
            lines: 20,
            tolerance: 1e-6,
            include_third_order: true,
            third_order_lines: 5,
            third_order_tolerance: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub lines: usize,
    pub planes: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            lines: 10,
            planes: 5,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    pub plane_flux: PlaneFluxSettings,
    pub kernel_range: KernelRangeSettings,
    pub w_construction: WConstructionSettings,
    pub derivative_formulas: DerivativeFormulaSettings,
    pub main_pde: MainPdeSettings,
    pub conjectures_radial: ConjectureSettings,
    pub pointwise_pdes: PointwiseSettings,
    pub operator_identities: OperatorIdentitySettings,
    pub quadrature_convergence: ConvergenceSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// CSV report written when no `--out` is given
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            report: "reports/report.csv".into(),
        }
    }
}

/// Default stencils for nested operator powers: second-order with one
/// Richardson level at `h = 1e-2`. Fourth derivatives at `h = 5e-3` amplify
/// rounding by ~`1/h^4`; the sweep in `docs/convergence-study.md` shows the
/// larger step trading that for truncation well below the tolerances.
pub fn default_nested_fd() -> FdSpec {
    FdSpec {
        order: 2,
        ..FdSpec::default()
    }
    .with_steps(1e-2, 1e-2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyConfig,
    pub quadrature: QuadratureSpec,
    /// stencils for single applications of `L`, `P`, `Δ_M`
    pub fd: FdSpec,
    /// stencils for nested powers such as `P^2`
    pub nested_fd: FdSpec,
    pub suites: SuiteSettings,
    pub seed: u64,
    /// worker threads; 0 means one per available core
    pub jobs: usize,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: FamilyConfig::default(),
            quadrature: QuadratureSpec::default(),
            fd: FdSpec::default(),
            nested_fd: default_nested_fd(),
            suites: SuiteSettings::default(),
            seed: 20_240_611,
            jobs: 0,
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        self.fd.validate()?;
        self.nested_fd.validate()?;
        self.family.solution()?;
        Ok(())
    }

    /// SHA-256 of the compact JSON form with `jobs` cleared, so that the
    /// hash identifies everything that can change a result.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.jobs = 0;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn threads(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for family in [
            FamilyConfig::default(),
            FamilyConfig::default_pair(),
            FamilyConfig::Zero { radius: 1.0 },
        ] {
            let cfg = RunConfig {
                family,
                seed: 7,
                ..RunConfig::default()
            };
            let back = RunConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(RunConfig::from_json(&back.to_json()).unwrap(), back);
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 3, "suites": {"main_pde": {"lines": 2}}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.suites.main_pde.lines, 2);
        assert_eq!(cfg.suites.main_pde.tolerance, 1e-4);
        assert_eq!(cfg.quadrature, QuadratureSpec::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_json(r#"{"sead": 3}"#).is_err());
        assert!(RunConfig::from_json(
            r#"{"family": {"kind": "radial", "profile": "bump", "radius": -1, "amplitude": 1}}"#
        )
        .is_err());
        assert!(RunConfig::from_json(
            r#"{"fd": {"h_y": 0.0, "h_alpha": 0.01, "order": 4, "richardson": 1, "chart_box": 3}}"#
        )
        .is_err());
        assert!(RunConfig::from_json(r#"{"fd": {"h_y": 0.01}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"quadrature": {"order": 24, "panels": 4}}"#).is_err());
        let c = RunConfig::from_json(r#"{"quadrature": {"order": 32}}"#).unwrap();
        assert_eq!(c.quadrature.panels_per_unit, 8);
    }

    #[test]
    fn hash_ignores_jobs_only() {
        let a = RunConfig::default();
        let b = RunConfig { jobs: 3, ..a.clone() };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn overlapping_pair_rejected() {
        let cfg = RunConfig {
            family: FamilyConfig::RadialPair {
                first: RadialSpec::bump(0.5, 1.0, [0.0; 3]),
                second: RadialSpec::bump(0.5, 1.0, [0.3, 0.0, 0.0]),
            },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::OverlappingSupports)));
    }
}
