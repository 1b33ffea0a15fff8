//! Front end for the `igeuler` binary: suite runs, grid sampling, report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use igeuler_core::config::RunConfig;
use igeuler_core::fields::{make_bump_profile, outer_square, q_zero, radial_scalar_at, SmoothField};
use igeuler_core::geometry::{LineNH, PlaneFrame};
use igeuler_core::quadrature::Quadrature;
use igeuler_core::transforms::{build_w, iq_zero_lineintegral, radon_plane, xray};
use igeuler_core::verify::{fmt_float, run_suite, suite_names, summarize, write_csv, ResidualReport};
use igeuler_core::Error;
use rayon::prelude::*;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "igeuler",
    version,
    about = "Verification suites for X-ray transforms of steady Euler flows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one suite, or `all`, and write a CSV report plus a JSON summary
    Suite {
        name: String,
        /// JSON run configuration; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV report path (defaults to the config's output.report)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// worker threads; 0 uses every core
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a transform over a grid of lines (or planes for J)
    Sample {
        object: SampleObject,
        /// comma-separated `name=lo:hi:steps`, names y1,y2,a1,a2 for lines and
        /// theta,phi,d for planes; missing names are fixed at 0
        #[arg(long)]
        grid: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// field transformed by `xray`
        #[arg(long, value_enum, default_value_t = SampledField::Scalar)]
        field: SampledField,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the default configuration, or write it to a file
    Config {
        /// use the superposed two-bump family
        #[arg(long)]
        pair: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleObject {
    #[value(name = "w")]
    W,
    #[value(name = "IQ0", alias = "iq0")]
    IqZero,
    #[value(name = "xray")]
    Xray,
    #[value(name = "J", alias = "j")]
    J,
}

impl SampleObject {
    pub fn name(self) -> &'static str {
        match self {
            SampleObject::W => "w",
            SampleObject::IqZero => "IQ0",
            SampleObject::Xray => "xray",
            SampleObject::J => "J",
        }
    }

    fn axes(self) -> &'static [&'static str] {
        match self {
            SampleObject::J => &["theta", "phi", "d"],
            _ => &["y1", "y2", "a1", "a2"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampledField {
    /// bump `exp(-1/(R² - |x - c|²))` on the family's support ball
    Scalar,
    Pressure,
    Velocity,
    /// `v ⊗ v`
    VelocitySquare,
    /// `(p + |v|²) δ - 2 v ⊗ v`
    QZero,
}

type Sampler<'a> = dyn Fn(&[f64; 4]) -> Result<f64, Error> + Sync + 'a;

/// One axis of a sampling grid: `steps + 1` equally spaced values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 0 {
            return vec![self.lo];
        }
        (0..=self.steps)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / self.steps as f64)
            .collect()
    }
}

/// Parse `y1=-0.5:0.5:10,a1=0:1:4` against the allowed axis names.
pub fn parse_grid(spec: &str, names: &[&str]) -> Result<Vec<Axis>, String> {
    let mut axes = vec![
        Axis {
            lo: 0.0,
            hi: 0.0,
            steps: 0
        };
        names.len()
    ];
    let mut seen = vec![false; names.len()];
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, range) = part
            .split_once('=')
            .ok_or_else(|| format!("grid entry `{part}` lacks `=`"))?;
        let k = names
            .iter()
            .position(|n| *n == name.trim())
            .ok_or_else(|| format!("unknown grid axis `{name}`; expected one of {}", names.join(", ")))?;
        if seen[k] {
            return Err(format!("grid axis `{name}` given twice"));
        }
        seen[k] = true;
        let fields: Vec<&str> = range.split(':').collect();
        let [lo, hi, steps] = fields[..] else {
            return Err(format!("grid range `{range}` is not lo:hi:steps"));
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let axis = Axis {
            lo: num(lo)?,
            hi: num(hi)?,
            steps: steps.trim().parse().map_err(|e| format!("`{steps}`: {e}"))?,
        };
        if !axis.lo.is_finite() || !axis.hi.is_finite() {
            return Err(format!("grid range `{range}` is not finite"));
        }
        axes[k] = axis;
    }
    Ok(axes)
}

/// All grid points in row-major order, last axis fastest, padded to 4 coordinates.
pub fn grid_points(axes: &[Axis]) -> Vec<[f64; 4]> {
    let mut points = vec![[0.0; 4]];
    for (k, axis) in axes.iter().enumerate() {
        let values = axis.values();
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p;
                    q[k] = v;
                    q
                })
            })
            .collect();
    }
    points
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn exit_code_for(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn create_parent(path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// `<dir>/<stem>.summary.json` next to the CSV report.
pub fn summary_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.summary.json"))
}

pub struct SuiteOutcome {
    pub reports: Vec<ResidualReport>,
    pub csv: PathBuf,
    pub summary: PathBuf,
}

impl SuiteOutcome {
    pub fn passes(&self) -> bool {
        self.reports.iter().all(ResidualReport::passes)
    }
}

pub fn cmd_suite(
    name: &str,
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> Result<SuiteOutcome, Error> {
    let names = suite_names(name)?;
    let mut config = load_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(jobs) = jobs {
        config.jobs = jobs;
    }
    let csv_path = out.map_or_else(|| PathBuf::from(&config.output.report), Path::to_path_buf);
    let pool = thread_pool(config.threads())?;
    let reports = names
        .iter()
        .map(|n| pool.install(|| run_suite(n, &config)))
        .collect::<Result<Vec<_>, _>>()?;

    let hash = config.hash();
    create_parent(&csv_path)?;
    let mut file = BufWriter::new(fs::File::create(&csv_path)?);
    write_csv(&mut file, &reports, &hash, config.seed)?;
    file.flush()?;

    let summary: BTreeMap<String, _> = reports.iter().map(|r| (r.suite.clone(), summarize(r, &hash))).collect();
    let summary_path = summary_path(&csv_path);
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(SuiteOutcome {
        reports,
        csv: csv_path,
        summary: summary_path,
    })
}

fn sampled_field(which: SampledField, config: &RunConfig) -> Result<SmoothField, Error> {
    let pair = config.family.solution()?;
    Ok(match which {
        SampledField::Scalar => {
            let ball = pair.support();
            radial_scalar_at(make_bump_profile(ball.radius, 1.0)?, ball.center)
        }
        SampledField::Pressure => pair.pressure,
        SampledField::Velocity => pair.velocity,
        SampledField::VelocitySquare => outer_square(&pair.velocity),
        SampledField::QZero => q_zero(&pair.velocity, &pair.pressure),
    })
}

/// Evaluate `object` on every grid point; returns the points and values.
pub fn sample_values(
    object: SampleObject,
    grid: &str,
    config: &RunConfig,
    field: SampledField,
) -> Result<Vec<([f64; 4], f64)>, Error> {
    let axes = parse_grid(grid, object.axes()).map_err(Error::InvalidParameter)?;
    let points = grid_points(&axes);
    let quad = Quadrature::new(config.quadrature)?;
    let pair = config.family.solution()?;
    let (v, p) = (&pair.velocity, &pair.pressure);
    let eval: Box<Sampler> = match object {
        SampleObject::W => Box::new(|c| {
            Ok(build_w(
                v,
                &LineNH::from_coords(*c),
                igeuler_core::geometry::HalfPlaneSide::H2,
                &quad,
            ))
        }),
        SampleObject::IqZero => Box::new(|c| Ok(iq_zero_lineintegral(v, p, &LineNH::from_coords(*c), &quad))),
        SampleObject::Xray => {
            let f = sampled_field(field, config)?;
            Box::new(move |c| Ok(xray(&f, &LineNH::from_coords(*c), &quad)))
        }
        SampleObject::J => {
            let q = q_zero(v, p);
            Box::new(move |c| Ok(radon_plane(&q, &PlaneFrame::from_angles(c[0], c[1], c[2]), &quad)))
        }
    };
    points.par_iter().map(|c| Ok((*c, eval(c)?))).collect()
}

pub fn cmd_sample(
    object: SampleObject,
    grid: &str,
    config: Option<&Path>,
    out: &Path,
    field: SampledField,
    jobs: Option<usize>,
) -> Result<usize, Error> {
    let mut config = load_config(config)?;
    if let Some(jobs) = jobs {
        config.jobs = jobs;
    }
    let pool = thread_pool(config.threads())?;
    let values = pool.install(|| sample_values(object, grid, &config, field))?;

    create_parent(out)?;
    let mut file = BufWriter::new(fs::File::create(out)?);
    writeln!(file, "# config_sha256={} seed={}", config.hash(), config.seed)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "object",
        "sample_id",
        "coord_1",
        "coord_2",
        "coord_3",
        "coord_4",
        "value",
    ])
    .map_err(to_io)?;
    for (i, (c, value)) in values.iter().enumerate() {
        let mut rec = vec![object.name().to_string(), i.to_string()];
        rec.extend(c.iter().map(|x| fmt_float(*x)));
        rec.push(fmt_float(*value));
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush()?;
    Ok(values.len())
}

pub fn default_config(pair: bool) -> RunConfig {
    let mut config = RunConfig::default();
    if pair {
        config.family = igeuler_core::config::FamilyConfig::default_pair();
    }
    config
}

/// Run the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Config { pair, out } => {
            let config = default_config(pair);
            let written = match &out {
                Some(path) => create_parent(path).and_then(|_| config.save(path)),
                None => {
                    println!("{}", config.to_json());
                    Ok(())
                }
            };
            match written {
                Ok(()) => EXIT_PASS,
                Err(e) => {
                    eprintln!("igeuler: {e}");
                    exit_code_for(&e)
                }
            }
        }
        Command::Suite {
            name,
            config,
            out,
            seed,
            jobs,
        } => match cmd_suite(&name, config.as_deref(), out.as_deref(), seed, jobs) {
            Ok(outcome) => {
                for r in &outcome.reports {
                    for line in r.summary_lines() {
                        println!("{line}");
                    }
                    if let Some(note) = &r.restriction {
                        println!("  note: {note}");
                    }
                    println!("  {} finished in {:.2}s", r.suite, r.runtime.as_secs_f64());
                }
                println!("report: {}", outcome.csv.display());
                println!("summary: {}", outcome.summary.display());
                if outcome.passes() {
                    EXIT_PASS
                } else {
                    EXIT_FAIL
                }
            }
            Err(e) => {
                eprintln!("igeuler: {e}");
                exit_code_for(&e)
            }
        },
        Command::Sample {
            object,
            grid,
            config,
            out,
            field,
            jobs,
        } => match cmd_sample(object, &grid, config.as_deref(), &out, field, jobs) {
            Ok(n) => {
                println!("wrote {n} rows to {}", out.display());
                EXIT_PASS
            }
            Err(e) => {
                eprintln!("igeuler: {e}");
                exit_code_for(&e)
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE_AXES: [&str; 4] = ["y1", "y2", "a1", "a2"];

    #[test]
    fn grid_parsing() {
        let axes = parse_grid("y1=-1:1:4, a2=0:0.5:1", &LINE_AXES).unwrap();
        assert_eq!(axes[0].values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(axes[1].values(), vec![0.0]);
        assert_eq!(axes[3].values(), vec![0.0, 0.5]);
        assert_eq!(grid_points(&axes).len(), 10);
        assert_eq!(grid_points(&axes)[1], [-1.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn zero_steps_is_one_point() {
        let axes = parse_grid("y1=0.3:0.9:0", &LINE_AXES).unwrap();
        assert_eq!(grid_points(&axes), vec![[0.3, 0.0, 0.0, 0.0]]);
        assert_eq!(grid_points(&parse_grid("", &LINE_AXES).unwrap()).len(), 1);
    }

    #[test]
    fn bad_grids_are_rejected() {
        for bad in [
            "y1",
            "y1=0:1",
            "q=0:1:2",
            "y1=0:1:2,y1=0:1:2",
            "y1=a:1:2",
            "y1=0:1:-1",
            "y1=0:inf:2",
        ] {
            assert!(parse_grid(bad, &LINE_AXES).is_err(), "{bad}");
        }
    }

    #[test]
    fn summary_path_sits_next_to_report() {
        assert_eq!(
            summary_path(Path::new("out/r.csv")),
            PathBuf::from("out/r.summary.json")
        );
    }

    #[test]
    fn xray_of_scalar_is_even_in_y1() {
        let config = RunConfig::default();
        let vals = sample_values(
            SampleObject::Xray,
            "y1=-0.9:0.9:6,y2=0.1:0.1:0",
            &config,
            SampledField::Scalar,
        )
        .unwrap();
        for i in 0..vals.len() {
            let mirror = vals[vals.len() - 1 - i].1;
            assert!((vals[i].1 - mirror).abs() <= 1e-14 * vals[i].1.abs().max(1e-300), "{i}");
        }
        assert!(vals[3].1 > 0.0);
    }
}
