//! Sweeps quadrature and finite-difference settings through reduced runs of
//! the suites and prints markdown tables of relative residuals and runtimes.
//!
//! cargo run --release -p igeuler-core --example convergence_study

use std::time::Instant;

use igeuler_core::config::RunConfig;
use igeuler_core::geometry::LineNH;
use igeuler_core::operators::{compile, FdSpec, LineOperator};
use igeuler_core::quadrature::QuadratureSpec;
use igeuler_core::verify::run_suite;

fn relative(config: &RunConfig, suite: &str, checks: &[&str]) -> (Vec<f64>, f64) {
    let start = Instant::now();
    let report = run_suite(suite, config).expect("suite runs");
    let rel = checks
        .iter()
        .map(|c| report.check(c).expect("check exists").relative_residual())
        .collect();
    (rel, start.elapsed().as_secs_f64())
}

fn quadrature_table() {
    println!("## Quadrature\n");
    println!("| panels/unit | order | kernel rank 1 | kernel rank 2 | w change on doubling | iq0 change on doubling | runtime (s) |");
    println!("|---|---|---|---|---|---|---|");
    for (n, g) in [(2, 16), (4, 16), (8, 16), (2, 24), (4, 24), (4, 32)] {
        let mut c = RunConfig::default();
        c.quadrature = QuadratureSpec {
            panels_per_unit: n,
            order: g,
        };
        c.suites.kernel_range.kernel_lines = 50;
        c.suites.kernel_range.range_lines = 1;
        c.suites.kernel_range.include_rank2_range = false;
        let (k, t1) = relative(&c, "kernel_range", &["kernel_rank1", "kernel_rank2"]);
        let (q, t2) = relative(&c, "quadrature_convergence", &["w", "iq0"]);
        println!(
            "| {n} | {g} | {:.1e} | {:.1e} | {:.1e} | {:.1e} | {:.1} |",
            k[0],
            k[1],
            q[0],
            q[1],
            t1 + t2
        );
    }
    println!();
}

fn single_stencil_table() {
    println!("## Single operators (order 4, one Richardson level)\n");
    println!("| h | L phi, rank 0 | L² phi, rank 1 | P(I p) | Δ_M I f = I Δf | P rotation |");
    println!("|---|---|---|---|---|---|");
    for h in [2.5e-3, 5e-3, 1e-2, 2e-2] {
        let mut c = RunConfig::default();
        c.fd = c.fd.with_steps(h, h);
        c.suites.kernel_range.kernel_lines = 1;
        c.suites.kernel_range.range_lines = 20;
        c.suites.kernel_range.include_rank2_range = false;
        c.suites.main_pde.lines = 0;
        c.suites.operator_identities.include_third_order = false;
        let (r, _) = relative(&c, "kernel_range", &["range_rank0", "range_rank1"]);
        let (s, _) = relative(&c, "main_pde", &["p_of_scalar_xray"]);
        let (o, _) = relative(
            &c,
            "operator_identities",
            &["laplace_commutes_with_xray", "rotation_tilted"],
        );
        println!(
            "| {h:e} | {:.1e} | {:.1e} | {:.1e} | {:.1e} | {:.1e} |",
            r[0], r[1], s[0], o[0], o[1]
        );
    }
    println!();
}

fn nested_table() {
    println!("## Nested powers (P² w + 4 Δ_M w and L³ phi)\n");
    println!("| order | Richardson | h | stencil nodes for P² + 4 Δ_M | main PDE | P I(v⊗v) - 2 Δ_M w | L³ phi, rank 2 | runtime (s) |");
    println!("|---|---|---|---|---|---|---|---|");
    let line = LineNH::new(0.1, -0.2, 0.3, 0.4);
    for (order, richardson) in [(2u32, 1u32), (4, 1), (2, 2)] {
        for h in [2.5e-3, 5e-3, 1e-2, 2e-2] {
            let mut c = RunConfig::default();
            c.nested_fd = FdSpec {
                order,
                richardson,
                ..FdSpec::default()
            }
            .with_steps(h, h);
            c.suites.main_pde.lines = 4;
            c.suites.main_pde.scalar_lines = 0;
            c.suites.kernel_range.kernel_lines = 1;
            c.suites.kernel_range.range_lines = 1;
            c.suites.kernel_range.rank2_range_lines = 5;
            let expr = LineOperator::Invariant.power(2).plus(4.0, LineOperator::Laplace.expr());
            let nodes = compile(&expr, &line, &c.nested_fd).expect("stencil compiles").len();
            let (m, t) = relative(&c, "main_pde", &["p2w_plus_4lap_w", "p_ivv_minus_2lap_w"]);
            let (r, _) = relative(&c, "kernel_range", &["range_rank2"]);
            println!(
                "| {order} | {richardson} | {h:e} | {nodes} | {:.1e} | {:.1e} | {:.1e} | {t:.1} |",
                m[0], m[1], r[0]
            );
        }
    }
    println!();
}

fn main() {
    quadrature_table();
    single_stencil_table();
    nested_table();
}
