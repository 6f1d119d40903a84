use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlfem::assembly::{assemble, manufactured_case, write_matrix_market, write_vector, AssembleOptions, Kernel};
use nlfem::error::Error;
use nlfem::geometry::{decompose_ball, decomposition_svg, BallStrategy};
use nlfem::harness::{
    emit_csv, run_convergence, run_geometric_error, run_patch_tests, GridSequence, StudyConfig,
};
use nlfem::mesh::load_mesh_file;
use nlfem::point::Point;

/// 2D nonlocal finite-element studies: convergence tables, geometric-error
/// rates, patch tests, and system export.
#[derive(Parser)]
#[command(name = "nlfem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StudyArgs {
    /// Ball strategy: exactcaps, nocaps, approxcaps, barycenter, overlap,
    /// shifted-nocaps, barycenter-nocaps, barycenter-approxcaps
    #[arg(long = "ball")]
    ball: String,
    /// Interaction radius
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Grid sequence: `uniform:10,20,40,80`, `squared:10,20,40`, or
    /// `files:a.nlmesh,b.nlmesh`
    #[arg(long, default_value = "uniform:10,20,40,80")]
    grids: String,
    /// Triangles per approximated cap
    #[arg(long = "cap-triangles", default_value_t = 1)]
    cap_triangles: usize,
    /// Solver relative-residual tolerance
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed for sampled studies
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study; emits CSV.
    Convergence {
        #[command(flatten)]
        study: StudyArgs,
        /// Output CSV path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ball-difference-area rate study over sampled interior centers.
    GeomError {
        #[command(flatten)]
        study: StudyArgs,
        /// Number of sampled ball centers per level
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Sampler resolution (points per estimate)
        #[arg(long, default_value_t = 4_000_000)]
        resolution: usize,
    },
    /// Constant (and, for exactcaps, linear) reproduction tests.
    Patch {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Assemble a system from a mesh file and optionally export it.
    Assemble {
        /// Mesh file in the nlmesh text format
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long = "ball")]
        ball: String,
        #[arg(long = "cap-triangles", default_value_t = 1)]
        cap_triangles: usize,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// MatrixMarket output path for the stiffness matrix
        #[arg(long = "export-matrix")]
        export_matrix: Option<PathBuf>,
        /// Plain-vector output path for the right-hand side
        #[arg(long = "export-rhs")]
        export_rhs: Option<PathBuf>,
    },
    /// Debug rendering of one ball decomposition as SVG.
    BallSvg {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long = "ball")]
        ball: String,
        /// Ball center as `x,y`
        #[arg(long)]
        center: String,
        #[arg(long = "cap-triangles", default_value_t = 1)]
        cap_triangles: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grids(spec: &str) -> Result<GridSequence, Error> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("grid spec `{spec}` needs a `kind:` prefix")))?;
    match kind {
        "uniform" | "squared" => {
            let ns: Result<Vec<usize>, _> = rest.split(',').map(|s| s.trim().parse::<usize>()).collect();
            let ns = ns.map_err(|_| Error::InvalidArgument(format!("bad grid list `{rest}`")))?;
            if kind == "uniform" {
                Ok(GridSequence::Uniform(ns))
            } else {
                Ok(GridSequence::Squared(ns))
            }
        }
        "files" => Ok(GridSequence::Files(rest.split(',').map(|s| PathBuf::from(s.trim())).collect())),
        other => Err(Error::InvalidArgument(format!("unknown grid kind `{other}`"))),
    }
}

fn study_config(args: &StudyArgs) -> Result<StudyConfig, Error> {
    let strategy: BallStrategy = args.ball.parse()?;
    let grids = parse_grids(&args.grids)?;
    Ok(StudyConfig {
        grids,
        strategy,
        delta: args.delta,
        cap_triangles: args.cap_triangles,
        solver_tol: args.tol,
        threads: args.threads,
        seed: args.seed,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Convergence { study, out } => {
            let config = study_config(&study)?;
            let report = run_convergence(&config)?;
            let csv = emit_csv(&report);
            eprintln!("strategy {}, delta {}", report.strategy, report.delta);
            for (row, pct) in report.rows.iter().zip(report.time_percent()) {
                eprintln!(
                    "  h_max {:.4}  J_omega {:>6}  L2 {:.3e}  rate {}  time {:.2}% ({:.2}s)",
                    row.h_max,
                    row.j_omega,
                    row.l2_error,
                    row.rate.map(|r| format!("{r:.2}")).unwrap_or_else(|| "   -".into()),
                    pct,
                    row.assembly_seconds,
                );
            }
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::GeomError { study, samples, resolution } => {
            let config = study_config(&study)?;
            let report = run_geometric_error(&config, samples, resolution)?;
            println!("strategy {}, delta {}", report.strategy, report.delta);
            println!("h_max,sup_delta_b,standard_error");
            for row in &report.rows {
                println!("{:.6e},{:.6e},{:.6e}", row.h_max, row.sup_delta_b, row.standard_error);
            }
            match report.fitted_rate {
                Some(r) => println!("fitted rate {r:.3}"),
                None => println!("fitted rate - (exact ball)"),
            }
            Ok(())
        }
        Command::Patch { study } => {
            let config = study_config(&study)?;
            let ns = match &config.grids {
                GridSequence::Uniform(v) => v.clone(),
                _ => return Err(Error::InvalidArgument("patch tests run on uniform grids".into())),
            };
            let mut all_passed = true;
            for n in ns {
                let report = run_patch_tests(&config, n)?;
                all_passed &= report.passed;
                println!(
                    "n={n} {}: constant {:.3e}{} -> {}",
                    report.strategy,
                    report.constant_error,
                    report
                        .linear_error
                        .map(|e| format!(", linear {e:.3e}"))
                        .unwrap_or_default(),
                    if report.passed { "pass" } else { "FAIL" }
                );
            }
            if all_passed {
                Ok(())
            } else {
                Err(Error::Numerical("patch test failed".into()))
            }
        }
        Command::Assemble { mesh, ball, cap_triangles, threads, export_matrix, export_rhs } => {
            let strategy: BallStrategy = ball.parse()?;
            let mesh = load_mesh_file(&mesh)?;
            let kernel = Kernel::constant_scaled(mesh.delta);
            let data = manufactured_case();
            let opts = AssembleOptions { cap_triangles, threads };
            let system = assemble(&mesh, &kernel, &data, strategy, &opts)?;
            println!(
                "assembled {} unknowns, {} stored entries, max |A| {:.3e}",
                system.j_omega,
                system.matrix.nnz(),
                system.matrix.max_abs()
            );
            if let Some(path) = export_matrix {
                std::fs::write(path, write_matrix_market(&system.matrix))?;
            }
            if let Some(path) = export_rhs {
                std::fs::write(path, write_vector(&system.rhs))?;
            }
            Ok(())
        }
        Command::BallSvg { mesh, ball, center, cap_triangles, out } => {
            let strategy: BallStrategy = ball.parse()?;
            let mesh = load_mesh_file(&mesh)?;
            let (x, y) = center
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
                .ok_or_else(|| Error::InvalidArgument(format!("bad center `{center}`")))?;
            let decomp = decompose_ball(&mesh, Point::new(x, y), mesh.delta, strategy, cap_triangles)?;
            std::fs::write(out, decomposition_svg(&decomp, &mesh))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => ExitCode::from(2),
                Error::Numerical(_) => ExitCode::from(3),
                Error::MeshParse { .. } | Error::MeshInvalid(_) | Error::Construction(_) => ExitCode::from(4),
                _ => ExitCode::from(1),
            }
        }
    }
}
