//! Study driver: convergence tables per ball strategy, geometric-error rate
//! studies, and patch tests, with CSV output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{assemble, AssembleOptions, Kernel, LinearSystem, ProblemData};
use crate::error::{Error, Result};
use crate::geometry::{ball_difference_area, BallStrategy};
use crate::mesh::{self, Mesh, Region};
use crate::point::Point;
use crate::quadrature::{map_to_cell_into, rule, MappedRule, RuleKind};
use crate::solver::{solve, SolveReport};

/// Grid sequence of a study.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSequence {
    Uniform(Vec<usize>),
    Squared(Vec<usize>),
    Files(Vec<PathBuf>),
}

impl GridSequence {
    pub fn len(&self) -> usize {
        match self {
            GridSequence::Uniform(v) | GridSequence::Squared(v) => v.len(),
            GridSequence::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn build_level(&self, level: usize, delta: f64) -> Result<Mesh> {
        match self {
            GridSequence::Uniform(v) => mesh::build_uniform_grid(v[level], delta),
            GridSequence::Squared(v) => mesh::build_squared_grid(v[level], delta),
            GridSequence::Files(v) => mesh::load_mesh(&v[level], delta),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub grids: GridSequence,
    pub strategy: BallStrategy,
    pub delta: f64,
    pub cap_triangles: usize,
    pub solver_tol: f64,
    pub threads: usize,
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(grids: GridSequence, strategy: BallStrategy, delta: f64) -> Self {
        StudyConfig {
            grids,
            strategy,
            delta,
            cap_triangles: 1,
            solver_tol: 1e-12,
            threads: 0,
            seed: 7,
        }
    }
}

/// One refinement level of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h_min: f64,
    pub h_max: f64,
    pub j_omega: usize,
    pub l2_error: f64,
    /// `log(e_prev/e) / log(h_prev/h)` with `h = h_max`; `None` on the first
    /// row.
    pub rate: Option<f64>,
    pub assembly_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub strategy: BallStrategy,
    pub delta: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// Assembly times normalized by the largest one, in percent.
    pub fn time_percent(&self) -> Vec<f64> {
        let max = self.rows.iter().map(|r| r.assembly_seconds).fold(0.0f64, f64::max);
        if max == 0.0 {
            return vec![0.0; self.rows.len()];
        }
        self.rows.iter().map(|r| 100.0 * r.assembly_seconds / max).collect()
    }
}

/// Recomputes the rate column from the error and h columns.
pub fn rates_from_columns(h: &[f64], e: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; h.len()];
    for i in 1..h.len() {
        out[i] = Some((e[i - 1] / e[i]).ln() / (h[i - 1] / h[i]).ln());
    }
    out
}

/// L2 error of a nodal solution against an exact function, integrated over
/// the domain elements with the degree-5 rule.
pub fn l2_error(mesh: &Mesh, full_solution: &[f64], exact: impl Fn(Point) -> f64) -> f64 {
    let r = rule(RuleKind::ErrorRule);
    let mut mapped = MappedRule { points: Vec::new(), weights: Vec::new() };
    let mut total = 0.0;
    for k in 0..mesh.num_elements() {
        if mesh.elements[k].region != Region::Omega {
            continue;
        }
        let tri = mesh.triangle(k);
        let ids = mesh.elements[k].vertex_indices;
        map_to_cell_into(&r, &tri, &mut mapped);
        for (p, w) in mapped.points.iter().zip(&mapped.weights) {
            let l = tri.barycentric(*p);
            let uh = l[0] * full_solution[ids[0]] + l[1] * full_solution[ids[1]] + l[2] * full_solution[ids[2]];
            let d = exact(*p) - uh;
            total += w * d * d;
        }
    }
    total.sqrt()
}

/// Result of one assemble-and-solve pass.
pub struct LevelSolution {
    pub mesh: Mesh,
    pub system: LinearSystem,
    pub report: SolveReport,
    pub assembly_seconds: f64,
}

pub fn solve_level(
    mesh: Mesh,
    kernel: &Kernel,
    data: &ProblemData,
    strategy: BallStrategy,
    cap_triangles: usize,
    solver_tol: f64,
    threads: usize,
) -> Result<LevelSolution> {
    let opts = AssembleOptions { cap_triangles, threads };
    let t0 = Instant::now();
    let system = assemble(&mesh, kernel, data, strategy, &opts)?;
    let assembly_seconds = t0.elapsed().as_secs_f64();
    let report = solve(&system, solver_tol, 200_000)?;
    Ok(LevelSolution { mesh, system, report, assembly_seconds })
}

/// Runs a manufactured-solution convergence study: per level build/load the
/// mesh, assemble, solve, and measure the L2 error on the domain.
pub fn run_convergence(config: &StudyConfig) -> Result<ConvergenceReport> {
    if config.grids.len() < 2 {
        return Err(Error::InvalidArgument("a convergence study needs at least two grid levels".into()));
    }
    let kernel = Kernel::constant_scaled(config.delta);
    let data = crate::assembly::manufactured_case();
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in 0..config.grids.len() {
        let mesh = config.grids.build_level(level, config.delta)?;
        let stats = mesh.statistics();
        let sol = solve_level(
            mesh,
            &kernel,
            &data,
            config.strategy,
            config.cap_triangles,
            config.solver_tol,
            config.threads,
        )?;
        let full = sol.system.full_solution(&sol.mesh, &sol.report.solution);
        let err = l2_error(&sol.mesh, &full, crate::assembly::manufactured_solution);
        let rate = rows
            .last()
            .map(|prev: &ConvergenceRow| (prev.l2_error / err).ln() / (prev.h_max / stats.h_max).ln());
        rows.push(ConvergenceRow {
            h_min: stats.h_min,
            h_max: stats.h_max,
            j_omega: stats.j_omega,
            l2_error: err,
            rate,
            assembly_seconds: sol.assembly_seconds,
        });
    }
    Ok(ConvergenceReport { strategy: config.strategy, delta: config.delta, rows })
}

/// One level of a geometric-error study.
#[derive(Clone, Debug)]
pub struct GeomErrorRow {
    pub h_max: f64,
    /// Largest sampled symmetric-difference area over the ball centers.
    pub sup_delta_b: f64,
    /// Sampler standard error at the supremum.
    pub standard_error: f64,
}

#[derive(Clone, Debug)]
pub struct GeomErrorReport {
    pub strategy: BallStrategy,
    pub delta: f64,
    pub rows: Vec<GeomErrorRow>,
    /// Least-squares slope of `log sup|dB|` against `log h_max`; absent for
    /// the exact ball whose difference is identically zero.
    pub fitted_rate: Option<f64>,
}

/// Estimates `sup_x |symmetric difference|` over sampled interior centers on
/// each refinement level and fits the decay rate.
pub fn run_geometric_error(config: &StudyConfig, samples: usize, resolution: usize) -> Result<GeomErrorReport> {
    if config.grids.len() < 3 && config.strategy != BallStrategy::ExactCaps {
        return Err(Error::InvalidArgument("a rate study needs at least three refinement levels".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sampled center".into()));
    }
    let mut rows = Vec::new();
    for level in 0..config.grids.len() {
        let mesh = config.grids.build_level(level, config.delta)?;
        // Interior centers, reproducibly seeded; the same point set is used
        // for every strategy at a given level.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (level as u64) << 8);
        let centers: Vec<Point> = (0..samples)
            .map(|_| Point::new(rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let estimates: Vec<(f64, f64)> = centers
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                ball_difference_area(
                    &mesh,
                    *x,
                    config.delta,
                    config.strategy,
                    resolution,
                    config.cap_triangles,
                    config.seed ^ ((level as u64) << 32) ^ i as u64,
                )
                .expect("sampling resolution validated by caller")
            })
            .collect();
        let (sup, se) = estimates
            .into_iter()
            .fold((0.0f64, 0.0f64), |acc, (est, se)| if est > acc.0 { (est, se) } else { acc });
        rows.push(GeomErrorRow { h_max: mesh.h_max, sup_delta_b: sup, standard_error: se });
    }
    let fitted_rate = if config.strategy == BallStrategy::ExactCaps {
        None
    } else {
        Some(fit_log_slope(
            &rows.iter().map(|r| r.h_max).collect::<Vec<_>>(),
            &rows.iter().map(|r| r.sup_delta_b.max(f64::MIN_POSITIVE)).collect::<Vec<_>>(),
        ))
    };
    Ok(GeomErrorReport { strategy: config.strategy, delta: config.delta, rows, fitted_rate })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[derive(Clone, Debug)]
pub struct PatchTestReport {
    pub strategy: BallStrategy,
    /// Max nodal deviation from 1 for the constant test.
    pub constant_error: f64,
    /// L2 error of the linear test (run for the exact ball).
    pub linear_error: Option<f64>,
    pub passed: bool,
}

/// Constant-reproduction test for any strategy, plus linear reproduction for
/// the exact ball.
pub fn run_patch_tests(config: &StudyConfig, grid_n: usize) -> Result<PatchTestReport> {
    let mesh = mesh::build_uniform_grid(grid_n, config.delta)?;
    let kernel = Kernel::constant_scaled(config.delta);

    let data = ProblemData::new(|_| 0.0, |_| 1.0);
    let sol = solve_level(mesh, &kernel, &data, config.strategy, config.cap_triangles, config.solver_tol, config.threads)?;
    let constant_error = sol
        .report
        .solution
        .iter()
        .map(|u| (u - 1.0).abs())
        .fold(0.0f64, f64::max);

    let linear_error = if config.strategy == BallStrategy::ExactCaps {
        let lin = |p: Point| 2.0 + 3.0 * p.x - p.y;
        let mesh = mesh::build_uniform_grid(grid_n, config.delta)?;
        let data = ProblemData::new(|_| 0.0, lin);
        let sol =
            solve_level(mesh, &kernel, &data, config.strategy, config.cap_triangles, config.solver_tol, config.threads)?;
        let full = sol.system.full_solution(&sol.mesh, &sol.report.solution);
        Some(l2_error(&sol.mesh, &full, lin))
    } else {
        None
    };

    let passed = constant_error <= 1e-9 && linear_error.map_or(true, |e| e <= 1e-8);
    Ok(PatchTestReport { strategy: config.strategy, constant_error, linear_error, passed })
}

/// CSV with `# key=value` metadata comments and the column layout
/// `h_min,h_max,J_omega,l2_error,rate,assembly_seconds`.
pub fn emit_csv(report: &ConvergenceReport) -> String {
    let mut s = String::new();
    writeln!(s, "# strategy={}", report.strategy).unwrap();
    writeln!(s, "# delta={:.17e}", report.delta).unwrap();
    s.push_str("h_min,h_max,J_omega,l2_error,rate,assembly_seconds\n");
    for r in &report.rows {
        let rate = r.rate.map(|v| format!("{:.17e}", v)).unwrap_or_default();
        writeln!(
            s,
            "{:.17e},{:.17e},{},{:.17e},{},{:.17e}",
            r.h_min, r.h_max, r.j_omega, r.l2_error, rate, r.assembly_seconds
        )
        .unwrap();
    }
    s
}

pub fn parse_csv(text: &str) -> Result<ConvergenceReport> {
    let mut strategy = None;
    let mut delta = None;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("strategy=") {
                strategy = Some(v.parse::<BallStrategy>()?);
            } else if let Some(v) = rest.strip_prefix("delta=") {
                delta = v.parse::<f64>().ok();
            }
            continue;
        }
        if !saw_header {
            if line != "h_min,h_max,J_omega,l2_error,rate,assembly_seconds" {
                return Err(Error::InvalidArgument(format!("unexpected CSV header `{line}`")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidArgument(format!("CSV row with {} fields", fields.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad CSV number `{s}`")))
        };
        rows.push(ConvergenceRow {
            h_min: parse(fields[0])?,
            h_max: parse(fields[1])?,
            j_omega: fields[2]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad CSV count `{}`", fields[2])))?,
            l2_error: parse(fields[3])?,
            rate: if fields[4].is_empty() { None } else { Some(parse(fields[4])?) },
            assembly_seconds: parse(fields[5])?,
        });
    }
    Ok(ConvergenceReport {
        strategy: strategy.ok_or_else(|| Error::InvalidArgument("CSV missing strategy metadata".into()))?,
        delta: delta.ok_or_else(|| Error::InvalidArgument("CSV missing delta metadata".into()))?,
        rows,
    })
}
