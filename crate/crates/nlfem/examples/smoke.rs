// Quick end-to-end smoke run used during development; not part of the test
// suite.

use nlfem::assembly::{assemble, manufactured_case, manufactured_solution, AssembleOptions, Kernel, ProblemData};
use nlfem::geometry::BallStrategy;
use nlfem::mesh::build_uniform_grid;
use nlfem::point::Point;
use nlfem::quadrature::{map_to_cell_into, rule, MappedRule, RuleKind};
use nlfem::solver::solve;

fn l2_error_on_omega(mesh: &nlfem::mesh::Mesh, full: &[f64], exact: impl Fn(Point) -> f64) -> f64 {
    let r = rule(RuleKind::ErrorRule);
    let mut mapped = MappedRule { points: Vec::new(), weights: Vec::new() };
    let mut total = 0.0;
    for k in 0..mesh.num_elements() {
        if mesh.elements[k].region != nlfem::mesh::Region::Omega {
            continue;
        }
        let tri = mesh.triangle(k);
        let ids = mesh.elements[k].vertex_indices;
        map_to_cell_into(&r, &tri, &mut mapped);
        for (p, w) in mapped.points.iter().zip(&mapped.weights) {
            let l = tri.barycentric(*p);
            let uh = l[0] * full[ids[0]] + l[1] * full[ids[1]] + l[2] * full[ids[2]];
            let d = exact(*p) - uh;
            total += w * d * d;
        }
    }
    total.sqrt()
}

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let strategy: BallStrategy = std::env::args()
        .nth(2)
        .unwrap_or_else(|| "exactcaps".into())
        .parse()
        .unwrap();
    let delta = 0.1;
    let mesh = build_uniform_grid(n, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);

    // Constant patch test
    let data = ProblemData::new(|_| 0.0, |_| 1.0);
    let t0 = std::time::Instant::now();
    let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions::default()).unwrap();
    let t_asm = t0.elapsed().as_secs_f64();
    let rep = solve(&sys, 1e-12, 50_000).unwrap();
    let worst = rep.solution.iter().map(|u| (u - 1.0).abs()).fold(0.0f64, f64::max);
    println!("n={n} {strategy}: constant patch max error {worst:.3e} (assembly {t_asm:.2}s, {} iters)", rep.iterations);

    // Linear patch test
    let lin = |p: Point| 2.0 + 3.0 * p.x - p.y;
    let data = ProblemData::new(|_| 0.0, lin);
    let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions::default()).unwrap();
    let rep = solve(&sys, 1e-12, 50_000).unwrap();
    let full = sys.full_solution(&mesh, &rep.solution);
    let lin_err = l2_error_on_omega(&mesh, &full, lin);
    println!("n={n} {strategy}: linear patch L2 error {lin_err:.3e}");

    // Residual of the exact nodal interpolant against the assembled system.
    let exact_interior: Vec<f64> = (0..mesh.j_omega).map(|r| lin(mesh.vertex(mesh.order_inv[r]))).collect();
    let mut au = vec![0.0; mesh.j_omega];
    sys.matrix.matvec(&exact_interior, &mut au);
    let mut worst = (0.0f64, 0usize);
    for r in 0..mesh.j_omega {
        let res = (au[r] - sys.rhs[r]).abs();
        if res > worst.0 {
            worst = (res, r);
        }
    }
    let p = mesh.vertex(mesh.order_inv[worst.1]);
    let bd = p.x.min(1.0 - p.x).min(p.y).min(1.0 - p.y);
    println!(
        "n={n} {strategy}: linear-interpolant residual max {:.3e} at ({:.3},{:.3}) bdist {:.3}",
        worst.0, p.x, p.y, bd
    );

    // Manufactured solution
    let data = manufactured_case();
    let t0 = std::time::Instant::now();
    let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions::default()).unwrap();
    let t_asm = t0.elapsed().as_secs_f64();
    let rep = solve(&sys, 1e-12, 50_000).unwrap();
    let full = sys.full_solution(&mesh, &rep.solution);
    let err = l2_error_on_omega(&mesh, &full, manufactured_solution);
    println!("n={n} {strategy}: manufactured L2 error {err:.6e} (assembly {t_asm:.2}s, {} iters)", rep.iterations);
}
