//! Assembly checks against independent oracles: adaptive polar integration
//! of the inner integrals, sampling of the absorption term, algebraic
//! invariants of the assembled system, and export formats.

mod common;

use nlfem::assembly::{
    absorption_integral, assemble, energy_norm_diff, hat_value, inner_integral_pair, manufactured_case,
    manufactured_solution, write_matrix_market, write_vector, AssembleOptions, Kernel, ProblemData,
};
use nlfem::geometry::{decompose_ball, BallStrategy};
use nlfem::harness::l2_error;
use nlfem::mesh::{build_uniform_grid, Region};
use nlfem::point::Point;
use nlfem::solver::solve;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CLI_STRATEGIES: [BallStrategy; 8] = [
    BallStrategy::ExactCaps,
    BallStrategy::NoCaps,
    BallStrategy::ApproxCaps,
    BallStrategy::Barycenter,
    BallStrategy::Overlap,
    BallStrategy::ShiftedNoCaps,
    BallStrategy::BarycenterNoCaps,
    BallStrategy::BarycenterApproxCaps,
];

#[test]
fn inner_pair_integral_matches_polar_adaptive_integration() {
    // In the delta > h regime the caps sit outside the hat supports, so the
    // composite rule (polynomial-exact on triangles, affine-exact on caps)
    // reproduces the exact inner integral; the adaptive oracle confirms it.
    let delta = 0.1;
    let mesh = build_uniform_grid(40, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        // Interior point, whole ball inside the domain.
        let x = Point::new(0.3 + 0.4 * rng.gen::<f64>(), 0.3 + 0.4 * rng.gen::<f64>());
        let k = mesh.locate(x).unwrap();
        let decomp = decompose_ball(&mesh, x, delta, BallStrategy::ExactCaps, 1).unwrap();
        let nodes = mesh.elements[k].vertex_indices;
        for (j, jp) in [(nodes[0], nodes[0]), (nodes[2], nodes[1])] {
            let got = inner_integral_pair(&mesh, &kernel, &decomp, k, j, jp);
            let phix_j = hat_value(&mesh, k, j, x);
            let phix_jp = hat_value(&mesh, k, jp, x);
            let buf = std::cell::RefCell::new(Vec::new());
            let integrand = |y: Point| {
                let Some(ke) = mesh.locate_with(y, &mut buf.borrow_mut()) else { return 0.0 };
                let dj = hat_value(&mesh, ke, j, y) - phix_j;
                let djp = hat_value(&mesh, ke, jp, y) - phix_jp;
                dj * djp * kernel.psi(x, y)
            };
            let want = common::polar_ball_integral(x, delta, &integrand, 3e-10);
            assert!(
                (got - want).abs() <= 1e-8,
                "pair ({j},{jp}): rule {got} vs adaptive {want}"
            );
        }
    }
}

#[test]
fn absorption_matches_sampling_near_boundary() {
    let delta = 0.1;
    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant(delta, 2.5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..5 {
        let x = Point::new(rng.gen::<f64>(), 0.02 + 0.06 * rng.gen::<f64>());
        let decomp = decompose_ball(&mesh, x, delta, BallStrategy::ExactCaps, 1).unwrap();
        let got = absorption_integral(&mesh, &kernel, &decomp);
        let mut buf = Vec::new();
        let (area, se) = common::sample_area(x, delta * 1.001, 4_000_000, 55 + i, &mut |p| {
            p.dist(x) <= delta
                && mesh
                    .locate_with(p, &mut buf)
                    .map_or(false, |k| mesh.elements[k].region == Region::OmegaI)
        });
        assert!(
            (got - 2.5 * area).abs() <= 3.0 * 2.5 * se.max(1e-9),
            "absorption {got} vs sampled {} (se {se})",
            2.5 * area
        );
    }
}

#[test]
fn constant_kernel_inner_mass_is_ball_area() {
    // With the integrand replaced by 1, the composite rule reproduces the
    // cell areas exactly; for an interior exact ball that is pi delta^2.
    let delta = 0.1;
    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant(delta, 1.0);
    let x = Point::new(0.52, 0.48);
    let decomp = decompose_ball(&mesh, x, delta, BallStrategy::ExactCaps, 1).unwrap();
    let interior = absorption_integral(&mesh, &kernel, &decomp); // zero here
    assert_eq!(interior, 0.0);
    let mass = decomp.total_area();
    assert!((mass - std::f64::consts::PI * delta * delta).abs() <= 1e-10);
}

#[test]
fn assembled_systems_are_symmetric_spd_and_sparse() {
    let delta = 0.1;
    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let data = manufactured_case();
    let bound = delta + 2.0 * mesh.h_max + 1e-9;
    for strategy in CLI_STRATEGIES {
        let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions::default()).unwrap();
        // Symmetry.
        let asym = sys.matrix.max_asymmetry();
        assert!(asym <= 1e-12 * sys.matrix.max_abs(), "{strategy:?}: asymmetry {asym}");
        // Sparsity support bound.
        for r in 0..sys.matrix.n {
            let pr = mesh.vertex(mesh.order_inv[r]);
            for i in sys.matrix.row_ptr[r]..sys.matrix.row_ptr[r + 1] {
                if sys.matrix.values[i] != 0.0 {
                    let c = sys.matrix.col_idx[i] as usize;
                    let pc = mesh.vertex(mesh.order_inv[c]);
                    assert!(pr.dist(pc) <= bound, "{strategy:?}: entry at distance {}", pr.dist(pc));
                }
            }
        }
        // SPD: CG on a deterministic right-hand side converges without
        // negative curvature.
        let mut probe = sys.clone();
        probe.rhs = (0..probe.matrix.n).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.4).collect();
        let rep = solve(&probe, 1e-10, 50_000).unwrap();
        assert!(rep.relative_residual <= 1e-10, "{strategy:?}");
    }
}

#[test]
fn nonzero_count_scales_with_interaction_area() {
    let delta = 0.1;
    let data = manufactured_case();
    let kernel = Kernel::constant_scaled(delta);
    let mut densities = Vec::new();
    for n in [20usize, 40] {
        let mesh = build_uniform_grid(n, delta).unwrap();
        let sys = assemble(&mesh, &kernel, &data, BallStrategy::NoCaps, &AssembleOptions::default()).unwrap();
        let delta_over_h = delta / (1.0 / n as f64);
        densities.push(sys.matrix.nnz() as f64 / (sys.j_omega as f64 * delta_over_h * delta_over_h));
    }
    let ratio = densities[0] / densities[1];
    assert!(
        (0.5..=2.0).contains(&ratio),
        "nnz density should track J_omega (delta/h)^2: {densities:?}"
    );
}

#[test]
fn assembly_bitwise_deterministic_across_worker_counts() {
    let delta = 0.1;
    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let data = manufactured_case();
    for strategy in [BallStrategy::ExactCaps, BallStrategy::Barycenter, BallStrategy::BarycenterNoCaps] {
        let reference = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions { cap_triangles: 1, threads: 1 })
            .unwrap();
        for threads in [2usize, 8] {
            let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions { cap_triangles: 1, threads })
                .unwrap();
            assert_eq!(sys.matrix.col_idx, reference.matrix.col_idx, "{strategy:?}");
            let same_vals = sys
                .matrix
                .values
                .iter()
                .zip(&reference.matrix.values)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            let same_rhs = sys.rhs.iter().zip(&reference.rhs).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_vals && same_rhs, "{strategy:?} with {threads} workers");
        }
    }
}

#[test]
fn distant_constraint_data_does_not_reach_the_system() {
    // Perturbing g only at layer nodes farther than delta + 2 h_max from the
    // boundary leaves matrix and right-hand side unchanged.
    let delta = 0.5;
    let mesh = build_uniform_grid(16, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let bound = delta + 2.0 * mesh.h_max;
    let far_nodes: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| {
            let p = mesh.vertex(v);
            let dx = (-p.x).max(p.x - 1.0).max(0.0);
            let dy = (-p.y).max(p.y - 1.0).max(0.0);
            dx.hypot(dy) > bound
        })
        .collect();
    assert!(!far_nodes.is_empty(), "test configuration must have out-of-reach corner nodes");

    let base = ProblemData::new(|_| 0.0, |p| p.x + p.y);
    let far = far_nodes.clone();
    let mesh_vertices: Vec<Point> = (0..mesh.num_vertices()).map(|v| mesh.vertex(v)).collect();
    let perturbed = ProblemData::new(
        |_| 0.0,
        move |p| {
            let spiked = far
                .iter()
                .any(|&v| mesh_vertices[v].dist(p) < 1e-12);
            p.x + p.y + if spiked { 1000.0 } else { 0.0 }
        },
    );

    let a = assemble(&mesh, &kernel, &base, BallStrategy::NoCaps, &AssembleOptions::default()).unwrap();
    let b = assemble(&mesh, &kernel, &perturbed, BallStrategy::NoCaps, &AssembleOptions::default()).unwrap();
    assert_eq!(a.matrix.values, b.matrix.values);
    assert_eq!(a.rhs, b.rhs);
}

#[test]
fn constant_and_linear_patch_tests() {
    let delta = 0.1;
    for n in [10usize, 20] {
        let mesh = build_uniform_grid(n, delta).unwrap();
        let kernel = Kernel::constant_scaled(delta);
        for strategy in CLI_STRATEGIES {
            let data = ProblemData::new(|_| 0.0, |_| 1.0);
            let sys = assemble(&mesh, &kernel, &data, strategy, &AssembleOptions::default()).unwrap();
            let rep = solve(&sys, 1e-13, 100_000).unwrap();
            let worst = rep.solution.iter().map(|u| (u - 1.0).abs()).fold(0.0f64, f64::max);
            assert!(worst <= 1e-9, "{strategy:?} n={n}: constant patch error {worst}");
        }
        // Linear reproduction for the exact ball.
        let lin = |p: Point| 2.0 + 3.0 * p.x - p.y;
        let data = ProblemData::new(|_| 0.0, lin);
        let sys = assemble(&mesh, &kernel, &data, BallStrategy::ExactCaps, &AssembleOptions::default()).unwrap();
        let rep = solve(&sys, 1e-13, 100_000).unwrap();
        let full = sys.full_solution(&mesh, &rep.solution);
        let err = l2_error(&mesh, &full, lin);
        assert!(err <= 1e-8, "n={n}: linear patch error {err}");
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    let delta = 0.1;
    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let data = ProblemData::new(|_| 0.0, |_| 0.0);
    let sys = assemble(&mesh, &kernel, &data, BallStrategy::ApproxCaps, &AssembleOptions::default()).unwrap();
    assert!(sys.rhs.iter().all(|&v| v == 0.0));
    let rep = solve(&sys, 1e-12, 10_000).unwrap();
    assert!(rep.solution.iter().all(|&v| v == 0.0));
}

#[test]
fn ball_first_moment_vanishes_then_linear_interpolant_solves() {
    // The moment identity behind linear reproduction, checked numerically,
    // then the end-to-end solve against the interpolant.
    let delta = 0.1;
    let x = Point::new(0.47, 0.61);
    let mx = common::polar_ball_integral(x, delta, &|y| y.x - x.x, 1e-12);
    let my = common::polar_ball_integral(x, delta, &|y| y.y - x.y, 1e-12);
    assert!(mx.abs() < 1e-10 && my.abs() < 1e-10);

    let mesh = build_uniform_grid(10, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let lin = |p: Point| 1.0 - 0.5 * p.x + 2.0 * p.y;
    let data = ProblemData::new(|_| 0.0, lin);
    let sys = assemble(&mesh, &kernel, &data, BallStrategy::ExactCaps, &AssembleOptions::default()).unwrap();
    let rep = solve(&sys, 1e-13, 100_000).unwrap();
    for r in 0..sys.j_omega {
        let want = lin(mesh.vertex(mesh.order_inv[r]));
        assert!((rep.solution[r] - want).abs() <= 1e-9);
    }
}

#[test]
fn manufactured_error_is_second_order_and_in_the_published_ballpark() {
    let delta = 0.1;
    let kernel = Kernel::constant_scaled(delta);
    let data = manufactured_case();
    let mut errors = Vec::new();
    for n in [10usize, 20] {
        let mesh = build_uniform_grid(n, delta).unwrap();
        let sys = assemble(&mesh, &kernel, &data, BallStrategy::ExactCaps, &AssembleOptions::default()).unwrap();
        let rep = solve(&sys, 1e-12, 100_000).unwrap();
        let full = sys.full_solution(&mesh, &rep.solution);
        errors.push(l2_error(&mesh, &full, manufactured_solution));
    }
    // Published reference value for this configuration is 9.01e-3; this
    // implementation's exact-cap weights land well below it (the reference
    // tables carry a half-weight cap treatment), so only the upper bound is
    // asserted here alongside the convergence order.
    assert!(errors[0] < 9.01e-3);
    let rate = (errors[0] / errors[1]).log2();
    assert!(rate > 1.8, "rate {rate}");
}

#[test]
fn energy_norm_and_export_formats() {
    let delta = 0.1;
    let mesh = build_uniform_grid(6, delta).unwrap();
    let kernel = Kernel::constant_scaled(delta);
    let data = manufactured_case();
    let sys = assemble(&mesh, &kernel, &data, BallStrategy::NoCaps, &AssembleOptions::default()).unwrap();

    let u1 = vec![0.0; sys.j_omega];
    assert_eq!(energy_norm_diff(&sys, &u1, &u1).unwrap(), 0.0);

    let mm = write_matrix_market(&sys.matrix);
    let mut lines = mm.lines();
    assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix coordinate real symmetric");
    let sizes: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(sizes[0], sys.j_omega);
    assert_eq!(sizes[1], sys.j_omega);
    let mut count = 0;
    let mut diag_sum = 0.0;
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (r, c, v): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        assert!(r >= 1 && c >= 1 && c <= r, "lower triangle, 1-based");
        assert!((sys.matrix.get(r - 1, c - 1) - v).abs() <= 1e-15 * v.abs());
        if r == c {
            diag_sum += v;
        }
        count += 1;
    }
    assert_eq!(count, sizes[2]);
    assert!(diag_sum > 0.0);

    let vec_text = write_vector(&sys.rhs);
    let parsed: Vec<f64> = vec_text.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(parsed.len(), sys.rhs.len());
    assert_eq!(parsed, sys.rhs);
}
