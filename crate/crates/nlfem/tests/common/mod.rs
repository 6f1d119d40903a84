//! Shared test oracles, independent of the implementation paths they check:
//! analytic monomial integrals over triangles via Green's theorem, polar
//! adaptive integration over balls, and stratified-sampling area estimates
//! backed only by point location.

#![allow(dead_code)]

use nlfem::mesh::Mesh;
use nlfem::point::{Point, Triangle};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exact integral of `x^a y^b` over an arbitrary triangle, via Green's
/// theorem: the area integral becomes edge integrals of
/// `x^{a+1} y^b / (a+1) dy`, expanded binomially and integrated termwise.
/// Computed in exact rational arithmetic (f64 coordinates are dyadic
/// rationals), so the only rounding is the final conversion.
pub fn monomial_integral_over_triangle(a: u32, b: u32, tri: &Triangle) -> f64 {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{ToPrimitive, Zero};

    let rat = |v: f64| BigRational::from_float(v).expect("finite coordinate");
    let int = |v: u64| BigRational::from_integer(BigInt::from(v));
    let binom = |n: u32, k: u32| -> BigRational {
        let mut v = BigRational::from_integer(BigInt::from(1));
        for i in 0..k {
            v = v * int((n - i) as u64) / int((i + 1) as u64);
        }
        v
    };
    let pow = |base: &BigRational, e: u32| -> BigRational {
        let mut v = BigRational::from_integer(BigInt::from(1));
        for _ in 0..e {
            v = v * base;
        }
        v
    };

    let mut total = BigRational::zero();
    for i in 0..3 {
        let p = tri.v[i];
        let q = tri.v[(i + 1) % 3];
        let (px, py) = (rat(p.x), rat(p.y));
        let (dx, dy) = (rat(q.x - p.x), rat(q.y - p.y));
        if dy.is_zero() {
            continue;
        }
        // integral over t in [0,1] of (p.x + t dx)^(a+1) (p.y + t dy)^b
        let mut edge = BigRational::zero();
        for m in 0..=(a + 1) {
            for n in 0..=b {
                let coeff = binom(a + 1, m)
                    * pow(&px, a + 1 - m)
                    * pow(&dx, m)
                    * binom(b, n)
                    * pow(&py, b - n)
                    * pow(&dy, n);
                edge += coeff / int((m + n + 1) as u64);
            }
        }
        total += edge * dy;
    }
    let oriented = total / int((a + 1) as u64);
    // Green's theorem is orientation-signed; report the integral over the
    // triangle as a set.
    let signed = if tri.signed_area() < 0.0 { -oriented } else { oriented };
    signed.to_f64().expect("rational fits in f64")
}

/// Adaptive Simpson on one dimension with a forced minimum subdivision
/// depth, so piecewise or oscillatory integrands cannot fool the coarse
/// error estimate into stopping early.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    adaptive_simpson_min(f, a, b, tol, depth, 0)
}

pub fn adaptive_simpson_min(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32, min_depth: u32) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
        force: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        if depth == 0 || (force == 0 && (left + right - whole).abs() <= 15.0 * tol) {
            left + right + (left + right - whole) / 15.0
        } else {
            let next_force = force.saturating_sub(1);
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, next_force)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, next_force)
        }
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth, min_depth)
}

/// Adaptive polar integration of `f` over the disc of radius `delta` at `x`:
/// nested adaptive Simpson in angle and radius. Independent of every
/// decomposition code path; only needs pointwise evaluation.
pub fn polar_ball_integral(x: Point, delta: f64, f: &dyn Fn(Point) -> f64, tol: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let outer = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let radial = |r: f64| r * f(Point::new(x.x + r * c, x.y + r * s));
        adaptive_simpson_min(&radial, 0.0, delta, tol * 0.01 / tau, 30, 5)
    };
    adaptive_simpson_min(&outer, 0.0, tau, tol, 24, 8)
}

/// Stratified jittered-grid estimate of the area of `{p : indicator(p)}`
/// inside the box `[x - r, x + r]^2`, with a conservative standard error.
pub fn sample_area(
    x: Point,
    r: f64,
    resolution: usize,
    seed: u64,
    indicator: &mut dyn FnMut(Point) -> bool,
) -> (f64, f64) {
    let m = (resolution as f64).sqrt().ceil() as usize;
    let cell = 2.0 * r / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits: u64 = 0;
    for iy in 0..m {
        for ix in 0..m {
            let p = Point::new(
                x.x - r + (ix as f64 + rng.gen::<f64>()) * cell,
                x.y - r + (iy as f64 + rng.gen::<f64>()) * cell,
            );
            if indicator(p) {
                hits += 1;
            }
        }
    }
    let total = (m * m) as f64;
    let p_hat = hits as f64 / total;
    let box_area = 4.0 * r * r;
    (box_area * p_hat, box_area * (p_hat * (1.0 - p_hat) / total).sqrt())
}

/// Sampling estimate of `|B_delta(x) ∩ meshed region|` using only point
/// location.
pub fn sample_ball_region_area(mesh: &Mesh, x: Point, delta: f64, resolution: usize, seed: u64) -> (f64, f64) {
    let mut buf = Vec::new();
    sample_area(x, delta * 1.0001, resolution, seed, &mut |p| {
        p.dist(x) <= delta && mesh.locate_with(p, &mut buf).is_some()
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(p, q)| (p - mx) * (q - my)).sum();
    let var: f64 = lx.iter().map(|p| (p - mx) * (p - mx)).sum();
    cov / var
}
