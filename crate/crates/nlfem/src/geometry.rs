//! Intersections of interaction balls with mesh elements and the
//! quadrature-cell decompositions of exact and approximate balls.
//!
//! A ball is decomposed per element into whole-element triangles, fan
//! triangles of the convex ball/element intersection polygon, and circular
//! caps between a cord and the arc. The approximate-ball variants either
//! drop the caps, replace them by inscribed triangles, select whole elements
//! by a barycenter or overlap predicate, or recenter the ball at an element
//! barycenter.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::point::{signed_area, Point, Triangle};

/// Relative tolerance deciding whether a vertex at distance ~delta counts as
/// inside the ball. The measure-zero choice cannot affect integrals.
const IN_OUT_REL_TOL: f64 = 1e-12;

/// Polygons or caps with area below `1e-14 * h^2` are dropped as slivers.
const SLIVER_REL_TOL: f64 = 1e-14;

/// Ball approximation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BallStrategy {
    /// Exact ball: inscribed polygon triangles plus exact cap cells.
    ExactCaps,
    /// Inscribed polygon only; the caps are discarded.
    NoCaps,
    /// Inscribed polygon plus caps approximated by inscribed triangles.
    ApproxCaps,
    /// Whole elements whose barycenter lies in the closed ball.
    Barycenter,
    /// Whole elements that intersect the ball at all.
    Overlap,
    /// Exact-shape ball recentered at the outer element's barycenter.
    Shifted,
    /// Barycenter ball for the inner integral; the outer support region is
    /// approximated without caps.
    BarycenterNoCaps,
    /// Barycenter ball for the inner integral; the outer support region
    /// includes triangle-approximated caps.
    BarycenterApproxCaps,
    /// Ball recentered at the outer barycenter, then approximated without caps.
    ShiftedNoCaps,
}

impl BallStrategy {
    pub fn is_shifted(self) -> bool {
        matches!(self, BallStrategy::Shifted | BallStrategy::ShiftedNoCaps)
    }

    /// Whether the inner decomposition consists of whole mesh elements only.
    pub fn whole_elements_only(self) -> bool {
        matches!(
            self,
            BallStrategy::Barycenter
                | BallStrategy::Overlap
                | BallStrategy::BarycenterNoCaps
                | BallStrategy::BarycenterApproxCaps
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            BallStrategy::ExactCaps => "exactcaps",
            BallStrategy::NoCaps => "nocaps",
            BallStrategy::ApproxCaps => "approxcaps",
            BallStrategy::Barycenter => "barycenter",
            BallStrategy::Overlap => "overlap",
            BallStrategy::Shifted => "shifted",
            BallStrategy::BarycenterNoCaps => "barycenter-nocaps",
            BallStrategy::BarycenterApproxCaps => "barycenter-approxcaps",
            BallStrategy::ShiftedNoCaps => "shifted-nocaps",
        }
    }
}

impl std::str::FromStr for BallStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exactcaps" => BallStrategy::ExactCaps,
            "nocaps" => BallStrategy::NoCaps,
            "approxcaps" => BallStrategy::ApproxCaps,
            "barycenter" => BallStrategy::Barycenter,
            "overlap" => BallStrategy::Overlap,
            "shifted" => BallStrategy::Shifted,
            "barycenter-nocaps" => BallStrategy::BarycenterNoCaps,
            "barycenter-approxcaps" => BallStrategy::BarycenterApproxCaps,
            "shifted-nocaps" => BallStrategy::ShiftedNoCaps,
            other => return Err(Error::InvalidArgument(format!("unknown ball strategy `{other}`"))),
        })
    }
}

impl std::fmt::Display for BallStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A circular cap (segment) between a cord and the ball arc.
///
/// `p1` and `p2` are the cord endpoints, with the arc running
/// counterclockwise from `p1` to `p2`; `theta` is the half-angle of the
/// subtended sector, in `(0, pi/2]` for cords shorter than the diameter.
#[derive(Clone, Copy, Debug)]
pub struct Cap {
    pub center: Point,
    pub radius: f64,
    pub p1: Point,
    pub p2: Point,
    pub theta: f64,
    pub arc_mid: Point,
}

impl Cap {
    pub fn cord_length(&self) -> f64 {
        self.p1.dist(self.p2)
    }

    pub fn area(&self) -> f64 {
        0.5 * self.radius * self.radius * (2.0 * self.theta - (2.0 * self.theta).sin())
    }

    /// Unit direction from the ball center toward the arc midpoint.
    pub fn bisector(&self) -> Point {
        (self.arc_mid - self.center) * (1.0 / self.radius)
    }

    /// Whether `p` (already known to lie in the ball) is beyond the cord.
    pub fn contains_ball_point(&self, p: Point) -> bool {
        let n = self.bisector();
        (p - self.center).dot(n) >= self.radius * self.theta.cos()
    }
}

/// One quadrature cell of a ball decomposition.
#[derive(Clone, Debug)]
pub enum QuadCell {
    Triangle(Triangle),
    Cap(Cap),
}

impl QuadCell {
    pub fn area(&self) -> f64 {
        match self {
            QuadCell::Triangle(t) => t.area(),
            QuadCell::Cap(c) => c.area(),
        }
    }
}

/// Decomposition of an (approximate) ball into per-element quadrature cells.
#[derive(Clone, Debug)]
pub struct BallDecomposition {
    /// Cells keyed by the mesh element that contains them.
    pub cells: Vec<(usize, QuadCell)>,
    pub strategy: BallStrategy,
    pub center: Point,
    /// Equals `center` unless the strategy shifts the ball.
    pub shifted_center: Point,
    pub delta: f64,
}

impl BallDecomposition {
    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|(_, c)| c.area()).sum()
    }
}

/// Elements whose barycenter lies within `delta + h_max` of `x`: a superset
/// of every element intersecting the ball of radius `delta` at `x`.
pub fn candidate_elements(mesh: &Mesh, x: Point, delta: f64) -> Vec<usize> {
    let mut v = mesh.elements_near(x, delta + mesh.h_max);
    v.sort_unstable();
    v
}

/// Overlap classification of one element against a ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Overlap {
    Full,
    Partial,
    None,
}

pub fn classify_overlap(tri: &Triangle, x: Point, delta: f64) -> Overlap {
    let r_in = delta * (1.0 + IN_OUT_REL_TOL);
    let inside = tri.v.map(|v| v.dist(x) <= r_in);
    let count = inside.iter().filter(|&&b| b).count();
    match count {
        3 => Overlap::Full,
        1 | 2 => Overlap::Partial,
        _ => {
            // A ball can clip an element without containing any vertex, in
            // which case some edge is crossed twice.
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                if edge_circle_intersections(tri.v[i], tri.v[j], x, delta).len() == 2 {
                    return Overlap::Partial;
                }
            }
            Overlap::None
        }
    }
}

/// Ascending parameters in `[0, 1]` where the segment from `vi` to `vj`
/// crosses the circle of radius `delta` about `x`. Tangencies (discriminant
/// within tolerance of zero) report no roots.
pub fn edge_circle_intersections(vi: Point, vj: Point, x: Point, delta: f64) -> Vec<f64> {
    let (roots, n) = edge_circle_roots(vi, vj, x, delta);
    roots[..n].to_vec()
}

/// Allocation-free crossing computation shared by the decomposition paths.
fn edge_circle_roots(vi: Point, vj: Point, x: Point, delta: f64) -> ([f64; 2], usize) {
    let a = vi - x;
    let d = vj - vi;
    let dd = d.norm_sq();
    if dd == 0.0 {
        return ([0.0; 2], 0);
    }
    let b = a.dot(d);
    let c = a.norm_sq() - delta * delta;
    let disc = b * b - dd * c;
    // The tangency threshold must sit well above the rounding noise of
    // `disc` (about 1e-16 * |a|^2 * |d|^2), or exact lattice tangencies
    // split caps on one side of a symmetric configuration and not the
    // other. Crossings this shallow subtend caps of area ~1e-20 * delta^2,
    // far below the sliver cutoff.
    if disc <= 1e-12 * dd * delta * delta {
        return ([0.0; 2], 0);
    }
    let sq = disc.sqrt();
    // Stable quadratic: avoid cancellation in the root with the smaller
    // magnitude numerator.
    let q = if b >= 0.0 { -(b + sq) } else { -(b - sq) };
    let mut roots = [q / dd, c / q];
    if roots[0] > roots[1] {
        roots.swap(0, 1);
    }
    // Crossings landing exactly on a segment endpoint round a few ulps past
    // it; accept a hair outside and clamp, so a cord through a vertex is
    // recorded on every incident edge.
    let eps = 1e-9;
    let mut out = [0.0; 2];
    let mut n = 0;
    for l in roots {
        if (-eps..=1.0 + eps).contains(&l) {
            out[n] = l.clamp(0.0, 1.0);
            n += 1;
        }
    }
    (out, n)
}

/// Counterclockwise convex polygon of a partially-overlapping element:
/// inside vertices plus edge/circle crossing points. Returns fewer than
/// three points (empty contribution) for slivers.
pub fn intersection_polygon(tri: &Triangle, x: Point, delta: f64) -> Vec<Point> {
    let r_in = delta * (1.0 + IN_OUT_REL_TOL);
    let mut pts: Vec<Point> = Vec::with_capacity(6);
    for v in tri.v {
        if v.dist(x) <= r_in {
            pts.push(v);
        }
    }
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        for l in edge_circle_intersections(tri.v[i], tri.v[j], x, delta) {
            pts.push(tri.v[i] + (tri.v[j] - tri.v[i]) * l);
        }
    }
    dedupe_points(&mut pts, 1e-10 * delta);
    if pts.len() < 3 {
        return Vec::new();
    }
    order_ccw(&mut pts);
    pts
}

fn dedupe_points(pts: &mut Vec<Point>, tol: f64) {
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter() {
        if !out.iter().any(|q| q.dist(p) <= tol) {
            out.push(p);
        }
    }
    *pts = out;
}

/// Orders points counterclockwise by angle about their centroid; robust for
/// convex point sets.
fn order_ccw(pts: &mut [Point]) {
    let n = pts.len() as f64;
    let mut c = Point::new(0.0, 0.0);
    for p in pts.iter() {
        c = c + *p;
    }
    c = c * (1.0 / n);
    pts.sort_by(|a, b| {
        let aa = (a.y - c.y).atan2(a.x - c.x);
        let bb = (b.y - c.y).atan2(b.x - c.x);
        aa.partial_cmp(&bb).unwrap()
    });
}

/// Fan triangulation `{p0, p_{i+1}, p_{i+2}}` of a convex CCW polygon.
pub fn fan_triangulate(polygon: &[Point]) -> Vec<Triangle> {
    let mut out = Vec::with_capacity(polygon.len().saturating_sub(2));
    for i in 1..polygon.len().saturating_sub(1) {
        out.push(Triangle::new(polygon[0], polygon[i], polygon[i + 1]));
    }
    out
}

/// Area of a circular cap with cord length `c` on a ball of radius `delta`.
pub fn cap_area(c: f64, delta: f64) -> Result<f64> {
    if !(c >= 0.0) || c > 2.0 * delta * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "cord length {c} outside [0, 2*delta] for delta = {delta}"
        )));
    }
    let s = (c / (2.0 * delta)).min(1.0);
    Ok(delta * delta * (s.asin() - s * (1.0 - s * s).sqrt()))
}

/// One-point centroid rule for a cap: the point sits on the sector bisector
/// at distance `4 delta sin^3(theta) / (3 (2 theta - sin 2 theta))` from the
/// ball center and carries the cap area as weight. Exact for affine
/// integrands.
pub fn cap_centroid_rule(cap: &Cap) -> (Point, f64) {
    if cap.theta <= 1e-9 {
        return (cap.arc_mid, 0.0);
    }
    let two_theta = 2.0 * cap.theta;
    let denom = two_theta - two_theta.sin();
    let dist = 4.0 * cap.radius * cap.theta.sin().powi(3) / (3.0 * denom);
    let point = cap.center + cap.bisector() * dist;
    (point, cap.area())
}

/// Inscribed triangle approximation of a cap: the arc is split into `t + 1`
/// equal sub-arcs (cord endpoints included among the `t + 2` arc points) and
/// the resulting polygon is fanned into `t` triangles.
pub fn approximate_cap_triangles(cap: &Cap, t: usize) -> Vec<Triangle> {
    assert!(t >= 1, "cap must be approximated by at least one triangle");
    let a1 = angle_of(cap.p1 - cap.center);
    let mut a2 = angle_of(cap.p2 - cap.center);
    if a2 <= a1 {
        a2 += std::f64::consts::TAU;
    }
    let npts = t + 2;
    let pts: Vec<Point> = (0..npts)
        .map(|i| {
            let a = a1 + (a2 - a1) * (i as f64) / ((npts - 1) as f64);
            cap.center + Point::new(a.cos(), a.sin()) * cap.radius
        })
        .collect();
    fan_triangulate(&pts)
}

fn angle_of(v: Point) -> f64 {
    v.y.atan2(v.x)
}

/// Cells of one element against one ball, for the polygon strategies.
pub(crate) struct ElementCells {
    pub triangles: Vec<Triangle>,
    pub caps: Vec<Cap>,
    pub whole: bool,
}

/// Decomposes `B_delta(center) ∩ tri` into fan triangles and caps with one
/// pass over the vertex classifications and edge crossings.
pub(crate) fn decompose_element_against_ball(tri: &Triangle, center: Point, delta: f64) -> ElementCells {
    let r_in = delta * (1.0 + IN_OUT_REL_TOL);
    let inside = tri.v.map(|v| v.dist(center) <= r_in);
    let inside_count = inside.iter().filter(|&&b| b).count();
    if inside_count == 3 {
        return ElementCells { triangles: vec![*tri], caps: Vec::new(), whole: true };
    }

    let mut crossings: Vec<Point> = Vec::with_capacity(6);
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        let (roots, n) = edge_circle_roots(tri.v[i], tri.v[j], center, delta);
        for &l in &roots[..n] {
            crossings.push(tri.v[i] + (tri.v[j] - tri.v[i]) * l);
        }
    }
    dedupe_points(&mut crossings, 1e-10 * delta);
    if inside_count == 0 && crossings.len() < 2 {
        return ElementCells { triangles: Vec::new(), caps: Vec::new(), whole: false };
    }

    let sliver = SLIVER_REL_TOL * tri.diameter() * tri.diameter();
    let mut polygon: Vec<Point> = Vec::with_capacity(6);
    for (i, v) in tri.v.iter().enumerate() {
        if inside[i] {
            polygon.push(*v);
        }
    }
    polygon.extend_from_slice(&crossings);
    dedupe_points(&mut polygon, 1e-10 * delta);
    let triangles = if polygon.len() >= 3 {
        order_ccw(&mut polygon);
        if polygon_area(&polygon) > sliver {
            fan_triangulate(&polygon)
        } else {
            Vec::new()
        }
    } else {
        Vec::new()
    };
    let caps = caps_from_crossings(tri, center, delta, &crossings)
        .into_iter()
        .filter(|c| c.area() > sliver)
        .collect();
    ElementCells { triangles, caps, whole: false }
}

fn polygon_area(pts: &[Point]) -> f64 {
    let mut a = 0.0;
    for i in 1..pts.len().saturating_sub(1) {
        a += signed_area(pts[0], pts[i], pts[i + 1]);
    }
    a.abs()
}

/// Caps of the ball boundary inside `tri`: consecutive circle/edge crossing
/// points whose connecting arc runs through the element interior.
fn caps_from_crossings(tri: &Triangle, center: Point, delta: f64, crossings: &[Point]) -> Vec<Cap> {
    if crossings.len() < 2 {
        return Vec::new();
    }
    let mut angles: Vec<f64> = crossings.iter().map(|p| angle_of(*p - center)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut caps = Vec::new();
    for i in 0..angles.len() {
        let a1 = angles[i];
        let a2 = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + std::f64::consts::TAU };
        let span = a2 - a1;
        if span <= 1e-12 {
            continue;
        }
        let mid = a1 + 0.5 * span;
        let arc_mid = center + Point::new(mid.cos(), mid.sin()) * delta;
        if tri.contains(arc_mid, 1e-9) {
            let p1 = center + Point::new(a1.cos(), a1.sin()) * delta;
            let p2 = center + Point::new(a2.cos(), a2.sin()) * delta;
            caps.push(Cap { center, radius: delta, p1, p2, theta: 0.5 * span, arc_mid });
        }
    }
    caps
}

/// How caps are treated in a polygon-strategy decomposition.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum CapHandling {
    Exact,
    Drop,
    Triangles(usize),
}

/// Builds the decomposition of the (approximate) ball at `x`.
///
/// For the shifted strategies the center is first moved to the barycenter of
/// the element containing `x`. The barycenter-pair strategies use the plain
/// barycenter ball for the inner decomposition; their outer-side treatment
/// lives in the assembly.
pub fn decompose_ball(
    mesh: &Mesh,
    x: Point,
    delta: f64,
    strategy: BallStrategy,
    cap_triangles: usize,
) -> Result<BallDecomposition> {
    let center = if strategy.is_shifted() {
        let k = mesh
            .locate(x)
            .ok_or_else(|| Error::InvalidArgument("shifted strategies need x inside the mesh".into()))?;
        mesh.element_barycenter(k)
    } else {
        x
    };
    Ok(decompose_ball_at(mesh, x, center, delta, strategy, cap_triangles))
}

/// Decomposition with an explicitly provided (possibly shifted) center; the
/// assembly uses this to pass the outer element's barycenter directly.
pub fn decompose_ball_at(
    mesh: &Mesh,
    x: Point,
    center: Point,
    delta: f64,
    strategy: BallStrategy,
    cap_triangles: usize,
) -> BallDecomposition {
    let candidates = candidate_elements(mesh, center, delta);
    let mut cells: Vec<(usize, QuadCell)> = Vec::new();
    decompose_ball_into(mesh, center, delta, strategy, cap_triangles, &candidates, &mut cells);
    BallDecomposition { cells, strategy, center: x, shifted_center: center, delta }
}

/// Decomposition against a caller-provided candidate superset, writing cells
/// into a reused buffer. Candidates are classified individually, so any
/// superset of the elements intersecting the ball yields the same result.
pub(crate) fn decompose_ball_into(
    mesh: &Mesh,
    center: Point,
    delta: f64,
    strategy: BallStrategy,
    cap_triangles: usize,
    candidates: &[usize],
    cells: &mut Vec<(usize, QuadCell)>,
) {
    cells.clear();
    match strategy {
        BallStrategy::Barycenter | BallStrategy::BarycenterNoCaps | BallStrategy::BarycenterApproxCaps => {
            let r = delta * (1.0 + IN_OUT_REL_TOL);
            for &k in candidates {
                if mesh.element_barycenter(k).dist(center) <= r {
                    cells.push((k, QuadCell::Triangle(mesh.triangle(k))));
                }
            }
        }
        BallStrategy::Overlap => {
            for &k in candidates {
                if classify_overlap(&mesh.triangle(k), center, delta) != Overlap::None {
                    cells.push((k, QuadCell::Triangle(mesh.triangle(k))));
                }
            }
        }
        BallStrategy::ExactCaps | BallStrategy::Shifted => {
            push_polygon_cells(mesh, center, delta, candidates, CapHandling::Exact, cells)
        }
        BallStrategy::NoCaps | BallStrategy::ShiftedNoCaps => {
            push_polygon_cells(mesh, center, delta, candidates, CapHandling::Drop, cells)
        }
        BallStrategy::ApproxCaps => push_polygon_cells(
            mesh,
            center,
            delta,
            candidates,
            CapHandling::Triangles(cap_triangles.max(1)),
            cells,
        ),
    }
}

fn push_polygon_cells(
    mesh: &Mesh,
    center: Point,
    delta: f64,
    candidates: &[usize],
    caps: CapHandling,
    cells: &mut Vec<(usize, QuadCell)>,
) {
    let reach = delta + mesh.h_max;
    for &k in candidates {
        if mesh.element_barycenter(k).dist_sq(center) >= reach * reach {
            continue;
        }
        let tri = mesh.triangle(k);
        let ec = decompose_element_against_ball(&tri, center, delta);
        for t in ec.triangles {
            cells.push((k, QuadCell::Triangle(t)));
        }
        for cap in ec.caps {
            match caps {
                CapHandling::Exact => cells.push((k, QuadCell::Cap(cap))),
                CapHandling::Drop => {}
                CapHandling::Triangles(t) => {
                    for tri in approximate_cap_triangles(&cap, t) {
                        cells.push((k, QuadCell::Triangle(tri)));
                    }
                }
            }
        }
    }
}

/// Point-membership test for an approximate ball, used by the symmetric
/// difference sampler.
enum Membership {
    /// The approximate ball is an exact disc (possibly recentered).
    Disc,
    /// Inscribed polygon: the disc minus the caps; optionally each cap is
    /// partially refilled by its inscribed triangles.
    Polygon { caps: Vec<Cap>, cap_tris: Option<Vec<Vec<Triangle>>>, min_cos: f64 },
    /// A union of whole mesh elements.
    Elements { selected: Vec<bool> },
}

impl Membership {
    fn build(mesh: &Mesh, center: Point, delta: f64, strategy: BallStrategy, cap_triangles: usize) -> Membership {
        match strategy {
            BallStrategy::ExactCaps | BallStrategy::Shifted => Membership::Disc,
            BallStrategy::NoCaps | BallStrategy::ApproxCaps | BallStrategy::ShiftedNoCaps => {
                let mut caps = Vec::new();
                for k in candidate_elements(mesh, center, delta) {
                    let ec = decompose_element_against_ball(&mesh.triangle(k), center, delta);
                    caps.extend(ec.caps);
                }
                let min_cos = caps.iter().map(|c| c.theta.cos()).fold(1.0f64, f64::min);
                let cap_tris = (strategy == BallStrategy::ApproxCaps).then(|| {
                    caps.iter()
                        .map(|c| approximate_cap_triangles(c, cap_triangles.max(1)))
                        .collect()
                });
                Membership::Polygon { caps, cap_tris, min_cos }
            }
            BallStrategy::Barycenter
            | BallStrategy::Overlap
            | BallStrategy::BarycenterNoCaps
            | BallStrategy::BarycenterApproxCaps => {
                let decomp = decompose_ball_at(mesh, center, center, delta, strategy, cap_triangles);
                let mut selected = vec![false; mesh.num_elements()];
                for &(k, _) in &decomp.cells {
                    selected[k] = true;
                }
                Membership::Elements { selected }
            }
        }
    }

    fn contains(&self, mesh: &Mesh, center: Point, delta: f64, p: Point, scratch: &mut Vec<usize>) -> bool {
        let d2 = delta * delta;
        match self {
            Membership::Disc => p.dist_sq(center) <= d2,
            Membership::Polygon { caps, cap_tris, min_cos } => {
                let r2 = p.dist_sq(center);
                if r2 > d2 {
                    return false;
                }
                if r2 < (delta * min_cos) * (delta * min_cos) {
                    return true;
                }
                for (i, cap) in caps.iter().enumerate() {
                    if cap.contains_ball_point(p) {
                        return match cap_tris {
                            Some(tris) => tris[i].iter().any(|t| t.contains(p, 0.0)),
                            None => false,
                        };
                    }
                }
                true
            }
            Membership::Elements { selected } => match mesh.locate_with(p, scratch) {
                Some(k) => selected[k],
                None => false,
            },
        }
    }
}

/// Stratified-sampling estimate of the symmetric-difference area between the
/// exact ball at `x` and the approximate ball of the given strategy.
/// Returns `(estimate, standard_error)`; the standard error uses the
/// simple-random-sampling formula, conservative for the jittered grid used.
pub fn ball_difference_area(
    mesh: &Mesh,
    x: Point,
    delta: f64,
    strategy: BallStrategy,
    resolution: usize,
    cap_triangles: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if resolution < 1000 {
        return Err(Error::InvalidArgument("sampler resolution must be at least 1000".into()));
    }
    let center = if strategy.is_shifted() {
        let k = mesh
            .locate(x)
            .ok_or_else(|| Error::InvalidArgument("shifted strategies need x inside the mesh".into()))?;
        mesh.element_barycenter(k)
    } else {
        x
    };
    let membership = Membership::build(mesh, center, delta, strategy, cap_triangles);

    let r = delta + 1.5 * mesh.h_max;
    let m = (resolution as f64).sqrt().ceil() as usize;
    let cell = 2.0 * r / m as f64;
    let box_area = (2.0 * r) * (2.0 * r);
    let d2 = delta * delta;

    // Points deep inside belong to both sets, points far outside to neither;
    // only a band about the rim can contribute to the symmetric difference.
    let (inner_safe2, outer_safe2) = match &membership {
        Membership::Disc => (0.0, 0.0),
        Membership::Polygon { min_cos, .. } => {
            let s = delta * min_cos;
            (s * s, d2)
        }
        Membership::Elements { .. } => {
            let s = (delta - 2.0 * mesh.h_max).max(0.0);
            let o = delta + 2.0 * mesh.h_max;
            (s * s, o * o)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch: Vec<usize> = Vec::new();
    let mut hits: u64 = 0;
    let total = (m * m) as u64;
    for iy in 0..m {
        for ix in 0..m {
            let px = x.x - r + (ix as f64 + rng.gen::<f64>()) * cell;
            let py = x.y - r + (iy as f64 + rng.gen::<f64>()) * cell;
            let p = Point::new(px, py);
            let in_ball = p.dist_sq(x) <= d2;
            let rc2 = p.dist_sq(center);
            let in_approx = if matches!(membership, Membership::Disc) {
                rc2 <= d2
            } else if rc2 < inner_safe2 {
                true
            } else if rc2 > outer_safe2 {
                false
            } else {
                membership.contains(mesh, center, delta, p, &mut scratch)
            };
            if in_ball != in_approx {
                hits += 1;
            }
        }
    }
    let p_hat = hits as f64 / total as f64;
    let est = box_area * p_hat;
    let se = box_area * (p_hat * (1.0 - p_hat) / total as f64).sqrt();
    Ok((est, se))
}

/// Best-effort SVG rendering of a decomposition for debugging.
pub fn decomposition_svg(decomp: &BallDecomposition, mesh: &Mesh) -> String {
    let d = decomp.delta;
    let c = decomp.shifted_center;
    let (x0, y0, w) = (c.x - 1.5 * d, c.y - 1.5 * d, 3.0 * d);
    let scale = 800.0 / w;
    let tx = |p: Point| ((p.x - x0) * scale, (800.0 - (p.y - y0) * scale));
    let mut s = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n",
    );
    for k in mesh.elements_near(c, d + 2.0 * mesh.h_max) {
        let t = mesh.triangle(k);
        let (ax, ay) = tx(t.v[0]);
        let (bx, by) = tx(t.v[1]);
        let (cx, cy) = tx(t.v[2]);
        s.push_str(&format!(
            "<polygon points=\"{ax:.2},{ay:.2} {bx:.2},{by:.2} {cx:.2},{cy:.2}\" fill=\"none\" stroke=\"#bbb\"/>\n"
        ));
    }
    for (_, cell) in &decomp.cells {
        match cell {
            QuadCell::Triangle(t) => {
                let (ax, ay) = tx(t.v[0]);
                let (bx, by) = tx(t.v[1]);
                let (cx, cy) = tx(t.v[2]);
                s.push_str(&format!(
                    "<polygon points=\"{ax:.2},{ay:.2} {bx:.2},{by:.2} {cx:.2},{cy:.2}\" fill=\"#ffd280\" fill-opacity=\"0.5\" stroke=\"#c60\"/>\n"
                ));
            }
            QuadCell::Cap(cap) => {
                let (ax, ay) = tx(cap.p1);
                let (bx, by) = tx(cap.p2);
                let rr = cap.radius * scale;
                s.push_str(&format!(
                    "<path d=\"M {ax:.2} {ay:.2} A {rr:.2} {rr:.2} 0 0 0 {bx:.2} {by:.2} Z\" fill=\"#80d2ff\" fill-opacity=\"0.6\" stroke=\"#06c\"/>\n"
                ));
            }
        }
    }
    let (px, py) = tx(c);
    let rr = d * scale;
    s.push_str(&format!(
        "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"{rr:.2}\" fill=\"none\" stroke=\"#000\" stroke-dasharray=\"6 4\"/>\n"
    ));
    s.push_str("</svg>\n");
    s
}
