//! Assembly of the fully-discrete stiffness matrix and right-hand side for
//! piecewise-linear elements.
//!
//! The outer loop runs over the domain elements and over the layer elements
//! within reach of the boundary. Contributions route by region membership of
//! the outer point and the inner cell: domain/domain pairs feed the matrix,
//! domain/layer pairs feed the diagonal block and the data-weighted
//! right-hand side, and layer/domain pairs mirror them. Assembling both
//! orientations explicitly (rather than doubling one) keeps the quadrature
//! point-symmetric about interior nodes, which is what makes the linear
//! patch test exact on symmetric grids. Trial-side values at constrained
//! nodes are folded into the right-hand side with nodal data; the constraint
//! function itself is evaluated pointwise at quadrature points in the layer.
//!
//! Workers own disjoint outer-element ranges and emit per-element
//! contribution lists that are merged in element order, so the compressed
//! result is bitwise identical for any worker count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{decompose_ball_at, decompose_ball_into, BallDecomposition, BallStrategy, QuadCell};
use crate::geometry::{approximate_cap_triangles, cap_centroid_rule, decompose_element_against_ball};
use crate::mesh::{Mesh, Region};
use crate::point::{Point, Triangle};
use crate::quadrature::{map_to_cell_into, rule, select_outer_rule, MappedRule, QuadratureRule, RuleKind};

/// Kernel `gamma(x, y) = psi(x, y) * chi_{B_delta(x)}(y)`.
#[derive(Clone)]
pub struct Kernel {
    pub delta: f64,
    /// Marks the `4 / (pi delta^4)` scaling that reproduces the Laplacian on
    /// cubic polynomials.
    pub constant_scaled: bool,
    psi: PsiFn,
}

#[derive(Clone)]
enum PsiFn {
    Constant(f64),
    Custom(Arc<dyn Fn(Point, Point) -> f64 + Send + Sync>),
}

impl Kernel {
    /// The constant kernel `4 / (pi delta^4)` on the ball.
    pub fn constant_scaled(delta: f64) -> Self {
        let c = 4.0 / (std::f64::consts::PI * delta.powi(4));
        Kernel { delta, constant_scaled: true, psi: PsiFn::Constant(c) }
    }

    pub fn constant(delta: f64, value: f64) -> Self {
        Kernel { delta, constant_scaled: false, psi: PsiFn::Constant(value) }
    }

    pub fn custom(delta: f64, psi: impl Fn(Point, Point) -> f64 + Send + Sync + 'static) -> Self {
        Kernel { delta, constant_scaled: false, psi: PsiFn::Custom(Arc::new(psi)) }
    }

    #[inline]
    pub fn psi(&self, x: Point, y: Point) -> f64 {
        match &self.psi {
            PsiFn::Constant(c) => *c,
            PsiFn::Custom(f) => f(x, y),
        }
    }
}

/// Source term on the domain and constraint data on the layer.
#[derive(Clone)]
pub struct ProblemData {
    pub f: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub g: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
}

impl ProblemData {
    pub fn new(
        f: impl Fn(Point) -> f64 + Send + Sync + 'static,
        g: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ProblemData { f: Arc::new(f), g: Arc::new(g) }
    }
}

/// The manufactured solution `u = x1^2 x2 + x2^2` with `f = -2(x2 + 1)` and
/// `g = u` on the layer; paired with the constant-scaled kernel the discrete
/// operator reproduces the Laplacian on it.
pub fn manufactured_solution(p: Point) -> f64 {
    p.x * p.x * p.y + p.y * p.y
}

pub fn manufactured_case() -> ProblemData {
    ProblemData::new(|p| -2.0 * (p.y + 1.0), manufactured_solution)
}

/// Compressed sparse rows, square.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&(c as u32)) {
            Ok(i) => self.values[lo + i],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[i] * x[self.col_idx[i] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute asymmetry `|A_ij - A_ji|` over the stored pattern.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[i] as usize;
                if c > r {
                    worst = worst.max((self.values[i] - self.get(c, r)).abs());
                }
            }
        }
        worst
    }
}

/// Assembled system over the interior nodes, with the constraint data that
/// was folded into the right-hand side retained for post-processing.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// `g` at constrained nodes, indexed by `rank - j_omega`.
    pub constraint_values: Vec<f64>,
    pub j_omega: usize,
}

impl LinearSystem {
    /// Nodal values over all mesh vertices (by vertex id) from an interior
    /// solution vector.
    pub fn full_solution(&self, mesh: &Mesh, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.j_omega);
        let mut out = vec![0.0; mesh.num_vertices()];
        for (v, &rank) in mesh.order.iter().enumerate() {
            out[v] = if rank < self.j_omega {
                interior[rank]
            } else {
                self.constraint_values[rank - self.j_omega]
            };
        }
        out
    }
}

/// A-seminorm of the difference of two coefficient vectors,
/// `sqrt((u1-u2)^T A (u1-u2))`.
pub fn energy_norm_diff(system: &LinearSystem, u1: &[f64], u2: &[f64]) -> Result<f64> {
    let n = system.matrix.n;
    if u1.len() != n || u2.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {} against a {}-dimensional system",
            u1.len(),
            u2.len(),
            n
        )));
    }
    let d: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let mut ad = vec![0.0; n];
    system.matrix.matvec(&d, &mut ad);
    let q: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
    Ok(q.max(0.0).sqrt())
}

#[derive(Clone, Debug)]
pub struct AssembleOptions {
    /// Triangles per cap for the approximate-cap strategies.
    pub cap_triangles: usize,
    /// Worker count; 0 uses the global thread pool.
    pub threads: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { cap_triangles: 1, threads: 0 }
    }
}

/// Hat-function value of global node `node` at `p`, evaluated through
/// `element` (zero when the node is not a vertex of that element).
pub fn hat_value(mesh: &Mesh, element: usize, node: usize, p: Point) -> f64 {
    let ids = mesh.elements[element].vertex_indices;
    let tri = mesh.triangle(element);
    let l = tri.barycentric(p);
    for i in 0..3 {
        if ids[i] == node {
            return l[i];
        }
    }
    0.0
}

/// One inner integral of the pair integrand over a ball decomposition:
/// `sum_cells sum_q w (phi_j(y)-phi_j(x)) (phi_j'(y)-phi_j'(x)) psi(x, y)`
/// with the three-point rule on triangle cells and the centroid rule on
/// caps. `x` is the decomposition's (unshifted) center.
pub fn inner_integral_pair(
    mesh: &Mesh,
    kernel: &Kernel,
    decomp: &BallDecomposition,
    outer_element: usize,
    j: usize,
    jp: usize,
) -> f64 {
    let x = decomp.center;
    let phix_j = hat_value(mesh, outer_element, j, x);
    let phix_jp = hat_value(mesh, outer_element, jp, x);
    let g3 = rule(RuleKind::Gauss3);
    let mut mapped = MappedRule { points: Vec::new(), weights: Vec::new() };
    let mut total = 0.0;
    for (k, cell) in &decomp.cells {
        let eval = |y: Point, w: f64| {
            let dj = hat_value(mesh, *k, j, y) - phix_j;
            let djp = hat_value(mesh, *k, jp, y) - phix_jp;
            w * dj * djp * kernel.psi(x, y)
        };
        match cell {
            QuadCell::Triangle(t) => {
                map_to_cell_into(&g3, t, &mut mapped);
                for (y, w) in mapped.points.iter().zip(&mapped.weights) {
                    total += eval(*y, *w);
                }
            }
            QuadCell::Cap(cap) => {
                let (y, w) = cap_centroid_rule(cap);
                total += eval(y, w);
            }
        }
    }
    total
}

/// Quadrature of `psi(x, .)` over the layer-side cells of a decomposition.
pub fn absorption_integral(mesh: &Mesh, kernel: &Kernel, decomp: &BallDecomposition) -> f64 {
    let x = decomp.center;
    let g3 = rule(RuleKind::Gauss3);
    let mut mapped = MappedRule { points: Vec::new(), weights: Vec::new() };
    let mut total = 0.0;
    for (k, cell) in &decomp.cells {
        if mesh.elements[*k].region != Region::OmegaI {
            continue;
        }
        match cell {
            QuadCell::Triangle(t) => {
                map_to_cell_into(&g3, t, &mut mapped);
                for (y, w) in mapped.points.iter().zip(&mapped.weights) {
                    total += w * kernel.psi(x, *y);
                }
            }
            QuadCell::Cap(cap) => {
                let (y, w) = cap_centroid_rule(cap);
                total += w * kernel.psi(x, y);
            }
        }
    }
    total
}

/// Sparsity pattern over interior ranks: all node pairs within
/// `delta + 2 h_max` of each other.
fn build_pattern(mesh: &Mesh, delta: f64) -> (Vec<usize>, Vec<u32>) {
    let j_omega = mesh.j_omega;
    let radius = delta + 2.0 * mesh.h_max + 1e-9 * (1.0 + delta);
    let gather_radius = radius + 0.75 * mesh.h_max;
    let rows: Vec<Vec<u32>> = (0..j_omega)
        .into_par_iter()
        .map(|r| {
            let p = mesh.vertex(mesh.order_inv[r]);
            let mut cols: Vec<u32> = Vec::new();
            for k in mesh.elements_near(p, gather_radius) {
                for &v in &mesh.elements[k].vertex_indices {
                    let rank = mesh.order[v];
                    if rank < j_omega && mesh.vertex(v).dist(p) <= radius {
                        cols.push(rank as u32);
                    }
                }
            }
            cols.sort_unstable();
            cols.dedup();
            cols
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(j_omega + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    for cols in rows {
        col_idx.extend_from_slice(&cols);
        row_ptr.push(col_idx.len());
    }
    (row_ptr, col_idx)
}

/// Per-element contribution: combined matrix triplets (sorted by row then
/// column) and right-hand side increments, both in a deterministic order.
struct ElementContribution {
    triplets: Vec<(u32, u32, f64)>,
    rhs: Vec<(u32, f64)>,
}

/// Accumulator for one (outer, inner) element pair: a symmetric block over
/// the union of the two node triples plus the layer-side terms over the
/// outer nodes.
struct PairAccumulator {
    /// Global vertex ids: outer nodes first, then inner nodes not shared.
    slots: [usize; 6],
    nu: usize,
    /// Slot index of each inner node.
    inner_slot: [usize; 3],
    /// Upper-triangular pair block (double-difference products).
    block: [[f64; 6]; 6],
    /// Upper-triangular layer block over the outer nodes.
    layer_block: [[f64; 3]; 3],
    /// Layer-side g-weighted right-hand side terms over the outer nodes.
    layer_rhs: [f64; 3],
    region: Region,
}

impl PairAccumulator {
    fn new(outer_nodes: [usize; 3], inner_nodes: [usize; 3], region: Region) -> Self {
        let mut slots = [usize::MAX; 6];
        slots[..3].copy_from_slice(&outer_nodes);
        let mut nu = 3;
        let mut inner_slot = [0usize; 3];
        for (i, &n) in inner_nodes.iter().enumerate() {
            if let Some(s) = slots[..nu].iter().position(|&x| x == n) {
                inner_slot[i] = s;
            } else {
                slots[nu] = n;
                inner_slot[i] = nu;
                nu += 1;
            }
        }
        PairAccumulator {
            slots,
            nu,
            inner_slot,
            block: [[0.0; 6]; 6],
            layer_block: [[0.0; 3]; 3],
            layer_rhs: [0.0; 3],
            region,
        }
    }

    /// One (x, y) atom of the double-difference term with combined weight
    /// `w = w_x w_y psi(x, y)`.
    #[inline]
    fn add_pair_atom(&mut self, phix: [f64; 3], phiy: [f64; 3], w: f64) {
        let mut d = [0.0f64; 6];
        d[0] = -phix[0];
        d[1] = -phix[1];
        d[2] = -phix[2];
        for i in 0..3 {
            d[self.inner_slot[i]] += phiy[i];
        }
        for s in 0..self.nu {
            let ws = w * d[s];
            for t in s..self.nu {
                self.block[s][t] += ws * d[t];
            }
        }
    }

    /// Layer-side contribution at one outer point: `wm = w_x sum_y w_y psi`
    /// and `wg = w_x sum_y w_y psi g(y)`.
    #[inline]
    fn add_layer_atom(&mut self, phix: [f64; 3], wm: f64, wg: f64) {
        for p in 0..3 {
            let wp = wm * phix[p];
            for q in p..3 {
                self.layer_block[p][q] += wp * phix[q];
            }
            self.layer_rhs[p] += wg * phix[p];
        }
    }
}

/// Accumulator for one (layer-outer, domain-inner) element pair: products of
/// inner basis values plus the data-weighted right-hand side terms.
struct LayerOuterAccumulator {
    inner_nodes: [usize; 3],
    /// Upper-triangular block of `w psi phi_p(y) phi_q(y)` sums.
    block: [[f64; 3]; 3],
    /// `w psi g(x) phi_p(y)` sums.
    rhs: [f64; 3],
}

impl LayerOuterAccumulator {
    fn new(inner_nodes: [usize; 3]) -> Self {
        LayerOuterAccumulator { inner_nodes, block: [[0.0; 3]; 3], rhs: [0.0; 3] }
    }

    #[inline]
    fn add_atom(&mut self, phiy: [f64; 3], w: f64, wg: f64) {
        for p in 0..3 {
            let wp = w * phiy[p];
            for q in p..3 {
                self.block[p][q] += wp * phiy[q];
            }
            self.rhs[p] += wg * phiy[p];
        }
    }
}

struct Workspace<'a> {
    mesh: &'a Mesh,
    kernel: &'a Kernel,
    data: &'a ProblemData,
    strategy: BallStrategy,
    cap_triangles: usize,
    delta: f64,
    /// Nodal constraint values by vertex id (meaningful for layer nodes).
    nodal_g: Vec<f64>,
    g3: QuadratureRule,
    g4: QuadratureRule,
    v7: QuadratureRule,
}

impl<'a> Workspace<'a> {
    fn scatter(&self, acc: &PairAccumulator, out: &mut ElementContribution) {
        let mesh = self.mesh;
        let j_omega = mesh.j_omega;
        if acc.region == Region::Omega {
            for s in 0..acc.nu {
                let ns = acc.slots[s];
                let rs = mesh.order[ns];
                for t in s..acc.nu {
                    let v = acc.block[s][t];
                    if v == 0.0 {
                        continue;
                    }
                    let nt = acc.slots[t];
                    let rt = mesh.order[nt];
                    match (rs < j_omega, rt < j_omega) {
                        (true, true) => {
                            out.triplets.push((rs as u32, rt as u32, v));
                            if rs != rt {
                                out.triplets.push((rt as u32, rs as u32, v));
                            }
                        }
                        (true, false) => out.rhs.push((rs as u32, -v * self.nodal_g[nt])),
                        (false, true) => out.rhs.push((rt as u32, -v * self.nodal_g[ns])),
                        (false, false) => {}
                    }
                }
            }
        } else {
            for p in 0..3 {
                let np = acc.slots[p];
                let rp = mesh.order[np];
                for q in p..3 {
                    let v = acc.layer_block[p][q];
                    if v == 0.0 {
                        continue;
                    }
                    let nq = acc.slots[q];
                    let rq = mesh.order[nq];
                    match (rp < j_omega, rq < j_omega) {
                        (true, true) => {
                            out.triplets.push((rp as u32, rq as u32, v));
                            if rp != rq {
                                out.triplets.push((rq as u32, rp as u32, v));
                            }
                        }
                        (true, false) => out.rhs.push((rp as u32, -v * self.nodal_g[nq])),
                        (false, true) => out.rhs.push((rq as u32, -v * self.nodal_g[np])),
                        (false, false) => {}
                    }
                }
                if rp < j_omega {
                    let v = acc.layer_rhs[p];
                    if v != 0.0 {
                        out.rhs.push((rp as u32, v));
                    }
                }
            }
        }
    }

    fn scatter_layer_outer(&self, acc: &LayerOuterAccumulator, out: &mut ElementContribution) {
        let mesh = self.mesh;
        let j_omega = mesh.j_omega;
        for p in 0..3 {
            let np = acc.inner_nodes[p];
            let rp = mesh.order[np];
            for q in p..3 {
                let v = acc.block[p][q];
                if v == 0.0 {
                    continue;
                }
                let nq = acc.inner_nodes[q];
                let rq = mesh.order[nq];
                match (rp < j_omega, rq < j_omega) {
                    (true, true) => {
                        out.triplets.push((rp as u32, rq as u32, v));
                        if rp != rq {
                            out.triplets.push((rq as u32, rp as u32, v));
                        }
                    }
                    (true, false) => out.rhs.push((rp as u32, -v * self.nodal_g[nq])),
                    (false, true) => out.rhs.push((rq as u32, -v * self.nodal_g[np])),
                    (false, false) => {}
                }
            }
            if rp < j_omega && acc.rhs[p] != 0.0 {
                out.rhs.push((rp as u32, acc.rhs[p]));
            }
        }
    }

    /// Inner integration of one cell group against one layer-side outer
    /// point: accumulates `w psi phi(y) phi(y)` and `w psi g(x) phi(y)`.
    fn accumulate_cells_layer_outer(
        &self,
        acc: &mut LayerOuterAccumulator,
        inner_tri: &Triangle,
        cells: &[(usize, QuadCell)],
        x: Point,
        wx: f64,
        gx: f64,
        scratch: &mut MappedRule,
    ) {
        for (_, cell) in cells {
            match cell {
                QuadCell::Triangle(t) => {
                    map_to_cell_into(&self.g3, t, scratch);
                    for (y, wy) in scratch.points.iter().zip(&scratch.weights) {
                        let w = wx * wy * self.kernel.psi(x, *y);
                        acc.add_atom(inner_tri.barycentric(*y), w, w * gx);
                    }
                }
                QuadCell::Cap(cap) => {
                    let (y, wy) = cap_centroid_rule(cap);
                    let w = wx * wy * self.kernel.psi(x, y);
                    acc.add_atom(inner_tri.barycentric(y), w, w * gx);
                }
            }
        }
    }

    /// Inner integration of one cell group against one outer point.
    fn accumulate_cells(
        &self,
        acc: &mut PairAccumulator,
        inner_tri: &Triangle,
        cells: &[(usize, QuadCell)],
        x: Point,
        wx: f64,
        phix: [f64; 3],
        scratch: &mut MappedRule,
    ) {
        if acc.region == Region::Omega {
            for (_, cell) in cells {
                match cell {
                    QuadCell::Triangle(t) => {
                        map_to_cell_into(&self.g3, t, scratch);
                        for (y, wy) in scratch.points.iter().zip(&scratch.weights) {
                            let w = wx * wy * self.kernel.psi(x, *y);
                            acc.add_pair_atom(phix, inner_tri.barycentric(*y), w);
                        }
                    }
                    QuadCell::Cap(cap) => {
                        let (y, wy) = cap_centroid_rule(cap);
                        let w = wx * wy * self.kernel.psi(x, y);
                        acc.add_pair_atom(phix, inner_tri.barycentric(y), w);
                    }
                }
            }
        } else {
            let mut mass = 0.0;
            let mut gsum = 0.0;
            for (_, cell) in cells {
                match cell {
                    QuadCell::Triangle(t) => {
                        map_to_cell_into(&self.g3, t, scratch);
                        for (y, wy) in scratch.points.iter().zip(&scratch.weights) {
                            let wp = wy * self.kernel.psi(x, *y);
                            mass += wp;
                            gsum += wp * (self.data.g)(*y);
                        }
                    }
                    QuadCell::Cap(cap) => {
                        let (y, wy) = cap_centroid_rule(cap);
                        let wp = wy * self.kernel.psi(x, y);
                        mass += wp;
                        gsum += wp * (self.data.g)(y);
                    }
                }
            }
            acc.add_layer_atom(phix, wx * mass, wx * gsum);
        }
    }

    fn element_contribution(&self, k: usize) -> ElementContribution {
        let mesh = self.mesh;
        let mut out = ElementContribution { triplets: Vec::new(), rhs: Vec::new() };
        let tri_k = mesh.triangle(k);
        let nodes_k = mesh.elements[k].vertex_indices;
        let mut scratch = MappedRule { points: Vec::new(), weights: Vec::new() };

        if mesh.elements[k].region == Region::Omega {
            let mut outer4 = MappedRule { points: Vec::new(), weights: Vec::new() };
            map_to_cell_into(&self.g4, &tri_k, &mut outer4);

            // Source term over the outer element, via the four-point rule.
            for (x, wx) in outer4.points.iter().zip(&outer4.weights) {
                let phix = tri_k.barycentric(*x);
                let fv = (self.data.f)(*x);
                for i in 0..3 {
                    let r = mesh.order[nodes_k[i]];
                    if r < mesh.j_omega {
                        out.rhs.push((r as u32, wx * fv * phix[i]));
                    }
                }
            }

            match self.strategy {
                BallStrategy::BarycenterNoCaps | BallStrategy::BarycenterApproxCaps => {
                    self.pair_support_element(k, &tri_k, nodes_k, &mut scratch, &mut out)
                }
                BallStrategy::Shifted | BallStrategy::ShiftedNoCaps => {
                    self.shifted_element(k, &tri_k, nodes_k, &outer4, &mut scratch, &mut out)
                }
                _ => self.point_based_element(k, &tri_k, nodes_k, &outer4, &mut scratch, &mut out),
            }
        } else {
            match self.strategy {
                BallStrategy::BarycenterNoCaps | BallStrategy::BarycenterApproxCaps => {
                    self.layer_pair_support_element(k, &tri_k, &mut scratch, &mut out)
                }
                _ => self.layer_element(k, &tri_k, &mut scratch, &mut out),
            }
        }

        out.triplets = combine_triplets(std::mem::take(&mut out.triplets));
        out.rhs = combine_rhs(std::mem::take(&mut out.rhs));
        out
    }

    /// Outer element in the layer: balls centered at its quadrature points
    /// (or at its barycenter for the shifted strategies) feed products of
    /// domain-side basis values into the matrix and pointwise constraint
    /// data into the right-hand side.
    fn layer_element(&self, k: usize, tri_k: &Triangle, scratch: &mut MappedRule, out: &mut ElementContribution) {
        let mesh = self.mesh;
        let shifted = self.strategy.is_shifted();
        let mut outer4 = MappedRule { points: Vec::new(), weights: Vec::new() };
        map_to_cell_into(&self.g4, tri_k, &mut outer4);
        let mut outer7 = MappedRule { points: Vec::new(), weights: Vec::new() };
        if !shifted {
            map_to_cell_into(&self.v7, tri_k, &mut outer7);
        }
        let shared_decomp = shifted.then(|| {
            let c = mesh.element_barycenter(k);
            decompose_ball_at(mesh, c, c, self.delta, self.strategy, self.cap_triangles)
        });

        let mut pairs: BTreeMap<usize, LayerOuterAccumulator> = BTreeMap::new();
        let sets: &[(RuleKind, &MappedRule)] = if shifted {
            &[(RuleKind::Gauss4, &outer4)]
        } else {
            &[(RuleKind::Gauss4, &outer4), (RuleKind::VertexMidside7, &outer7)]
        };
        let candidates = self.element_candidates(k);
        let mut buf: Vec<(usize, QuadCell)> = Vec::new();
        for (kind, mapped) in sets {
            for (x, wx) in mapped.points.iter().zip(&mapped.weights) {
                let gx = (self.data.g)(*x);
                let cells: &[(usize, QuadCell)] = match &shared_decomp {
                    Some(d) => &d.cells,
                    None => {
                        decompose_ball_into(
                            mesh,
                            *x,
                            self.delta,
                            self.strategy,
                            self.cap_triangles,
                            &candidates,
                            &mut buf,
                        );
                        &buf
                    }
                };
                let mut i = 0;
                while i < cells.len() {
                    let kp = cells[i].0;
                    let mut j = i + 1;
                    while j < cells.len() && cells[j].0 == kp {
                        j += 1;
                    }
                    let use_group = mesh.elements[kp].region == Region::Omega
                        && (shifted || select_outer_rule(k, kp, mesh, self.delta) == *kind);
                    if use_group {
                        let inner_tri = mesh.triangle(kp);
                        let acc = pairs
                            .entry(kp)
                            .or_insert_with(|| LayerOuterAccumulator::new(mesh.elements[kp].vertex_indices));
                        self.accumulate_cells_layer_outer(acc, &inner_tri, &cells[i..j], *x, *wx, gx, scratch);
                    }
                    i = j;
                }
            }
        }
        for acc in pairs.values() {
            self.scatter_layer_outer(acc, out);
        }
    }

    /// Layer-outer counterpart of the barycenter-pair strategies.
    fn layer_pair_support_element(
        &self,
        k: usize,
        tri_k: &Triangle,
        scratch: &mut MappedRule,
        out: &mut ElementContribution,
    ) {
        let mesh = self.mesh;
        let mut candidates = mesh.elements_near(mesh.element_barycenter(k), self.delta + mesh.h_max);
        candidates.sort_unstable();
        let mut outer_cells = MappedRule { points: Vec::new(), weights: Vec::new() };
        for kp in candidates {
            if mesh.elements[kp].region != Region::Omega {
                continue;
            }
            let center = mesh.element_barycenter(kp);
            let ec = decompose_element_against_ball(tri_k, center, self.delta);
            let mut support: Vec<Triangle> = ec.triangles;
            if self.strategy == BallStrategy::BarycenterApproxCaps {
                for cap in &ec.caps {
                    support.extend(approximate_cap_triangles(cap, self.cap_triangles.max(1)));
                }
            }
            if support.is_empty() {
                continue;
            }
            let inner_tri = mesh.triangle(kp);
            let inner_cell = [(kp, QuadCell::Triangle(inner_tri))];
            let mut acc = LayerOuterAccumulator::new(mesh.elements[kp].vertex_indices);
            for cell in &support {
                map_to_cell_into(&self.g4, cell, &mut outer_cells);
                for (x, wx) in outer_cells.points.iter().zip(&outer_cells.weights) {
                    let gx = (self.data.g)(*x);
                    self.accumulate_cells_layer_outer(&mut acc, &inner_tri, &inner_cell, *x, *wx, gx, scratch);
                }
            }
            self.scatter_layer_outer(&acc, out);
        }
    }

    /// Point-based strategies: both outer point sets are evaluated and each
    /// inner element's contribution flows through the rule selected for the
    /// element pair.
    fn point_based_element(
        &self,
        k: usize,
        tri_k: &Triangle,
        nodes_k: [usize; 3],
        outer4: &MappedRule,
        scratch: &mut MappedRule,
        out: &mut ElementContribution,
    ) {
        let mesh = self.mesh;
        let mut outer7 = MappedRule { points: Vec::new(), weights: Vec::new() };
        map_to_cell_into(&self.v7, tri_k, &mut outer7);
        let mut pairs: BTreeMap<usize, PairAccumulator> = BTreeMap::new();
        let candidates = self.element_candidates(k);
        let mut cells: Vec<(usize, QuadCell)> = Vec::new();

        for (kind, mapped) in [(RuleKind::Gauss4, outer4), (RuleKind::VertexMidside7, &outer7)] {
            for (x, wx) in mapped.points.iter().zip(&mapped.weights) {
                let phix = tri_k.barycentric(*x);
                decompose_ball_into(mesh, *x, self.delta, self.strategy, self.cap_triangles, &candidates, &mut cells);
                let mut i = 0;
                while i < cells.len() {
                    let kp = cells[i].0;
                    let mut j = i + 1;
                    while j < cells.len() && cells[j].0 == kp {
                        j += 1;
                    }
                    if select_outer_rule(k, kp, mesh, self.delta) == kind {
                        let inner_tri = mesh.triangle(kp);
                        let acc = pairs.entry(kp).or_insert_with(|| {
                            PairAccumulator::new(nodes_k, mesh.elements[kp].vertex_indices, mesh.elements[kp].region)
                        });
                        self.accumulate_cells(acc, &inner_tri, &cells[i..j], *x, *wx, phix, scratch);
                    }
                    i = j;
                }
            }
        }
        for acc in pairs.values() {
            self.scatter(acc, out);
        }
    }

    /// Superset of elements any outer quadrature point of `k` can interact
    /// with, computed once per outer element.
    fn element_candidates(&self, k: usize) -> Vec<usize> {
        let mesh = self.mesh;
        let radius = self.delta + mesh.h_max + 0.67 * mesh.h_max + 1e-12;
        let mut v = mesh.elements_near(mesh.element_barycenter(k), radius);
        v.sort_unstable();
        v
    }

    /// Shifted strategies: one ball per outer element, centered at its
    /// barycenter and shared by all four outer points.
    fn shifted_element(
        &self,
        k: usize,
        tri_k: &Triangle,
        nodes_k: [usize; 3],
        outer4: &MappedRule,
        scratch: &mut MappedRule,
        out: &mut ElementContribution,
    ) {
        let mesh = self.mesh;
        let center = mesh.element_barycenter(k);
        let decomp = decompose_ball_at(mesh, center, center, self.delta, self.strategy, self.cap_triangles);
        let mut pairs: BTreeMap<usize, PairAccumulator> = BTreeMap::new();
        for (x, wx) in outer4.points.iter().zip(&outer4.weights) {
            let phix = tri_k.barycentric(*x);
            let cells = &decomp.cells;
            let mut i = 0;
            while i < cells.len() {
                let kp = cells[i].0;
                let mut j = i + 1;
                while j < cells.len() && cells[j].0 == kp {
                    j += 1;
                }
                let inner_tri = mesh.triangle(kp);
                let acc = pairs.entry(kp).or_insert_with(|| {
                    PairAccumulator::new(nodes_k, mesh.elements[kp].vertex_indices, mesh.elements[kp].region)
                });
                self.accumulate_cells(acc, &inner_tri, &cells[i..j], *x, *wx, phix, scratch);
                i = j;
            }
        }
        for acc in pairs.values() {
            self.scatter(acc, out);
        }
    }

    /// Barycenter-pair strategies: the inner decomposition is the barycenter
    /// ball (whole elements), and for each pair the outer integral runs over
    /// a polygonal approximation of the support region
    /// `E_k ∩ B(barycenter(E_k'))`, four-point rule on every sub-cell.
    fn pair_support_element(
        &self,
        k: usize,
        tri_k: &Triangle,
        nodes_k: [usize; 3],
        scratch: &mut MappedRule,
        out: &mut ElementContribution,
    ) {
        let mesh = self.mesh;
        let mut candidates = mesh.elements_near(mesh.element_barycenter(k), self.delta + mesh.h_max);
        candidates.sort_unstable();
        let mut outer_cells = MappedRule { points: Vec::new(), weights: Vec::new() };
        for kp in candidates {
            let center = mesh.element_barycenter(kp);
            let ec = decompose_element_against_ball(tri_k, center, self.delta);
            let mut support: Vec<Triangle> = ec.triangles;
            if self.strategy == BallStrategy::BarycenterApproxCaps {
                for cap in &ec.caps {
                    support.extend(approximate_cap_triangles(cap, self.cap_triangles.max(1)));
                }
            }
            if support.is_empty() {
                continue;
            }
            let inner_tri = mesh.triangle(kp);
            let inner_cell = [(kp, QuadCell::Triangle(inner_tri))];
            let mut acc =
                PairAccumulator::new(nodes_k, mesh.elements[kp].vertex_indices, mesh.elements[kp].region);
            for cell in &support {
                map_to_cell_into(&self.g4, cell, &mut outer_cells);
                for (x, wx) in outer_cells.points.iter().zip(&outer_cells.weights) {
                    let phix = tri_k.barycentric(*x);
                    self.accumulate_cells(&mut acc, &inner_tri, &inner_cell, *x, *wx, phix, scratch);
                }
            }
            self.scatter(&acc, out);
        }
    }
}

fn combine_triplets(mut t: Vec<(u32, u32, f64)>) -> Vec<(u32, u32, f64)> {
    t.sort_by_key(|&(r, c, _)| (r, c));
    let mut out: Vec<(u32, u32, f64)> = Vec::with_capacity(t.len() / 2);
    for (r, c, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out
}

fn combine_rhs(mut t: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    t.sort_by_key(|&(r, _)| r);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(t.len());
    for (r, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == r => last.1 += v,
            _ => out.push((r, v)),
        }
    }
    out
}

/// Assembles the stiffness matrix and right-hand side.
pub fn assemble(
    mesh: &Mesh,
    kernel: &Kernel,
    data: &ProblemData,
    strategy: BallStrategy,
    options: &AssembleOptions,
) -> Result<LinearSystem> {
    if (kernel.delta - mesh.delta).abs() > 1e-12 * mesh.delta {
        return Err(Error::InvalidArgument(format!(
            "kernel delta {} does not match mesh delta {}",
            kernel.delta, mesh.delta
        )));
    }
    if mesh.j_omega == 0 {
        return Err(Error::InvalidArgument("mesh has no interior nodes".into()));
    }

    let mut nodal_g = vec![0.0; mesh.num_vertices()];
    for (v, &rank) in mesh.order.iter().enumerate() {
        if rank >= mesh.j_omega {
            nodal_g[v] = (data.g)(mesh.vertex(v));
        }
    }

    let ws = Workspace {
        mesh,
        kernel,
        data,
        strategy,
        cap_triangles: options.cap_triangles,
        delta: mesh.delta,
        nodal_g,
        g3: rule(RuleKind::Gauss3),
        g4: rule(RuleKind::Gauss4),
        v7: rule(RuleKind::VertexMidside7),
    };

    // Domain elements always; layer elements only when their balls can reach
    // the domain (the rest of the layer never contributes).
    let reach = mesh.delta + 0.75 * mesh.h_max + 1e-9;
    let omega_elements: Vec<usize> = (0..mesh.num_elements())
        .filter(|&k| {
            if mesh.elements[k].region == Region::Omega {
                return true;
            }
            let b = mesh.element_barycenter(k);
            let dx = (-b.x).max(b.x - 1.0).max(0.0);
            let dy = (-b.y).max(b.y - 1.0).max(0.0);
            dx.hypot(dy) <= reach
        })
        .collect();

    let (row_ptr, col_idx) = build_pattern(mesh, mesh.delta);
    let mut values = vec![0.0; col_idx.len()];
    let mut rhs = vec![0.0; mesh.j_omega];

    let run = |values: &mut Vec<f64>, rhs: &mut Vec<f64>| {
        const CHUNK: usize = 512;
        for chunk in omega_elements.chunks(CHUNK) {
            let contribs: Vec<ElementContribution> =
                chunk.par_iter().map(|&k| ws.element_contribution(k)).collect();
            for c in contribs {
                for (r, col, v) in c.triplets {
                    let lo = row_ptr[r as usize];
                    let hi = row_ptr[r as usize + 1];
                    let i = col_idx[lo..hi]
                        .binary_search(&col)
                        .expect("assembled entry outside the sparsity pattern");
                    values[lo + i] += v;
                }
                for (r, v) in c.rhs {
                    rhs[r as usize] += v;
                }
            }
        }
    };

    if options.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        pool.install(|| run(&mut values, &mut rhs));
    } else {
        run(&mut values, &mut rhs);
    }

    let constraint_values: Vec<f64> = mesh.order_inv[mesh.j_omega..]
        .iter()
        .map(|&v| (data.g)(mesh.vertex(v)))
        .collect();

    Ok(LinearSystem {
        matrix: CsrMatrix { n: mesh.j_omega, row_ptr, col_idx, values },
        rhs,
        constraint_values,
        j_omega: mesh.j_omega,
    })
}

/// MatrixMarket coordinate export (1-based, lower triangle of the symmetric
/// matrix).
pub fn write_matrix_market(matrix: &CsrMatrix) -> String {
    let mut entries = Vec::new();
    for r in 0..matrix.n {
        for i in matrix.row_ptr[r]..matrix.row_ptr[r + 1] {
            let c = matrix.col_idx[i] as usize;
            if c <= r && matrix.values[i] != 0.0 {
                entries.push((r + 1, c + 1, matrix.values[i]));
            }
        }
    }
    let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    s.push_str(&format!("{} {} {}\n", matrix.n, matrix.n, entries.len()));
    for (r, c, v) in entries {
        s.push_str(&format!("{} {} {:.17e}\n", r, c, v));
    }
    s
}

/// Plain vector export: one value per line.
pub fn write_vector(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        s.push_str(&format!("{:.17e}\n", x));
    }
    s
}


#[cfg(test)]
mod debug_tests {
    use super::*;
    use crate::mesh::build_uniform_grid;

    #[test]
    #[ignore]
    fn drill_mirror_pair() {
        let delta = 0.1;
        let mesh = build_uniform_grid(10, delta).unwrap();
        let kernel = Kernel::constant_scaled(delta);
        let lin = |p: Point| 2.0 + 3.0 * p.x - p.y;
        let b = Point::new(0.3, 0.1);
        // inner integration of row-b test function against linear trial for
        // one outer element at one outer point
        let v7r = rule(RuleKind::VertexMidside7);
        let b_vertex = (0..mesh.num_vertices())
            .find(|&v| mesh.vertex(v).dist(b) < 1e-12)
            .unwrap();
        for k in [54usize, 33] {
            let tri = mesh.triangle(k);
            let mut mapped = MappedRule { points: Vec::new(), weights: Vec::new() };
            map_to_cell_into(&v7r, &tri, &mut mapped);
            println!("--- element {k}");
            for (x, wx) in mapped.points.iter().zip(&mapped.weights) {
                // full inner value: sum over cells of (u(y)-u(x)) (phi_b(y)-phi_b(x)) psi
                let d = crate::geometry::decompose_ball_at(&mesh, *x, *x, delta, BallStrategy::ExactCaps, 1);
                let g3 = rule(RuleKind::Gauss3);
                let mut scratch = MappedRule { points: Vec::new(), weights: Vec::new() };
                let phibx = hat_value(&mesh, k, b_vertex, *x);
                let ux = lin(*x);
                let mut total = 0.0;
                for (kp, cell) in &d.cells {
                    let mut one = |y: Point, wy: f64| {
                        let phiby = hat_value(&mesh, *kp, b_vertex, y);
                        total += wx * wy * kernel.psi(*x, y) * (lin(y) - ux) * (phiby - phibx);
                    };
                    match cell {
                        QuadCell::Triangle(t) => {
                            map_to_cell_into(&g3, t, &mut scratch);
                            for (y, wy) in scratch.points.iter().zip(&scratch.weights) {
                                one(*y, *wy);
                            }
                        }
                        QuadCell::Cap(cap) => {
                            let (y, wy) = cap_centroid_rule(cap);
                            one(y, wy);
                        }
                    }
                }
                println!("  x=({:+.6},{:+.6}) w={:+.4e}: contrib {:+.9e}, cells {}", x.x - b.x, x.y - b.y, wx, total, d.cells.len());
            }
        }
    }

    #[test]
    #[ignore]
    fn locate_linear_residual_sources() {
        let delta = 0.1;
        let mesh = build_uniform_grid(10, delta).unwrap();
        let kernel = Kernel::constant_scaled(delta);
        let lin = |p: Point| 2.0 + 3.0 * p.x - p.y;
        let data = ProblemData::new(|_| 0.0, lin);
        let mut nodal_g = vec![0.0; mesh.num_vertices()];
        for (v, &rank) in mesh.order.iter().enumerate() {
            if rank >= mesh.j_omega {
                nodal_g[v] = (data.g)(mesh.vertex(v));
            }
        }
        let ws = Workspace {
            mesh: &mesh,
            kernel: &kernel,
            data: &data,
            strategy: BallStrategy::ExactCaps,
            cap_triangles: 1,
            delta,
            nodal_g,
            g3: rule(RuleKind::Gauss3),
            g4: rule(RuleKind::Gauss4),
            v7: rule(RuleKind::VertexMidside7),
        };
        // row of the node at (0.3, 0.1)
        let b_vertex = (0..mesh.num_vertices())
            .find(|&v| mesh.vertex(v).dist(Point::new(0.3, 0.1)) < 1e-12)
            .unwrap();
        let b = mesh.order[b_vertex];
        let u: Vec<f64> = (0..mesh.j_omega).map(|r| lin(mesh.vertex(mesh.order_inv[r]))).collect();
        let reach = delta + 0.75 * mesh.h_max + 1e-9;
        let mut total = 0.0;
        for k in 0..mesh.num_elements() {
            if mesh.elements[k].region != Region::Omega {
                let bc = mesh.element_barycenter(k);
                let dx = (-bc.x).max(bc.x - 1.0).max(0.0);
                let dy = (-bc.y).max(bc.y - 1.0).max(0.0);
                if dx.hypot(dy) > reach {
                    continue;
                }
            }
            let c = ws.element_contribution(k);
            let mut contrib = 0.0;
            for &(r, col, v) in &c.triplets {
                if r as usize == b {
                    contrib += v * u[col as usize];
                }
            }
            for &(r, v) in &c.rhs {
                if r as usize == b {
                    contrib -= v;
                }
            }
            total += contrib;
            if contrib.abs() > 1e-8 {
                let bc = mesh.element_barycenter(k);
                println!(
                    "element {k} region {:?} bary ({:.4},{:.4}) dist-to-b {:.4}: {contrib:+.6e}",
                    mesh.elements[k].region,
                    bc.x,
                    bc.y,
                    bc.dist(Point::new(0.3, 0.1))
                );
            }
        }
        println!("row total {total:+.6e}");
    }
}
