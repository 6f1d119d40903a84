//! Conforming triangulations of the unit square and its interaction layer.
//!
//! The computational domain is the open unit square; the interaction layer of
//! thickness at least `delta` surrounds it and carries the volume-constraint
//! data. Elements never straddle the common boundary, and the triangulations
//! on both sides share their boundary vertices.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::point::{Point, Triangle};

/// Region an element belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// The open unit square where the equation is posed.
    Omega,
    /// The surrounding interaction layer carrying the constraint data.
    OmegaI,
}

/// A mesh vertex.
#[derive(Clone, Copy, Debug)]
pub struct Vertex {
    pub x: Point,
}

/// A triangular element: three vertex indices in counterclockwise order plus
/// a region label.
#[derive(Clone, Copy, Debug)]
pub struct Element {
    pub vertex_indices: [usize; 3],
    pub region: Region,
}

/// Relative tolerance below which a signed area counts as degenerate.
const DEGENERATE_AREA_REL: f64 = 1e-14;

/// A conforming triangulation of the square plus its interaction layer.
///
/// Vertices classified as interior come first in the system ordering
/// (ranks `0..j_omega`), followed by the constrained layer vertices. A vertex
/// is interior exactly when every element incident to it lies in `Omega`;
/// vertices on the common boundary are therefore constrained.
#[derive(Debug)]
pub struct Mesh {
    pub vertices: Vec<Vertex>,
    pub elements: Vec<Element>,
    pub delta: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Cached element barycenters.
    pub barycenters: Vec<Point>,
    /// System rank of each vertex: interior vertices get `0..j_omega`.
    pub order: Vec<usize>,
    /// Vertex id for each system rank (inverse of `order`).
    pub order_inv: Vec<usize>,
    /// Number of interior vertices.
    pub j_omega: usize,
    /// Number of elements labeled `Omega`.
    pub k_omega: usize,
    index: SpatialIndex,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i].x
    }

    pub fn triangle(&self, k: usize) -> Triangle {
        let e = &self.elements[k];
        Triangle::new(
            self.vertices[e.vertex_indices[0]].x,
            self.vertices[e.vertex_indices[1]].x,
            self.vertices[e.vertex_indices[2]].x,
        )
    }

    /// Arithmetic mean of the three element vertices.
    pub fn element_barycenter(&self, k: usize) -> Point {
        self.barycenters[k]
    }

    /// Whether a vertex is an interior (unknown-carrying) node.
    pub fn is_interior_vertex(&self, v: usize) -> bool {
        self.order[v] < self.j_omega
    }

    /// Element indices whose barycenter lies within `radius` of `x`.
    pub fn elements_near(&self, x: Point, radius: f64) -> Vec<usize> {
        self.index.query(x, radius, &self.barycenters)
    }

    /// Element containing `p`, if any (ties broken by lowest index).
    pub fn locate(&self, p: Point) -> Option<usize> {
        let mut buf = Vec::new();
        self.locate_with(p, &mut buf)
    }

    /// Allocation-free point location through a caller-provided scratch
    /// buffer; used by samplers that locate millions of points.
    pub fn locate_with(&self, p: Point, buf: &mut Vec<usize>) -> Option<usize> {
        self.index.query_into(p, self.h_max, &self.barycenters, buf);
        buf.sort_unstable();
        buf.iter().copied().find(|&k| self.triangle(k).contains(p, 1e-12))
    }

    /// (h_min, h_max, J, J_Omega, K, K_Omega) recomputed from the geometry.
    pub fn statistics(&self) -> MeshStatistics {
        let (h_min, h_max) = diameter_range(&self.vertices, &self.elements);
        MeshStatistics {
            h_min,
            h_max,
            num_nodes: self.vertices.len(),
            j_omega: self.j_omega,
            num_elements: self.elements.len(),
            k_omega: self.k_omega,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshStatistics {
    pub h_min: f64,
    pub h_max: f64,
    pub num_nodes: usize,
    pub j_omega: usize,
    pub num_elements: usize,
    pub k_omega: usize,
}

fn diameter_range(vertices: &[Vertex], elements: &[Element]) -> (f64, f64) {
    let mut h_min = f64::INFINITY;
    let mut h_max: f64 = 0.0;
    for e in elements {
        let t = Triangle::new(
            vertices[e.vertex_indices[0]].x,
            vertices[e.vertex_indices[1]].x,
            vertices[e.vertex_indices[2]].x,
        );
        let d = t.diameter();
        h_min = h_min.min(d);
        h_max = h_max.max(d);
    }
    (h_min, h_max)
}

/// Uniform bucket grid over element barycenters.
#[derive(Debug)]
struct SpatialIndex {
    min: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl SpatialIndex {
    fn build(barycenters: &[Point], cell: f64) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for b in barycenters {
            min.x = min.x.min(b.x);
            min.y = min.y.min(b.y);
            max.x = max.x.max(b.x);
            max.y = max.y.max(b.y);
        }
        let cell = cell.max(1e-12);
        let nx = (((max.x - min.x) / cell).floor() as usize + 1).max(1);
        let ny = (((max.y - min.y) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (k, b) in barycenters.iter().enumerate() {
            let ix = (((b.x - min.x) / cell) as usize).min(nx - 1);
            let iy = (((b.y - min.y) / cell) as usize).min(ny - 1);
            buckets[iy * nx + ix].push(k as u32);
        }
        SpatialIndex { min, cell, nx, ny, buckets }
    }

    fn query(&self, x: Point, radius: f64, barycenters: &[Point]) -> Vec<usize> {
        let mut out = Vec::new();
        self.query_into(x, radius, barycenters, &mut out);
        out
    }

    fn query_into(&self, x: Point, radius: f64, barycenters: &[Point], out: &mut Vec<usize>) {
        out.clear();
        let lo_x = ((x.x - radius - self.min.x) / self.cell).floor().max(0.0) as usize;
        let lo_y = ((x.y - radius - self.min.y) / self.cell).floor().max(0.0) as usize;
        let hi_x = (((x.x + radius - self.min.x) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let hi_y = (((x.y + radius - self.min.y) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        if lo_x > hi_x || lo_y > hi_y {
            return;
        }
        let r2 = radius * radius;
        for iy in lo_y..=hi_y {
            for ix in lo_x..=hi_x {
                for &k in &self.buckets[iy * self.nx + ix] {
                    if barycenters[k as usize].dist_sq(x) < r2 {
                        out.push(k as usize);
                    }
                }
            }
        }
    }
}

/// Builds a mesh from raw vertices and elements, computing the node ordering
/// and validating every invariant. Orientation is normalized; everything else
/// is rejected rather than repaired.
fn finish_mesh(
    mut vertices: Vec<Vertex>,
    mut elements: Vec<Element>,
    delta: f64,
    analytic_h: Option<(f64, f64)>,
) -> Result<Mesh> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if elements.is_empty() {
        return Err(Error::MeshInvalid("mesh has no elements".into()));
    }
    for (i, v) in vertices.iter().enumerate() {
        if !v.x.is_finite() {
            return Err(Error::MeshInvalid(format!("vertex {i} has non-finite coordinates")));
        }
    }

    // Normalize orientation, reject degenerate elements.
    let (_, h_max_raw) = diameter_range(&vertices, &elements);
    let area_tol = DEGENERATE_AREA_REL * h_max_raw * h_max_raw;
    for (k, e) in elements.iter_mut().enumerate() {
        let t = Triangle::new(
            vertices[e.vertex_indices[0]].x,
            vertices[e.vertex_indices[1]].x,
            vertices[e.vertex_indices[2]].x,
        );
        let a = t.signed_area();
        if a.abs() <= area_tol {
            return Err(Error::MeshInvalid(format!("element {k} is degenerate (area {a:.3e})")));
        }
        if a < 0.0 {
            e.vertex_indices.swap(1, 2);
        }
    }

    // Straddle check: Omega elements have all vertices in the closed unit
    // square; OmegaI elements have all vertices outside the open square.
    let eps = 1e-12;
    for (k, e) in elements.iter().enumerate() {
        for &vi in &e.vertex_indices {
            let p = vertices[vi].x;
            match e.region {
                Region::Omega => {
                    if p.x < -eps || p.x > 1.0 + eps || p.y < -eps || p.y > 1.0 + eps {
                        return Err(Error::MeshInvalid(format!(
                            "element {k} labeled Omega has vertex ({}, {}) outside the closed unit square",
                            p.x, p.y
                        )));
                    }
                }
                Region::OmegaI => {
                    if p.x > eps && p.x < 1.0 - eps && p.y > eps && p.y < 1.0 - eps {
                        return Err(Error::MeshInvalid(format!(
                            "element {k} labeled OmegaI straddles the boundary: vertex ({}, {}) is strictly inside",
                            p.x, p.y
                        )));
                    }
                }
            }
        }
    }

    // Conformity: every edge appears in one or two elements with matching
    // vertex pairs, and edges of Omega elements always appear twice.
    let mut edge_count: HashMap<(usize, usize), (u32, bool)> = HashMap::new();
    for e in &elements {
        let [a, b, c] = e.vertex_indices;
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let key = (u.min(v), u.max(v));
            let entry = edge_count.entry(key).or_insert((0, false));
            entry.0 += 1;
            entry.1 |= e.region == Region::Omega;
        }
    }
    let mut boundary_edges = Vec::new();
    for (&(u, v), &(count, touches_omega)) in &edge_count {
        if count > 2 {
            return Err(Error::MeshInvalid(format!(
                "edge ({u}, {v}) is shared by {count} elements; mesh is not conforming"
            )));
        }
        if count == 1 {
            if touches_omega {
                return Err(Error::MeshInvalid(format!(
                    "edge ({u}, {v}) of an Omega element has no neighbor; the layer does not enclose the domain"
                )));
            }
            boundary_edges.push((u, v));
        }
    }

    // Layer sufficiency: the outer boundary stays at distance >= delta from
    // the unit square, checked on vertices and edge midpoints.
    for &(u, v) in &boundary_edges {
        let a = vertices[u].x;
        let b = vertices[v].x;
        let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        for p in [a, b, mid] {
            let dx = (0.0 - p.x).max(p.x - 1.0).max(0.0);
            let dy = (0.0 - p.y).max(p.y - 1.0).max(0.0);
            if dx.hypot(dy) < delta - 1e-10 {
                return Err(Error::MeshInvalid(format!(
                    "outer boundary point ({}, {}) is closer than delta to the domain",
                    p.x, p.y
                )));
            }
        }
    }

    // Node ordering: a vertex is interior iff all incident elements are Omega.
    let mut touches_layer = vec![false; vertices.len()];
    let mut touches_any = vec![false; vertices.len()];
    for e in &elements {
        for &vi in &e.vertex_indices {
            touches_any[vi] = true;
            if e.region == Region::OmegaI {
                touches_layer[vi] = true;
            }
        }
    }
    if let Some(lone) = touches_any.iter().position(|&t| !t) {
        return Err(Error::MeshInvalid(format!("vertex {lone} belongs to no element")));
    }
    let mut order = vec![0usize; vertices.len()];
    let mut order_inv = Vec::with_capacity(vertices.len());
    for (v, &layered) in touches_layer.iter().enumerate() {
        if !layered {
            order[v] = order_inv.len();
            order_inv.push(v);
        }
    }
    let j_omega = order_inv.len();
    for (v, &layered) in touches_layer.iter().enumerate() {
        if layered {
            order[v] = order_inv.len();
            order_inv.push(v);
        }
    }

    let barycenters: Vec<Point> = elements
        .iter()
        .map(|e| {
            Triangle::new(
                vertices[e.vertex_indices[0]].x,
                vertices[e.vertex_indices[1]].x,
                vertices[e.vertex_indices[2]].x,
            )
            .centroid()
        })
        .collect();
    let k_omega = elements.iter().filter(|e| e.region == Region::Omega).count();
    let (h_min, h_max) = match analytic_h {
        Some(hh) => hh,
        None => diameter_range(&vertices, &elements),
    };
    let index = SpatialIndex::build(&barycenters, h_max.max(1e-12));

    vertices.shrink_to_fit();
    elements.shrink_to_fit();
    Ok(Mesh {
        vertices,
        elements,
        delta,
        h_min,
        h_max,
        barycenters,
        order,
        order_inv,
        j_omega,
        k_omega,
        index,
    })
}

/// Builds the uniform criss-cross grid: squares of side 1/n split along the
/// main diagonal, covering `[-L, 1+L]^2` with `L = ceil(delta*n)/n` so the
/// layer is a whole number of cells and never under-covers the horizon.
pub fn build_uniform_grid(n: usize, delta: f64) -> Result<Mesh> {
    let (vertices, elements) = uniform_grid_raw(n, delta)?;
    // All elements are congruent right triangles, so both extremes of the
    // per-element diameter equal the cell diagonal.
    let diag = std::f64::consts::SQRT_2 / n as f64;
    finish_mesh(vertices, elements, delta, Some((diag, diag)))
}

fn uniform_grid_raw(n: usize, delta: f64) -> Result<(Vec<Vertex>, Vec<Element>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be at least 2, got {n}")));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let layer = (delta * n as f64).ceil() as i64;
    let n_i = n as i64;
    let lo = -layer;
    let hi = n_i + layer;
    let side = (hi - lo + 1) as usize;
    let nf = n as f64;

    let mut vertices = Vec::with_capacity(side * side);
    for j in lo..=hi {
        for i in lo..=hi {
            vertices.push(Vertex { x: Point::new(i as f64 / nf, j as f64 / nf) });
        }
    }
    let vid = |i: i64, j: i64| ((j - lo) as usize) * side + (i - lo) as usize;

    let mut elements = Vec::with_capacity(2 * (side - 1) * (side - 1));
    for j in lo..hi {
        for i in lo..hi {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            let region = if i >= 0 && i < n_i && j >= 0 && j < n_i {
                Region::Omega
            } else {
                Region::OmegaI
            };
            elements.push(Element { vertex_indices: [v00, v10, v11], region });
            elements.push(Element { vertex_indices: [v00, v11, v01], region });
        }
    }
    Ok((vertices, elements))
}

/// Uniform grid with vertices remapped by `(x1, x2) -> (x1, x2^2)`.
///
/// The map is applied to every vertex with `x2` in `[0, 1]`: it fixes the
/// bottom and top edges, slides vertices along the left and right edges, and
/// compresses the side-layer cells in lockstep with the interior columns, so
/// every cell stays an axis-aligned rectangle split into two triangles and no
/// element inverts or straddles.
pub fn build_squared_grid(n: usize, delta: f64) -> Result<Mesh> {
    let (mut vertices, elements) = uniform_grid_raw(n, delta)?;
    for v in &mut vertices {
        if v.x.y >= 0.0 && v.x.y <= 1.0 {
            v.x.y *= v.x.y;
        }
    }
    // The raw grid is counterclockwise, so a nonpositive area here means the
    // remap inverted an element. Checked before finish_mesh, which would
    // otherwise normalize the orientation and hide the inversion.
    for (k, e) in elements.iter().enumerate() {
        let t = Triangle::new(
            vertices[e.vertex_indices[0]].x,
            vertices[e.vertex_indices[1]].x,
            vertices[e.vertex_indices[2]].x,
        );
        if t.signed_area() <= 0.0 {
            return Err(Error::Construction(format!(
                "coordinate remap inverted element {k}"
            )));
        }
    }
    finish_mesh(vertices, elements, delta, None)
}

/// Parses the line-oriented mesh text format:
///
/// ```text
/// nlmesh 1 <delta>
/// <num_vertices> <num_elements>
/// <x1> <x2>                 (one line per vertex)
/// <i0> <i1> <i2> <region>   (0-based indices; region 0=Omega, 1=OmegaI)
/// ```
///
/// Lines starting with `#` are comments. The node ordering is computed on
/// load; invariant violations are rejected, never repaired.
pub fn load_mesh(path: &Path, delta: f64) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    let mesh = parse_mesh(&text)?;
    if (mesh.delta - delta).abs() > 1e-12 * delta.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "requested delta {} does not match file header delta {}",
            delta, mesh.delta
        )));
    }
    Ok(mesh)
}

/// Loads a mesh using the delta recorded in its header.
pub fn load_mesh_file(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines
        .next()
        .ok_or_else(|| Error::MeshParse { line: 0, message: "empty file".into() })?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("nlmesh") || parts.next() != Some("1") {
        return Err(Error::MeshParse { line: ln, message: "expected header `nlmesh 1 <delta>`".into() });
    }
    let delta: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MeshParse { line: ln, message: "missing or malformed delta".into() })?;

    let (ln, counts) = lines
        .next()
        .ok_or_else(|| Error::MeshParse { line: ln, message: "missing counts line".into() })?;
    let mut parts = counts.split_whitespace();
    let nv: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MeshParse { line: ln, message: "malformed vertex count".into() })?;
    let ne: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MeshParse { line: ln, message: "malformed element count".into() })?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::MeshParse { line: 0, message: "unexpected end of vertex list".into() })?;
        let mut parts = l.split_whitespace();
        let x: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MeshParse { line: ln, message: "malformed vertex coordinate".into() })?;
        let y: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MeshParse { line: ln, message: "malformed vertex coordinate".into() })?;
        vertices.push(Vertex { x: Point::new(x, y) });
    }

    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::MeshParse { line: 0, message: "unexpected end of element list".into() })?;
        let mut parts = l.split_whitespace();
        let mut idx = [0usize; 3];
        for slot in &mut idx {
            *slot = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MeshParse { line: ln, message: "malformed vertex index".into() })?;
            if *slot >= nv {
                return Err(Error::MeshParse {
                    line: ln,
                    message: format!("vertex index {} out of range (num_vertices = {nv})", slot),
                });
            }
        }
        let region = match parts.next() {
            Some("0") => Region::Omega,
            Some("1") => Region::OmegaI,
            _ => {
                return Err(Error::MeshParse { line: ln, message: "region must be 0 (Omega) or 1 (OmegaI)".into() })
            }
        };
        elements.push(Element { vertex_indices: idx, region });
    }

    finish_mesh(vertices, elements, delta, None)
}

/// Serializes a mesh back to the text format. Intended for tests and small
/// utilities, so no streaming.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str(&format!("nlmesh 1 {:.17e}\n", mesh.delta));
    s.push_str(&format!("{} {}\n", mesh.num_vertices(), mesh.num_elements()));
    for v in &mesh.vertices {
        s.push_str(&format!("{:.17e} {:.17e}\n", v.x.x, v.x.y));
    }
    for e in &mesh.elements {
        let r = if e.region == Region::Omega { 0 } else { 1 };
        s.push_str(&format!(
            "{} {} {} {}\n",
            e.vertex_indices[0], e.vertex_indices[1], e.vertex_indices[2], r
        ));
    }
    s
}
