//! Reference-triangle quadrature rules and their affine pushforward.
//!
//! Points are stored in barycentric coordinates on the reference triangle
//! (0,0)-(1,0)-(0,1); weights sum to the reference area 1/2. The outer-rule
//! selector implements the Case-1/Case-2 split: a plain four-point rule when
//! the inner element is wholly inside the interaction region of the outer
//! one, and the vertex/midside seven-point rule otherwise, whose boundary
//! points keep peripheral inner elements from being missed entirely.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::point::{Point, Triangle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleKind {
    /// One point at the centroid, precision 1.
    Centroid1,
    /// Three points at the edge midpoints, precision 2.
    Gauss3,
    /// Four-point symmetric rule of precision 3 (centroid weight is
    /// negative; that is forced for this point count and symmetry).
    Gauss4,
    /// Barycenter + vertices + midsides, precision 3. The vertex and midside
    /// points are what make it useful for partially-supported integrands.
    VertexMidside7,
    /// Seven-point symmetric rule of precision 5, used to measure L2 errors.
    ErrorRule,
}

/// An immutable rule on the reference triangle.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    /// Barycentric coordinates of each point.
    pub points: Vec<[f64; 3]>,
    /// Weights, summing to 1/2.
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub precision: u32,
}

pub fn rule(kind: RuleKind) -> QuadratureRule {
    match kind {
        RuleKind::Centroid1 => QuadratureRule {
            kind,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
            precision: 1,
        },
        RuleKind::Gauss3 => QuadratureRule {
            kind,
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![1.0 / 6.0; 3],
            precision: 2,
        },
        RuleKind::Gauss4 => {
            let a = 1.0 / 5.0;
            QuadratureRule {
                kind,
                points: vec![
                    [1.0 / 3.0; 3],
                    [1.0 - 2.0 * a, a, a],
                    [a, 1.0 - 2.0 * a, a],
                    [a, a, 1.0 - 2.0 * a],
                ],
                weights: vec![-27.0 / 96.0, 25.0 / 96.0, 25.0 / 96.0, 25.0 / 96.0],
                precision: 3,
            }
        }
        RuleKind::VertexMidside7 => QuadratureRule {
            kind,
            points: vec![
                [1.0 / 3.0; 3],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.5, 0.5, 0.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5],
            ],
            weights: vec![
                27.0 / 120.0,
                3.0 / 120.0,
                3.0 / 120.0,
                3.0 / 120.0,
                8.0 / 120.0,
                8.0 / 120.0,
                8.0 / 120.0,
            ],
            precision: 3,
        },
        RuleKind::ErrorRule => {
            // Radon's degree-5 rule: centroid plus two symmetric orbits.
            let s15 = 15f64.sqrt();
            let a1 = (6.0 + s15) / 21.0;
            let a2 = (6.0 - s15) / 21.0;
            let w0 = 9.0 / 40.0 * 0.5;
            let w1 = (155.0 + s15) / 1200.0 * 0.5;
            let w2 = (155.0 - s15) / 1200.0 * 0.5;
            let orbit = |a: f64| [[1.0 - 2.0 * a, a, a], [a, 1.0 - 2.0 * a, a], [a, a, 1.0 - 2.0 * a]];
            let mut points = vec![[1.0 / 3.0; 3]];
            points.extend_from_slice(&orbit(a1));
            points.extend_from_slice(&orbit(a2));
            QuadratureRule {
                kind,
                points,
                weights: vec![w0, w1, w1, w1, w2, w2, w2],
                precision: 5,
            }
        }
    }
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A rule mapped to a physical triangle: points in physical coordinates,
/// weights scaled so they sum to the cell area.
#[derive(Clone, Debug)]
pub struct MappedRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

/// Affine image of a reference rule on `cell`; weights are scaled by the
/// Jacobian `2 * area`, preserving the polynomial precision.
pub fn map_to_cell(rule: &QuadratureRule, cell: &Triangle) -> Result<MappedRule> {
    let area = cell.area();
    if !(area > 0.0) {
        return Err(Error::InvalidArgument("cannot map a rule onto a degenerate triangle".into()));
    }
    let jac = 2.0 * area;
    let points = rule
        .points
        .iter()
        .map(|l| cell.v[0] * l[0] + cell.v[1] * l[1] + cell.v[2] * l[2])
        .collect();
    let weights = rule.weights.iter().map(|w| w * jac).collect();
    Ok(MappedRule { points, weights })
}

/// Maps a rule into `buf` without allocating; `buf` is cleared first.
pub fn map_to_cell_into(rule: &QuadratureRule, cell: &Triangle, buf: &mut MappedRule) {
    let jac = 2.0 * cell.area();
    buf.points.clear();
    buf.weights.clear();
    buf.points.extend(
        rule.points
            .iter()
            .map(|l| cell.v[0] * l[0] + cell.v[1] * l[1] + cell.v[2] * l[2]),
    );
    buf.weights.extend(rule.weights.iter().map(|w| w * jac));
}

/// Case-1/Case-2 outer-rule selector: the four-point rule when the inner
/// element is safely inside the interaction region of the outer one
/// (barycenter distance below `delta - h_max`), the vertex/midside rule
/// otherwise. `h_max` is the global largest element diameter.
pub fn select_outer_rule(outer: usize, inner: usize, mesh: &Mesh, delta: f64) -> RuleKind {
    let d = mesh.element_barycenter(outer).dist(mesh.element_barycenter(inner));
    if d < delta - mesh.h_max {
        RuleKind::Gauss4
    } else {
        RuleKind::VertexMidside7
    }
}
