//! Minimal 2D point/vector arithmetic used throughout the crate.

use std::ops::{Add, Mul, Neg, Sub};

/// A point (or vector) in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product, i.e. the signed parallelogram area.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn dist_sq(self, other: Point) -> f64 {
        (self - other).norm_sq()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Signed area of the triangle (a, b, c); positive for counterclockwise order.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b - a).cross(c - a)
}

/// Vertices of a triangle, counterclockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub v: [Point; 3],
}

impl Triangle {
    pub fn new(a: Point, b: Point, c: Point) -> Self {
        Triangle { v: [a, b, c] }
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(self.v[0], self.v[1], self.v[2])
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point {
        Point::new(
            (self.v[0].x + self.v[1].x + self.v[2].x) / 3.0,
            (self.v[0].y + self.v[1].y + self.v[2].y) / 3.0,
        )
    }

    /// Longest edge length; used as the element diameter.
    pub fn diameter(&self) -> f64 {
        let e0 = self.v[0].dist(self.v[1]);
        let e1 = self.v[1].dist(self.v[2]);
        let e2 = self.v[2].dist(self.v[0]);
        e0.max(e1).max(e2)
    }

    /// Barycentric coordinates of `p` with respect to this triangle.
    ///
    /// For a degenerate triangle the result is non-finite; callers are
    /// expected to have validated the mesh beforehand.
    pub fn barycentric(&self, p: Point) -> [f64; 3] {
        let det = (self.v[1] - self.v[0]).cross(self.v[2] - self.v[0]);
        let l1 = (p - self.v[0]).cross(self.v[2] - self.v[0]) / det;
        let l2 = (self.v[1] - self.v[0]).cross(p - self.v[0]) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let l = self.barycentric(p);
        l[0] >= -tol && l[1] >= -tol && l[2] >= -tol
    }
}
