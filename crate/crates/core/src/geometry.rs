//! Convex hulls, polygon areas and convex polygon overlap.
//!
//! Hulls use Andrew's monotone chain; intersections clip one convex polygon
//! against the half-planes of the other (Sutherland–Hodgman). Collinear
//! points are dropped from hulls, and anything with fewer than three
//! non-collinear vertices collapses to the empty polygon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for orientation tests.
pub const EPS_GEO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn dist_sq(self, o: Point2) -> f64 {
        let (dx, dy) = (self.x - o.x, self.y - o.y);
        dx * dx + dy * dy
    }
}

/// Twice the signed area of triangle `o, a, b`; positive for a left turn.
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise, strictly convex polygon. Empty when degenerate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Axis-aligned rectangle, handy for tests and arena bounds.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        convex_hull(&[
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
        .unwrap_or_default()
    }

    /// Inside or on the boundary, up to `EPS_GEO`.
    pub fn contains(&self, p: Point2) -> bool {
        if self.vertices.len() < 3 {
            return false;
        }
        let n = self.vertices.len();
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= -EPS_GEO)
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }
}

/// Strict convex hull in counter-clockwise order, starting from the
/// lexicographically smallest vertex.
pub fn convex_hull(points: &[Point2]) -> Result<ConvexPolygon, GeometryError> {
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(ConvexPolygon::empty());
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS_GEO {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= EPS_GEO
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Ok(ConvexPolygon::empty());
    }
    Ok(ConvexPolygon { vertices: hull })
}

/// Shoelace area; zero for empty polygons.
pub fn polygon_area(poly: &ConvexPolygon) -> f64 {
    let v = &poly.vertices;
    if v.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        twice += a.x * b.y - b.x * a.y;
    }
    (0.5 * twice).max(0.0)
}

/// Overlap of two convex polygons: `a` clipped against every edge of `b`.
pub fn convex_intersection(a: &ConvexPolygon, b: &ConvexPolygon) -> ConvexPolygon {
    if a.vertices.len() < 3 || b.vertices.len() < 3 {
        return ConvexPolygon::empty();
    }
    let mut output = a.vertices.clone();
    let n = b.vertices.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let (e0, e1) = (b.vertices[i], b.vertices[(i + 1) % n]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(e0, e1, cur) >= 0.0;
            let prev_in = cross(e0, e1, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, e0, e1));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, e0, e1));
            }
        }
    }
    // Clipping can leave duplicate or collinear vertices; re-hulling removes them.
    convex_hull(&output).unwrap_or_default()
}

/// Area of `a ∪ b` by inclusion–exclusion.
pub fn union_area(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    polygon_area(a) + polygon_area(b) - polygon_area(&convex_intersection(a, b))
}

/// Point where segment `p q` crosses the infinite line through `a b`.
fn line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < f64::MIN_POSITIVE {
        return p;
    }
    let t = dp / denom;
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}
