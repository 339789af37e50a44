//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod fsm_table;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use walling_core::geometry::{convex_hull, ConvexPolygon};
use walling_core::Point2;

pub fn orient(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn strictly_inside_triangle(p: Point2, a: Point2, b: Point2, c: Point2) -> bool {
    let (d1, d2, d3) = (orient(a, b, p), orient(b, c, p), orient(c, a, p));
    (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
}

/// Indices of hull vertices: points not strictly inside any triangle of
/// other points. Exact for points in general position.
pub fn hull_by_triangles(points: &[Point2]) -> Vec<usize> {
    let n = points.len();
    (0..n)
        .filter(|&p| {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        if [i, j, k].contains(&p) {
                            continue;
                        }
                        if strictly_inside_triangle(points[p], points[i], points[j], points[k]) {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .collect()
}

/// Indices of hull vertices: endpoints of pairs with every other point
/// strictly on one side. O(n³). Exact for points in general position.
pub fn hull_by_edges(points: &[Point2]) -> Vec<usize> {
    let n = points.len();
    let mut on_hull = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let all_left = (0..n)
                .filter(|&k| k != i && k != j)
                .all(|k| orient(points[i], points[j], points[k]) > 0.0);
            if all_left {
                on_hull[i] = true;
                on_hull[j] = true;
            }
        }
    }
    (0..n).filter(|&i| on_hull[i]).collect()
}

/// Indices in `points` of the vertices of `hull`, sorted.
pub fn vertex_indices(points: &[Point2], hull: &ConvexPolygon) -> Vec<usize> {
    let mut idx: Vec<usize> = hull
        .vertices()
        .iter()
        .map(|v| points.iter().position(|p| p == v).expect("hull vertex is an input point"))
        .collect();
    idx.sort_unstable();
    idx
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Point2> {
    (0..n)
        .map(|_| Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi)))
        .collect()
}

/// Hull of `n` random points in the square [lo, hi]².
pub fn random_convex_polygon(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> ConvexPolygon {
    loop {
        let hull = convex_hull(&random_points(rng, n, lo, hi)).unwrap();
        if !hull.is_empty() {
            return hull;
        }
    }
}

/// Inside-or-on test against a counter-clockwise vertex list.
pub fn inside_ccw(vertices: &[Point2], p: Point2) -> bool {
    let n = vertices.len();
    n >= 3 && (0..n).all(|i| orient(vertices[i], vertices[(i + 1) % n], p) >= 0.0)
}

pub fn bbox(vertices: &[Point2]) -> (f64, f64, f64, f64) {
    vertices.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

/// Vertices of a ∩ b found by brute force: corners of each polygon lying in
/// the other, plus every crossing of an edge of `a` with an edge of `b`.
pub fn intersection_vertices(a: &ConvexPolygon, b: &ConvexPolygon) -> Vec<Point2> {
    let (va, vb) = (a.vertices(), b.vertices());
    let mut out: Vec<Point2> = va.iter().copied().filter(|&p| inside_ccw(vb, p)).collect();
    out.extend(vb.iter().copied().filter(|&p| inside_ccw(va, p)));
    for i in 0..va.len() {
        let (p, r) = (va[i], va[(i + 1) % va.len()]);
        for j in 0..vb.len() {
            let (q, s) = (vb[j], vb[(j + 1) % vb.len()]);
            let (rx, ry, sx, sy) = (r.x - p.x, r.y - p.y, s.x - q.x, s.y - q.y);
            let denom = rx * sy - ry * sx;
            if denom == 0.0 {
                continue;
            }
            let t = ((q.x - p.x) * sy - (q.y - p.y) * sx) / denom;
            let u = ((q.x - p.x) * ry - (q.y - p.y) * rx) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                out.push(Point2::new(p.x + t * rx, p.y + t * ry));
            }
        }
    }
    out
}

/// Monte Carlo estimate of area(a ∩ b) sampling the overlap of the two
/// bounding boxes. Returns (estimate, fraction of samples that hit).
pub fn mc_intersection_area(a: &ConvexPolygon, b: &ConvexPolygon, samples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (ax0, ay0, ax1, ay1) = bbox(a.vertices());
    let (bx0, by0, bx1, by1) = bbox(b.vertices());
    let (x0, y0, x1, y1) = (ax0.max(bx0), ay0.max(by0), ax1.min(bx1), ay1.min(by1));
    if x0 >= x1 || y0 >= y1 {
        return (0.0, 0.0);
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = Point2::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
        if inside_ccw(a.vertices(), p) && inside_ccw(b.vertices(), p) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    (frac * (x1 - x0) * (y1 - y0), frac)
}

/// Monte Carlo estimate of a polygon's area over its bounding box.
pub fn mc_area(poly: &ConvexPolygon, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    mc_intersection_area(poly, poly, samples, rng).0
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
