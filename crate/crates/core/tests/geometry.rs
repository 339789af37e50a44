mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use walling_core::geometry::{convex_hull, convex_intersection, polygon_area, union_area, ConvexPolygon, EPS_GEO};
use walling_core::{GeometryError, Point2};

use common::*;

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn assert_ccw(poly: &ConvexPolygon) {
    let v = poly.vertices();
    let n = v.len();
    for i in 0..n {
        assert!(orient(v[i], v[(i + 1) % n], v[(i + 2) % n]) > EPS_GEO, "not strictly convex CCW: {v:?}");
    }
}

#[test]
fn triangle_hull_is_ccw_with_its_three_vertices() {
    let pts = [p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)];
    let hull = convex_hull(&pts).unwrap();
    assert_eq!(hull.vertices().len(), 3);
    assert_eq!(vertex_indices(&pts, &hull), vec![0, 1, 2]);
    assert_ccw(&hull);
}

#[test]
fn interior_point_is_dropped() {
    let pts = [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0), p(0.5, 0.5)];
    let hull = convex_hull(&pts).unwrap();
    assert_eq!(vertex_indices(&pts, &hull), vec![0, 1, 2, 3]);
    assert_ccw(&hull);
    assert_eq!(polygon_area(&hull), 1.0);
}

#[test]
fn collinear_points_are_excluded_and_degenerate_sets_are_empty() {
    let square_with_midpoints = [
        p(0.0, 0.0),
        p(0.5, 0.0),
        p(1.0, 0.0),
        p(1.0, 0.5),
        p(1.0, 1.0),
        p(0.0, 1.0),
    ];
    assert_eq!(convex_hull(&square_with_midpoints).unwrap().vertices().len(), 4);
    assert!(convex_hull(&[]).unwrap().is_empty());
    assert!(convex_hull(&[p(1.0, 1.0), p(2.0, 2.0)]).unwrap().is_empty());
    assert!(convex_hull(&[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0), p(3.0, 3.0)])
        .unwrap()
        .is_empty());
    assert!(convex_hull(&[p(1.0, 1.0); 5]).unwrap().is_empty());
}

#[test]
fn non_finite_input_is_rejected() {
    let err = convex_hull(&[p(0.0, 0.0), p(f64::NAN, 1.0), p(1.0, 0.0)]).unwrap_err();
    assert_eq!(err, GeometryError::NonFinite(1));
    assert!(convex_hull(&[p(0.0, 0.0), p(1.0, f64::INFINITY), p(1.0, 0.0)]).is_err());
}

#[test]
fn hull_matches_triangle_containment_oracle_on_50_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let pts = random_points(&mut rng, 50, 0.0, 1.0);
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(vertex_indices(&pts, &hull), hull_by_triangles(&pts));
        assert_ccw(&hull);
    }
}

#[test]
fn area_examples() {
    assert_eq!(polygon_area(&ConvexPolygon::rect(0.0, 0.0, 1.0, 1.0)), 1.0);
    assert_eq!(polygon_area(&ConvexPolygon::empty()), 0.0);
}

#[test]
fn area_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let poly = random_convex_polygon(&mut rng, 12, -5.0, 7.0);
        let exact = polygon_area(&poly);
        let estimate = mc_area(&poly, 1_000_000, &mut rng);
        assert!((estimate - exact).abs() / exact < 0.01, "{estimate} vs {exact}");
    }
}

#[test]
fn intersection_examples() {
    let unit = ConvexPolygon::rect(0.0, 0.0, 1.0, 1.0);
    let same = convex_intersection(&unit, &unit);
    assert!((polygon_area(&same) - 1.0).abs() < 1e-12);
    assert_ccw(&same);
    let far = ConvexPolygon::rect(2.0, 2.0, 3.0, 3.0);
    assert!(convex_intersection(&unit, &far).is_empty());
    let shifted = ConvexPolygon::rect(0.5, 0.5, 1.5, 1.5);
    let overlap = convex_intersection(&unit, &shifted);
    assert!((polygon_area(&overlap) - 0.25).abs() < 1e-12);
    for v in overlap.vertices() {
        assert!(inside_ccw(unit.vertices(), *v) && inside_ccw(shifted.vertices(), *v));
    }
}

#[test]
fn union_examples() {
    let unit = ConvexPolygon::rect(0.0, 0.0, 1.0, 1.0);
    assert!((union_area(&unit, &unit) - 1.0).abs() < 1e-12);
    assert!((union_area(&unit, &ConvexPolygon::rect(2.0, 2.0, 3.0, 3.0)) - 2.0).abs() < 1e-12);
    assert!((union_area(&unit, &ConvexPolygon::rect(0.5, 0.5, 1.5, 1.5)) - 1.75).abs() < 1e-12);
}

fn point_set() -> impl Strategy<Value = Vec<Point2>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 0..64)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
}

fn polygon() -> impl Strategy<Value = ConvexPolygon> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..16)
        .prop_map(|v| convex_hull(&v.into_iter().map(|(x, y)| Point2::new(x, y)).collect::<Vec<_>>()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_point_is_inside_or_on_its_hull(pts in point_set()) {
        let hull = convex_hull(&pts).unwrap();
        if !hull.is_empty() {
            let v = hull.vertices();
            for q in &pts {
                for i in 0..v.len() {
                    prop_assert!(orient(v[i], v[(i + 1) % v.len()], *q) >= -EPS_GEO);
                }
            }
        }
    }

    #[test]
    fn hull_vertices_match_edge_oracle(pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..64)) {
        let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        let hull = convex_hull(&pts).unwrap();
        prop_assert_eq!(vertex_indices(&pts, &hull), hull_by_edges(&pts));
    }

    #[test]
    fn overlap_areas_are_bounded_and_symmetric(a in polygon(), b in polygon()) {
        let ab = polygon_area(&convex_intersection(&a, &b));
        let ba = polygon_area(&convex_intersection(&b, &a));
        let (area_a, area_b) = (polygon_area(&a), polygon_area(&b));
        prop_assert!(ab <= area_a.min(area_b) + 1e-9);
        prop_assert!(union_area(&a, &b) <= area_a + area_b + 1e-9);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ab >= 0.0);
    }
}
