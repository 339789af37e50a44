//! Coverage and mixing ratio.

use serde::{Deserialize, Serialize};

use crate::geometry::{convex_hull, convex_intersection, polygon_area, union_area, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    pub step: u64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub mixing: f64,
}

/// Percentage of the arena covered by the convex hull of `positions`.
/// Non-finite positions never reach here; a degenerate hull covers nothing.
pub fn coverage(positions: &[Point2], arena_width: f64, arena_height: f64) -> f64 {
    let hull = convex_hull(positions).unwrap_or_default();
    (100.0 * polygon_area(&hull) / (arena_width * arena_height)).clamp(0.0, 100.0)
}

/// Hull intersection area as a percentage of hull union area.
pub fn mixing_ratio(a: &[Point2], b: &[Point2]) -> f64 {
    let ha = convex_hull(a).unwrap_or_default();
    let hb = convex_hull(b).unwrap_or_default();
    let union = union_area(&ha, &hb);
    if union <= 0.0 {
        return 0.0;
    }
    let inter = polygon_area(&convex_intersection(&ha, &hb));
    (100.0 * inter / union).clamp(0.0, 100.0)
}

/// All three metrics at once, sharing the two hulls.
pub fn tick_metrics(step: u64, a: &[Point2], b: &[Point2], w: f64, h: f64) -> TickMetrics {
    let ha = convex_hull(a).unwrap_or_default();
    let hb = convex_hull(b).unwrap_or_default();
    let (area_a, area_b) = (polygon_area(&ha), polygon_area(&hb));
    let inter = polygon_area(&convex_intersection(&ha, &hb));
    let union = area_a + area_b - inter;
    let mixing = if union > 0.0 {
        (100.0 * inter / union).clamp(0.0, 100.0)
    } else {
        0.0
    };
    TickMetrics {
        step,
        coverage_a: (100.0 * area_a / (w * h)).clamp(0.0, 100.0),
        coverage_b: (100.0 * area_b / (w * h)).clamp(0.0, 100.0),
        mixing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point2> {
        vec![
            Point2::new(x0, y0),
            Point2::new(x0 + s, y0),
            Point2::new(x0 + s, y0 + s),
            Point2::new(x0, y0 + s),
        ]
    }

    #[test]
    fn quarter_arena_rectangle_covers_25_percent() {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(500.0, 0.0),
            Point2::new(500.0, 500.0),
            Point2::new(0.0, 500.0),
        ];
        assert!((coverage(&pts, 1000.0, 1000.0) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn two_robots_cover_nothing() {
        let pts = vec![Point2::new(1.0, 1.0), Point2::new(9.0, 3.0)];
        assert_eq!(coverage(&pts, 10.0, 10.0), 0.0);
    }

    #[test]
    fn mixing_examples() {
        let s = square(0.0, 0.0, 1.0);
        assert!((mixing_ratio(&s, &s) - 100.0).abs() < 1e-9);
        assert_eq!(mixing_ratio(&s, &square(10.0, 10.0, 1.0)), 0.0);
        let m = mixing_ratio(&s, &square(0.5, 0.5, 1.0));
        assert!((m - 100.0 * 0.25 / 1.75).abs() < 1e-9, "{m}");
    }

    #[test]
    fn degenerate_hulls_do_not_mix() {
        let s = square(0.0, 0.0, 1.0);
        let pair = vec![Point2::new(0.2, 0.2), Point2::new(0.4, 0.4)];
        assert_eq!(mixing_ratio(&s, &pair), 0.0);
        assert_eq!(mixing_ratio(&pair, &pair), 0.0);
    }

    #[test]
    fn tick_metrics_agree_with_separate_functions() {
        let a = square(0.0, 0.0, 300.0);
        let b = square(150.0, 100.0, 300.0);
        let t = tick_metrics(3, &a, &b, 1000.0, 1000.0);
        assert_eq!(t.step, 3);
        assert!((t.coverage_a - coverage(&a, 1000.0, 1000.0)).abs() < 1e-12);
        assert!((t.coverage_b - coverage(&b, 1000.0, 1000.0)).abs() < 1e-12);
        assert!((t.mixing - mixing_ratio(&a, &b)).abs() < 1e-12);
    }
}
