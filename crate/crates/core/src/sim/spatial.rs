//! Uniform-grid spatial index used for neighbor queries and overlap checks.

use crate::geometry::Point2;

/// Bucketed positions in compressed-row layout: `items[starts[c]..starts[c+1]]`
/// are the robot indices in cell `c`, in ascending order.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl SpatialGrid {
    pub fn build(positions: &[Point2], width: f64, height: f64, cell: f64) -> Self {
        let cell = cell.max(1e-6);
        let nx = ((width / cell).ceil() as usize).max(1);
        let ny = ((height / cell).ceil() as usize).max(1);
        let mut counts = vec![0usize; nx * ny + 1];
        let keys: Vec<usize> = positions
            .iter()
            .map(|&p| {
                let (cx, cy) = Self::coords(p, cell, nx, ny);
                cy * nx + cx
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; positions.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        Self {
            cell,
            nx,
            ny,
            starts: counts,
            items,
        }
    }

    /// Cell size that holds about `per_cell` robots per cell at uniform
    /// density, bounded below by `min_cell` and above by `max_cell`.
    pub fn cell_for_density(
        count: usize,
        per_cell: f64,
        width: f64,
        height: f64,
        min_cell: f64,
        max_cell: f64,
    ) -> f64 {
        let c = (width * height * per_cell / count.max(1) as f64).sqrt();
        c.clamp(min_cell, max_cell.max(min_cell))
    }

    fn coords(p: Point2, cell: f64, nx: usize, ny: usize) -> (usize, usize) {
        let cx = ((p.x / cell).floor().max(0.0) as usize).min(nx - 1);
        let cy = ((p.y / cell).floor().max(0.0) as usize).min(ny - 1);
        (cx, cy)
    }

    fn cell_items(&self, cx: usize, cy: usize) -> &[usize] {
        let c = cy * self.nx + cx;
        &self.items[self.starts[c]..self.starts[c + 1]]
    }

    /// The `k` robots closest to `positions[query]` within `max_range`,
    /// ordered by (squared distance, index). The query robot is excluded.
    pub fn nearest(
        &self,
        positions: &[Point2],
        query: usize,
        k: usize,
        max_range: f64,
        out: &mut Vec<(f64, usize)>,
    ) {
        out.clear();
        if k == 0 {
            return;
        }
        let p = positions[query];
        let max_sq = max_range * max_range;
        let (cx, cy) = Self::coords(p, self.cell, self.nx, self.ny);
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            if ring > 0 {
                // Everything not yet visited lies outside the block of cells
                // within ring-1 of the query cell.
                let r = ring as f64 - 1.0;
                let left = p.x - (cx as f64 - r) * self.cell;
                let right = (cx as f64 + r + 1.0) * self.cell - p.x;
                let down = p.y - (cy as f64 - r) * self.cell;
                let up = (cy as f64 + r + 1.0) * self.cell - p.y;
                let bound = left.min(right).min(down).min(up).max(0.0);
                if bound * bound > max_sq {
                    break;
                }
                if out.len() == k && bound * bound > out[k - 1].0 {
                    break;
                }
            }
            let x0 = cx as isize - ring as isize;
            let x1 = cx as isize + ring as isize;
            let y0 = cy as isize - ring as isize;
            let y1 = cy as isize + ring as isize;
            let mut visit = |gx: isize, gy: isize| {
                if gx < 0 || gy < 0 || gx >= self.nx as isize || gy >= self.ny as isize {
                    return;
                }
                for &j in self.cell_items(gx as usize, gy as usize) {
                    if j == query {
                        continue;
                    }
                    let d2 = positions[j].dist_sq(p);
                    if d2 > max_sq {
                        continue;
                    }
                    insert_bounded(out, (d2, j), k);
                }
            };
            if ring == 0 {
                visit(cx as isize, cy as isize);
                continue;
            }
            for gx in x0..=x1 {
                visit(gx, y0);
                visit(gx, y1);
            }
            for gy in y0 + 1..y1 {
                visit(x0, gy);
                visit(x1, gy);
            }
        }
    }

    /// Calls `f(i, j)` with `i < j` for every pair closer than `dist`, in
    /// ascending `(i, j)` order. Requires `dist <= cell`.
    pub fn for_each_close_pair(&self, positions: &[Point2], dist: f64, mut f: impl FnMut(usize, usize)) {
        debug_assert!(dist <= self.cell + 1e-12);
        let d2 = dist * dist;
        let mut partners = Vec::new();
        for i in 0..positions.len() {
            let (cx, cy) = Self::coords(positions[i], self.cell, self.nx, self.ny);
            partners.clear();
            for gy in cy.saturating_sub(1)..=(cy + 1).min(self.ny - 1) {
                for gx in cx.saturating_sub(1)..=(cx + 1).min(self.nx - 1) {
                    for &j in self.cell_items(gx, gy) {
                        if j > i && positions[i].dist_sq(positions[j]) < d2 {
                            partners.push(j);
                        }
                    }
                }
            }
            partners.sort_unstable();
            for &j in &partners {
                f(i, j);
            }
        }
    }
    /// Every pair closer than `dist` with at least one member flagged in
    /// `active`, as `(i, j)` with `i < j` in ascending order. Requires
    /// `dist <= cell`.
    pub fn close_pairs_touching(&self, positions: &[Point2], dist: f64, active: &[bool], out: &mut Vec<(usize, usize)>) {
        debug_assert!(dist <= self.cell + 1e-12);
        out.clear();
        let d2 = dist * dist;
        for i in (0..positions.len()).filter(|&i| active[i]) {
            let (cx, cy) = Self::coords(positions[i], self.cell, self.nx, self.ny);
            for gy in cy.saturating_sub(1)..=(cy + 1).min(self.ny - 1) {
                for gx in cx.saturating_sub(1)..=(cx + 1).min(self.nx - 1) {
                    for &j in self.cell_items(gx, gy) {
                        if j == i || (active[j] && j < i) {
                            continue;
                        }
                        if positions[i].dist_sq(positions[j]) < d2 {
                            out.push((i.min(j), i.max(j)));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

fn insert_bounded(out: &mut Vec<(f64, usize)>, item: (f64, usize), k: usize) {
    let less = |a: &(f64, usize), b: &(f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if out.len() == k {
        if !less(&item, &out[k - 1]) {
            return;
        }
        out.pop();
    }
    let pos = out.iter().position(|e| less(&item, e)).unwrap_or(out.len());
    out.insert(pos, item);
}
