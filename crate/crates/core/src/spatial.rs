//! Exact nearest-neighbor and radius queries on a uniform hash grid.
//!
//! Every query returns the same answer as a linear scan: candidates are
//! ordered by `(squared distance, point index)`, so equal distances resolve
//! to the lowest index.

use std::collections::HashMap;

use crate::geom::Point3;

type Cell = [i64; 3];

#[derive(Debug, Clone)]
pub struct UniformGrid {
    points: Vec<Point3>,
    cell: f64,
    origin: Point3,
    /// Point indices sorted by cell, with each cell's slice looked up by key.
    order: Vec<u32>,
    cells: HashMap<Cell, (u32, u32)>,
    lo: Cell,
    hi: Cell,
}

/// `(d², index)` comparison used for every tie-break.
#[inline]
fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl UniformGrid {
    /// Builds a grid with the given cell edge. Non-positive or non-finite
    /// sizes fall back to a single cell spanning the whole cloud.
    pub fn new(points: &[Point3], cell: f64) -> Self {
        let origin = points.iter().fold(
            Point3::new(f64::MAX, f64::MAX, f64::MAX),
            |m, p| Point3::new(m.x.min(p.x), m.y.min(p.y), m.z.min(p.z)),
        );
        let origin = if points.is_empty() { Point3::ZERO } else { origin };
        let extent = points
            .iter()
            .map(|p| (*p - origin).x.max((*p - origin).y).max((*p - origin).z))
            .fold(0.0f64, f64::max);
        let cell = if cell.is_finite() && cell > 0.0 {
            // Bound the key range so far-flung clouds do not overflow i64.
            cell.max(extent / 1e6)
        } else {
            extent.max(1.0) * 2.0
        };

        let key_of = |p: Point3| -> Cell {
            let q = (p - origin) / cell;
            [q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64]
        };
        let mut keyed: Vec<(Cell, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, &p)| (key_of(p), i as u32))
            .collect();
        keyed.sort_unstable();

        let mut cells = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            for k in 0..3 {
                lo[k] = lo[k].min(key[k]);
                hi[k] = hi[k].max(key[k]);
            }
            start = end;
        }

        Self {
            points: points.to_vec(),
            cell,
            origin,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
            lo,
            hi,
        }
    }

    /// Grid with a cell edge suited to `points` (a few points per occupied
    /// cell for surface-like clouds).
    pub fn auto(points: &[Point3]) -> Self {
        let n = points.len().max(1) as f64;
        let (lo, hi) = points.iter().fold(
            (Point3::new(f64::MAX, f64::MAX, f64::MAX), Point3::new(f64::MIN, f64::MIN, f64::MIN)),
            |(lo, hi), p| {
                (
                    Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                    Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
                )
            },
        );
        let d = hi - lo;
        let extent = d.x.max(d.y).max(d.z);
        let cell = if extent > 0.0 { extent * (2.0 / n).sqrt() } else { 1.0 };
        Self::new(points, cell)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn key(&self, p: Point3) -> Cell {
        let q = (p - self.origin) / self.cell;
        let clamp = |v: f64| v.floor().clamp(-(1i64 << 52) as f64, (1i64 << 52) as f64) as i64;
        [clamp(q.x), clamp(q.y), clamp(q.z)]
    }

    /// Number of rings around `c` needed to cover every occupied cell.
    fn max_ring(&self, c: Cell) -> i64 {
        if self.cells.is_empty() {
            return -1;
        }
        (0..3)
            .map(|k| (c[k] - self.lo[k]).abs().max((self.hi[k] - c[k]).abs()))
            .max()
            .unwrap_or(0)
    }

    fn cell_slice(&self, key: &Cell) -> &[u32] {
        match self.cells.get(key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Visits every occupied cell at Chebyshev distance exactly `ring` from `c`.
    fn for_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(&[u32])) {
        if ring == 0 {
            f(self.cell_slice(&c));
            return;
        }
        let xr = (c[0] - ring).max(self.lo[0])..=(c[0] + ring).min(self.hi[0]);
        for x in xr {
            let yr = (c[1] - ring).max(self.lo[1])..=(c[1] + ring).min(self.hi[1]);
            for y in yr {
                let on_shell_xy = (x - c[0]).abs() == ring || (y - c[1]).abs() == ring;
                if on_shell_xy {
                    for z in (c[2] - ring).max(self.lo[2])..=(c[2] + ring).min(self.hi[2]) {
                        f(self.cell_slice(&[x, y, z]));
                    }
                } else {
                    for z in [c[2] - ring, c[2] + ring] {
                        if z >= self.lo[2] && z <= self.hi[2] {
                            f(self.cell_slice(&[x, y, z]));
                        }
                    }
                }
            }
        }
    }

    /// Exact nearest neighbor of `q`, optionally skipping one index.
    pub fn nearest(&self, q: Point3, skip: Option<usize>) -> Option<(usize, f64)> {
        let c = self.key(q);
        let max_ring = self.max_ring(c);
        let mut best: Option<(f64, usize)> = None;
        let mut ring = 0;
        while ring <= max_ring {
            self.for_ring(c, ring, |slice| {
                for &j in slice {
                    let j = j as usize;
                    if Some(j) == skip {
                        continue;
                    }
                    let cand = (q.dist_sq(self.points[j]), j);
                    if best.is_none_or(|b| closer(cand, b)) {
                        best = Some(cand);
                    }
                }
            });
            if let Some((d2, _)) = best {
                // Unvisited cells are at least `ring` whole cells away.
                let bound = ring as f64 * self.cell;
                if d2 < bound * bound {
                    break;
                }
            }
            ring += 1;
        }
        best.map(|(d2, j)| (j, d2))
    }

    /// The `k` nearest points to `q` sorted by `(d², index)`.
    pub fn k_nearest(&self, q: Point3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let c = self.key(q);
        let max_ring = self.max_ring(c);
        let mut found: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut ring = 0;
        while ring <= max_ring {
            self.for_ring(c, ring, |slice| {
                for &j in slice {
                    let j = j as usize;
                    let cand = (q.dist_sq(self.points[j]), j);
                    if found.len() == k && !closer(cand, found[k - 1]) {
                        continue;
                    }
                    let pos = found.partition_point(|&e| closer(e, cand));
                    found.insert(pos, cand);
                    found.truncate(k);
                }
            });
            if found.len() == k {
                let bound = ring as f64 * self.cell;
                if found[k - 1].0 < bound * bound {
                    break;
                }
            }
            ring += 1;
        }
        found.into_iter().map(|(d2, j)| (j, d2)).collect()
    }

    /// All points with `‖p − q‖ ≤ radius`, sorted by `(d², index)`.
    pub fn within(&self, q: Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut found: Vec<(f64, usize)> = Vec::new();
        let r2 = radius * radius;
        let c = self.key(q);
        let max_ring = self.max_ring(c);
        let rings = if radius.is_finite() {
            ((radius / self.cell).ceil() as i64 + 1).min(max_ring)
        } else {
            max_ring
        };
        for ring in 0..=rings {
            self.for_ring(c, ring, |slice| {
                for &j in slice {
                    let d2 = q.dist_sq(self.points[j as usize]);
                    if d2 <= r2 {
                        found.push((d2, j as usize));
                    }
                }
            });
        }
        found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.into_iter().map(|(d2, j)| (j, d2)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(points: &[Point3], q: Point3, skip: Option<usize>) -> Option<(usize, f64)> {
        let mut best: Option<(f64, usize)> = None;
        for (j, p) in points.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            let cand = (q.dist_sq(*p), j);
            if best.is_none_or(|b| closer(cand, b)) {
                best = Some(cand);
            }
        }
        best.map(|(d, j)| (j, d))
    }

    fn random_points(r: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
            .collect()
    }

    #[test]
    fn nearest_matches_scan() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut r, 500);
        for cell in [0.01, 0.05, 0.3, 5.0] {
            let g = UniformGrid::new(&pts, cell);
            for _ in 0..200 {
                let q = Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                assert_eq!(g.nearest(q, None), scan(&pts, q, None));
            }
            for i in 0..pts.len() {
                assert_eq!(g.nearest(pts[i], Some(i)), scan(&pts, pts[i], Some(i)));
            }
        }
    }

    #[test]
    fn grid_ties_break_to_lowest_index() {
        let pts: Vec<Point3> = (0..4)
            .flat_map(|x| (0..4).map(move |y| Point3::new(x as f64 * 0.1, y as f64 * 0.1, 0.0)))
            .collect();
        let g = UniformGrid::new(&pts, 0.1);
        // equidistant from indices 0, 1, 4, 5
        let q = Point3::new(0.05, 0.05, 0.0);
        assert_eq!(g.nearest(q, None), scan(&pts, q, None));
        assert_eq!(g.nearest(q, None).unwrap().0, 0);
        assert_eq!(g.nearest(pts[6], None), Some((6, 0.0)));
    }

    #[test]
    fn k_nearest_and_within_match_scan() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut r, 300);
        let g = UniformGrid::new(&pts, 0.07);
        for i in 0..50 {
            let q = pts[i];
            let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(j, p)| (q.dist_sq(*p), j)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<(usize, f64)> = all.iter().take(12).map(|&(d, j)| (j, d)).collect();
            assert_eq!(g.k_nearest(q, 12), want);
            let want: Vec<(usize, f64)> = all.iter().filter(|e| e.0 <= 0.15 * 0.15).map(|&(d, j)| (j, d)).collect();
            assert_eq!(g.within(q, 0.15), want);
        }
        assert_eq!(g.within(pts[0], f64::INFINITY).len(), 300);
        assert_eq!(g.k_nearest(pts[0], 1000).len(), 300);
    }

    #[test]
    fn degenerate_inputs() {
        let g = UniformGrid::new(&[], 0.1);
        assert_eq!(g.nearest(Point3::ZERO, None), None);
        let one = [Point3::new(1.0, 1.0, 1.0)];
        let g = UniformGrid::auto(&one);
        assert_eq!(g.nearest(Point3::ZERO, None), Some((0, 3.0)));
        assert_eq!(g.nearest(one[0], Some(0)), None);
    }
}
