//! Reference planes for clean clouds by Gaussian-weighted local PCA.
//!
//! Each point's neighborhood is every point within radius `ε` (the point
//! itself included), capped at the `max_k` nearest. Neighbors are weighted by
//! `exp(−d²/2σ_w²)` and normalized. The fitted normal is the eigenvector of
//! the smallest eigenvalue of the weighted covariance, and the intercept
//! places the plane through the weighted mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig::{canonical_sign, eig_sym3, Mat3};
use crate::error::{Error, Result};
use crate::geom::{Plane, PlaneSet, Point3, PointCloud};
use crate::spatial::UniformGrid;

/// Minimum neighborhood size, self included.
pub const MIN_NEIGHBORS: usize = 3;

/// Concrete kernel parameters for one cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborParams {
    pub radius: f64,
    pub bandwidth: f64,
    pub max_k: usize,
}

/// User-facing settings; the radius defaults to a multiple of the cloud's
/// median nearest-neighbor spacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneFitParams {
    pub eps_scale: f64,
    pub max_k: usize,
    /// Overrides the derived radius when set.
    pub radius: Option<f64>,
    /// Overrides `radius / 2` when set.
    pub bandwidth: Option<f64>,
}

impl Default for PlaneFitParams {
    fn default() -> Self {
        Self {
            eps_scale: 5.0,
            max_k: 30,
            radius: None,
            bandwidth: None,
        }
    }
}

impl PlaneFitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_scale.is_finite() && self.eps_scale > 0.0) {
            return Err(Error::config("eps_scale must be positive"));
        }
        if self.max_k < MIN_NEIGHBORS {
            return Err(Error::config(format!("max_k must be at least {MIN_NEIGHBORS}")));
        }
        if self.radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::config("radius must be positive"));
        }
        if self.bandwidth.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::config("bandwidth must be positive and finite"));
        }
        Ok(())
    }

    pub fn resolve(&self, cloud: &PointCloud) -> Result<NeighborParams> {
        self.validate()?;
        let radius = match self.radius {
            Some(r) => r,
            None => self.eps_scale * median_nn_distance(cloud),
        };
        if !(radius > 0.0) {
            return Err(Error::Dataset(
                "cannot derive a neighborhood radius: median nearest-neighbor distance is zero".into(),
            ));
        }
        let bandwidth = self.bandwidth.unwrap_or(radius / 2.0);
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::config("kernel bandwidth must be finite; set it explicitly for an infinite radius"));
        }
        Ok(NeighborParams {
            radius,
            bandwidth,
            max_k: self.max_k,
        })
    }
}

/// Median over points of the distance to the nearest other point.
pub fn median_nn_distance(cloud: &PointCloud) -> f64 {
    if cloud.len() < 2 {
        return 0.0;
    }
    let grid = UniformGrid::auto(cloud.points());
    let mut d: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| grid.nearest(cloud[i], Some(i)).map_or(0.0, |(_, d2)| d2.sqrt()))
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    /// Per point, `(index, weight)` sorted by distance then index.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub params: NeighborParams,
    /// Points whose radius neighborhood was too small and fell back to the
    /// nearest [`MIN_NEIGHBORS`].
    pub expanded: Vec<usize>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

pub fn build_neighbor_graph(cloud: &PointCloud, params: &NeighborParams) -> Result<NeighborGraph> {
    if cloud.len() < 4 {
        return Err(Error::usage(format!(
            "plane fitting needs at least 4 points, cloud has {}",
            cloud.len()
        )));
    }
    if params.max_k < MIN_NEIGHBORS || !(params.bandwidth > 0.0) || !(params.radius > 0.0) {
        return Err(Error::config(format!("invalid neighborhood parameters {params:?}")));
    }
    let cell = if params.radius.is_finite() { params.radius } else { f64::INFINITY };
    let grid = UniformGrid::new(cloud.points(), cell);
    let inv_two_var = 1.0 / (2.0 * params.bandwidth * params.bandwidth);

    let rows: Vec<(Vec<(usize, f64)>, bool)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut hood = grid.within(cloud[i], params.radius);
            hood.truncate(params.max_k);
            let expanded = hood.len() < MIN_NEIGHBORS;
            if expanded {
                hood = grid.k_nearest(cloud[i], MIN_NEIGHBORS);
            }
            let d0 = hood.first().map_or(0.0, |e| e.1);
            let mut w: Vec<(usize, f64)> = hood
                .iter()
                .map(|&(j, d2)| (j, (-(d2 - d0) * inv_two_var).exp()))
                .collect();
            let z: f64 = w.iter().map(|e| e.1).sum();
            for e in &mut w {
                e.1 /= z;
            }
            (w, expanded)
        })
        .collect();

    let expanded: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.1.then_some(i))
        .collect();
    if !expanded.is_empty() {
        log::warn!(
            "{} point(s) had fewer than {MIN_NEIGHBORS} neighbors within radius {:.4e}; expanded to nearest {MIN_NEIGHBORS}",
            expanded.len(),
            params.radius
        );
    }
    Ok(NeighborGraph {
        neighbors: rows.into_iter().map(|r| r.0).collect(),
        params: *params,
        expanded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedCovariance {
    pub matrix: Mat3,
    pub mean: Point3,
}

/// `M = Σ_j W_ij p_j p_jᵀ − p̄ p̄ᵀ`, evaluated in the centered form
/// `Σ_j W_ij (p_j − p̄)(p_j − p̄)ᵀ` (equal since the weights sum to one).
pub fn weighted_covariance(cloud: &PointCloud, graph: &NeighborGraph, i: usize) -> WeightedCovariance {
    let hood = &graph.neighbors[i];
    // Offsets from the first neighbor keep the sums small and make an
    // all-identical neighborhood produce an exactly zero matrix.
    let anchor = cloud[hood[0].0];
    let shift = hood
        .iter()
        .fold(Point3::ZERO, |acc, &(j, w)| acc + (cloud[j] - anchor) * w);
    let mut m = [[0.0; 3]; 3];
    for &(j, w) in hood {
        let d = (cloud[j] - anchor - shift).to_array();
        for r in 0..3 {
            for c in r..3 {
                m[r][c] += w * d[r] * d[c];
            }
        }
    }
    for r in 0..3 {
        for c in 0..r {
            m[r][c] = m[c][r];
        }
    }
    WeightedCovariance {
        matrix: m,
        mean: anchor + shift,
    }
}

/// Fits the reference plane of point `i`.
pub fn fit_plane(cloud: &PointCloud, graph: &NeighborGraph, i: usize) -> Result<Plane> {
    let cov = weighted_covariance(cloud, graph, i);
    let pairs = eig_sym3(&cov.matrix);
    let top = pairs[2].value;
    // Coincident or collinear neighborhoods leave the normal undetermined.
    if !(top > 0.0) || pairs[1].value <= 1e-10 * top {
        return Err(Error::DegenerateFit { index: i });
    }
    let normal = pairs[0].vector;
    Plane::new(normal, normal.dot(cov.mean))
}

/// Sign-flips each plane so the first non-negligible normal component is positive.
pub fn canonicalize_orientation(planes: &PlaneSet, cloud: &PointCloud) -> Result<PlaneSet> {
    if planes.len() != cloud.len() {
        return Err(Error::usage(format!(
            "plane set has {} planes but cloud has {} points",
            planes.len(),
            cloud.len()
        )));
    }
    Ok(planes.iter().map(canonical_plane).collect())
}

pub fn canonical_plane(p: &Plane) -> Plane {
    match canonical_sign(p.normal()) {
        (_, true) => p.flipped(),
        _ => *p,
    }
}

/// Per-cloud preprocessing diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFitStats {
    pub n_points: usize,
    pub radius: f64,
    pub bandwidth: f64,
    pub max_k: usize,
    pub mean_neighbors: f64,
    pub expanded_radii: usize,
    pub degenerate_fits: usize,
}

#[derive(Clone, Debug)]
pub struct ReferencePlanes {
    pub planes: PlaneSet,
    pub stats: PlaneFitStats,
}

/// Canonically oriented reference plane for every point of a clean cloud.
pub fn compute_reference_planes(cloud: &PointCloud, params: &PlaneFitParams) -> Result<ReferencePlanes> {
    let resolved = params.resolve(cloud)?;
    let graph = build_neighbor_graph(cloud, &resolved)?;
    let fits: Vec<Result<Plane>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| fit_plane(cloud, &graph, i))
        .collect();
    let degenerate: Vec<usize> = fits
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.is_err().then_some(i))
        .collect();
    if let Some(&first) = degenerate.first() {
        log::warn!("{} degenerate plane fit(s), first at point {first}", degenerate.len());
        return Err(Error::DegenerateFit { index: first });
    }
    let planes: PlaneSet = fits.into_iter().map(|f| canonical_plane(&f.unwrap())).collect();
    let total: usize = graph.neighbors.iter().map(Vec::len).sum();
    Ok(ReferencePlanes {
        planes,
        stats: PlaneFitStats {
            n_points: cloud.len(),
            radius: resolved.radius,
            bandwidth: resolved.bandwidth,
            max_k: resolved.max_k,
            mean_neighbors: total as f64 / cloud.len() as f64,
            expanded_radii: graph.expanded.len(),
            degenerate_fits: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project_point, NoiseModel, add_gaussian_noise};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn angle(a: Point3, b: Point3) -> f64 {
        (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0).acos()
    }

    fn grid_cloud(n: usize, z: f64) -> PointCloud {
        let pts = (0..n * n)
            .map(|k| Point3::new((k % n) as f64 / n as f64, (k / n) as f64 / n as f64, z))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn sphere_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| loop {
                let v = Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let len = v.norm();
                if len > 0.1 && len <= 1.0 {
                    break v / len;
                }
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn params(radius: f64, bandwidth: f64, max_k: usize) -> NeighborParams {
        NeighborParams { radius, bandwidth, max_k }
    }

    #[test]
    fn too_few_points() {
        let c = PointCloud::from_arrays(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert!(matches!(build_neighbor_graph(&c, &params(1.0, 0.5, 30)), Err(Error::Usage(_))));
    }

    #[test]
    fn triangle_centroid_symmetry() {
        let h = 3f64.sqrt() / 2.0;
        let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0], [0.5, h / 3.0, 0.0]]).unwrap();
        let g = build_neighbor_graph(&c, &params(10.0, 1.0, 30)).unwrap();
        let hood = &g.neighbors[3];
        assert_eq!(hood.len(), 4);
        assert_eq!(hood[0].0, 3);
        let others: Vec<f64> = hood[1..].iter().map(|e| e.1).collect();
        for w in &others {
            assert!((w - others[0]).abs() < 1e-12);
        }
        for row in &g.neighbors {
            assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_match_exhaustive_kernel() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point3> = (0..40)
            .map(|_| Point3::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)))
            .collect();
        let c = PointCloud::new(pts.clone()).unwrap();
        let bw = 0.3;
        let g = build_neighbor_graph(&c, &params(f64::INFINITY, bw, 40)).unwrap();
        for i in 0..40 {
            let raw: Vec<f64> = pts.iter().map(|p| (-p.dist_sq(pts[i]) / (2.0 * bw * bw)).exp()).collect();
            let z: f64 = raw.iter().sum();
            assert_eq!(g.neighbors[i].len(), 40);
            for &(j, w) in &g.neighbors[i] {
                assert!((w - raw[j] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_k_caps_and_small_radius_expands() {
        let c = grid_cloud(10, 0.0);
        let g = build_neighbor_graph(&c, &params(0.5, 0.25, 7)).unwrap();
        assert!(g.neighbors.iter().all(|n| n.len() == 7));
        let g = build_neighbor_graph(&c, &params(0.01, 0.005, 30)).unwrap();
        assert_eq!(g.expanded.len(), 100);
        assert!(g.neighbors.iter().all(|n| n.len() == 3));
        assert!(g.neighbors.iter().enumerate().all(|(i, n)| n[0].0 == i));
    }

    #[test]
    fn covariance_of_identical_points_is_zero() {
        let c = PointCloud::from_arrays(&[[0.3, 0.2, 0.1]; 5]).unwrap();
        let g = build_neighbor_graph(&c, &params(1.0, 0.5, 30)).unwrap();
        let m = weighted_covariance(&c, &g, 0);
        assert_eq!(m.matrix, [[0.0; 3]; 3]);
        assert!(matches!(fit_plane(&c, &g, 2), Err(Error::DegenerateFit { index: 2 })));
    }

    #[test]
    fn covariance_planar_and_naive_oracle() {
        let c = grid_cloud(6, 0.0);
        let g = build_neighbor_graph(&c, &params(0.5, 0.2, 30)).unwrap();
        let m = weighted_covariance(&c, &g, 7).matrix;
        for k in 0..3 {
            assert!(m[2][k].abs() < 1e-12 && m[k][2].abs() < 1e-12);
        }

        let mut r = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point3> = (0..60)
            .map(|_| Point3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
            .collect();
        let c = PointCloud::new(pts.clone()).unwrap();
        let g = build_neighbor_graph(&c, &params(0.4, 0.2, 30)).unwrap();
        for i in 0..60 {
            // direct Σ W p pᵀ − p̄ p̄ᵀ
            let hood = &g.neighbors[i];
            let mut mean = [0.0; 3];
            let mut second = [[0.0; 3]; 3];
            for &(j, w) in hood {
                let p = pts[j].to_array();
                for a in 0..3 {
                    mean[a] += w * p[a];
                    for b in 0..3 {
                        second[a][b] += w * p[a] * p[b];
                    }
                }
            }
            let got = weighted_covariance(&c, &g, i);
            for a in 0..3 {
                assert!((got.mean.to_array()[a] - mean[a]).abs() < 1e-12);
                for b in 0..3 {
                    let want = second[a][b] - mean[a] * mean[b];
                    assert!((got.matrix[a][b] - want).abs() < 1e-10);
                    assert_eq!(got.matrix[a][b], got.matrix[b][a]);
                }
            }
            let pairs = eig_sym3(&got.matrix);
            assert!(pairs[0].value >= -1e-9);
        }
    }

    #[test]
    fn collinear_neighborhood_is_degenerate() {
        let c = PointCloud::new((0..10).map(|k| Point3::new(k as f64 * 0.1, 0.0, 0.0)).collect()).unwrap();
        let g = build_neighbor_graph(&c, &params(0.25, 0.1, 30)).unwrap();
        assert!(matches!(fit_plane(&c, &g, 4), Err(Error::DegenerateFit { index: 4 })));
        let err = compute_reference_planes(&c, &PlaneFitParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit { .. }));
    }

    #[test]
    fn coplanar_fit_is_exact() {
        let c = grid_cloud(8, 0.0);
        let g = build_neighbor_graph(&c, &params(0.3, 0.15, 30)).unwrap();
        let p = fit_plane(&c, &g, 20).unwrap();
        assert!((p.normal().z.abs() - 1.0).abs() < 1e-12);
        assert!(p.intercept().abs() < 1e-12);
    }

    #[test]
    fn sphere_pole_normal() {
        let c = sphere_cloud(4000, 3);
        let mut pts = c.into_points();
        pts.push(Point3::new(0.0, 0.0, 1.0));
        let c = PointCloud::new(pts).unwrap();
        let i = c.len() - 1;
        let g = build_neighbor_graph(&c, &params(0.15, 0.075, 30)).unwrap();
        let p = fit_plane(&c, &g, i).unwrap();
        assert!(angle(p.normal(), Point3::new(0.0, 0.0, 1.0)).to_degrees() < 5.0);
    }

    #[test]
    fn noisy_plane_angle() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let n = Point3::new(1.0, 2.0, 2.0) / 3.0;
        let u = Point3::new(2.0, -1.0, 0.0) / 5f64.sqrt();
        let v = n.cross(u);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| u * r.random_range(-0.5..0.5) + v * r.random_range(-0.5..0.5) + n * 0.1)
            .collect();
        let clean = PointCloud::new(pts).unwrap();
        let noisy = add_gaussian_noise(&clean, &NoiseModel::new(0.005, 1).unwrap());
        let g = build_neighbor_graph(&noisy, &params(0.2, 0.1, 60)).unwrap();
        let mean: f64 = (0..2000).map(|i| angle(fit_plane(&noisy, &g, i).unwrap().normal(), n)).sum::<f64>() / 2000.0;
        assert!(mean.to_degrees() < 2.0, "mean angle {}", mean.to_degrees());
    }

    #[test]
    fn canonicalization_examples() {
        let c = PointCloud::from_arrays(&[[0.0; 3], [0.0; 3]]).unwrap();
        let ps = PlaneSet::new(vec![
            Plane::new(Point3::new(0.0, 0.0, -1.0), -0.5).unwrap(),
            Plane::new(Point3::new(0.0, 0.0, 1.0), 0.5).unwrap(),
        ]);
        let out = canonicalize_orientation(&ps, &c).unwrap();
        assert_eq!(out[0].normal(), Point3::new(0.0, 0.0, 1.0));
        assert_eq!(out[0].intercept(), 0.5);
        assert_eq!(out[1], ps[1]);
        assert!(canonicalize_orientation(&ps, &PointCloud::from_arrays(&[[0.0; 3]]).unwrap()).is_err());
    }

    #[test]
    fn canonicalization_preserves_projection() {
        let mut r = ChaCha8Rng::seed_from_u64(30);
        let n = 200;
        let pts: Vec<Point3> = (0..n)
            .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let planes: PlaneSet = (0..n)
            .map(|_| {
                let a = Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                Plane::through(a, Point3::new(0.1, 0.2, 0.3)).unwrap()
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let canon = canonicalize_orientation(&planes, &cloud).unwrap();
        for i in 0..n {
            let a = project_point(pts[i], &planes[i]);
            let b = project_point(pts[i], &canon[i]);
            assert!(a.dist_sq(b).sqrt() < 1e-9);
            let first = canon[i].normal().to_array().into_iter().find(|v| v.abs() > 1e-9).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn flat_grid_reference_planes() {
        let c = grid_cloud(12, 0.25);
        let out = compute_reference_planes(&c, &PlaneFitParams::default()).unwrap();
        for p in out.planes.iter() {
            assert!((p.normal().z - 1.0).abs() < 1e-9);
            assert!((p.intercept() - 0.25).abs() < 1e-9);
        }
        assert_eq!(out.stats.degenerate_fits, 0);
    }

    #[test]
    fn optimality_spot_check() {
        let c = sphere_cloud(600, 9);
        let rp = NeighborParams { radius: 0.3, bandwidth: 0.15, max_k: 30 };
        let g = build_neighbor_graph(&c, &rp).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(10);
        for i in (0..600).step_by(37) {
            let cov = weighted_covariance(&c, &g, i);
            let plane = fit_plane(&c, &g, i).unwrap();
            let cost = |a: Point3, off: f64| -> f64 {
                g.neighbors[i].iter().map(|&(j, w)| w * (a.dot(c[j]) - off).powi(2)).sum()
            };
            let best = cost(plane.normal(), plane.intercept());
            for _ in 0..100 {
                let a = Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let a = a / a.norm();
                assert!(cost(a, a.dot(cov.mean)) >= best - 1e-15);
            }
        }
    }
}
