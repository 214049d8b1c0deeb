//! Points, clouds, planes and the projection denoiser.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on `|‖normal‖ − 1|` for a valid [`Plane`].
pub const UNIT_TOL: f64 = 1e-9;

/// Raw plane rows whose normal part is shorter than this are degenerate.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3::new(0.0, 0.0, 0.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist_sq(self, o: Point3) -> f64 {
        (self - o).norm_sq()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rounds every coordinate to the nearest `f32`.
    pub fn to_f32_precision(self) -> Point3 {
        Point3::new(self.x as f32 as f64, self.y as f32 as f64, self.z as f32 as f64)
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    #[inline]
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn div(self, k: f64) -> Point3 {
        Point3::new(self.x / k, self.y / k, self.z / k)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    #[inline]
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// An ordered, non-empty set of points. Index `i` is the correspondence key
/// between clean, noisy and denoised clouds and their plane sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::usage(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn from_arrays(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().copied().map(Point3::from_array).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Row-major `N×3` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    /// Same cloud with every coordinate rounded to `f32`, as it would be after
    /// a round trip through a PCB1 file.
    pub fn to_f32_precision(&self) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p.to_f32_precision()).collect(),
        }
    }

    /// Reorders points so that output index `k` holds input point `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<PointCloud> {
        if perm.len() != self.len() {
            return Err(Error::usage("permutation length differs from cloud length"));
        }
        PointCloud::new(perm.iter().map(|&i| self.points[i]).collect())
    }
}

impl Index<usize> for PointCloud {
    type Output = Point3;
    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// The plane `{x : normal·x = intercept}` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    normal: Point3,
    intercept: f64,
}

impl Plane {
    /// Builds a plane from an already unit-length normal.
    pub fn new(normal: Point3, intercept: f64) -> Result<Self> {
        if !normal.is_finite() || !intercept.is_finite() {
            return Err(Error::usage("plane has non-finite components"));
        }
        let n = normal.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::usage(format!("plane normal has norm {n}, expected 1")));
        }
        Ok(Self { normal, intercept })
    }

    /// Plane with the given normal direction (any nonzero length) passing through `point`.
    pub fn through(normal: Point3, point: Point3) -> Result<Self> {
        let n = normal.norm();
        if n <= DEGENERATE_NORM || !n.is_finite() {
            return Err(Error::DegeneratePlane { norm: n });
        }
        let unit = normal / n;
        Ok(Self {
            normal: unit,
            intercept: unit.dot(point),
        })
    }

    pub fn normal(&self) -> Point3 {
        self.normal
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Signed distance `normal·p − intercept`.
    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal.dot(p) - self.intercept
    }

    /// The same geometric plane with `(normal, intercept)` negated.
    pub fn flipped(&self) -> Plane {
        Plane {
            normal: -self.normal,
            intercept: -self.intercept,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.intercept]
    }
}

/// Converts one raw `(a, c)` row to a plane with unit normal, keeping the
/// geometric plane: `normal = a/‖a‖`, `intercept = c/‖a‖`.
pub fn plane_from_raw(raw: [f64; 4]) -> Result<Plane> {
    let a = Point3::new(raw[0], raw[1], raw[2]);
    let n = a.norm();
    if !(n > DEGENERATE_NORM) || !n.is_finite() || !raw[3].is_finite() {
        return Err(Error::DegeneratePlane { norm: n });
    }
    Ok(Plane {
        normal: a / n,
        intercept: raw[3] / n,
    })
}

/// Per-point planes accompanying a [`PointCloud`] of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSet {
    planes: Vec<Plane>,
}

impl PlaneSet {
    pub fn new(planes: Vec<Plane>) -> Self {
        Self { planes }
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Plane> {
        self.planes.iter()
    }

    /// Row-major `N×4` `(nx, ny, nz, c)`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.planes.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<PlaneSet> {
        if perm.len() != self.len() {
            return Err(Error::usage("permutation length differs from plane set length"));
        }
        Ok(PlaneSet::new(perm.iter().map(|&i| self.planes[i]).collect()))
    }
}

impl Index<usize> for PlaneSet {
    type Output = Plane;
    fn index(&self, i: usize) -> &Plane {
        &self.planes[i]
    }
}

impl FromIterator<Plane> for PlaneSet {
    fn from_iter<I: IntoIterator<Item = Plane>>(iter: I) -> Self {
        PlaneSet::new(iter.into_iter().collect())
    }
}

/// Orthogonal projection of `p` onto `plane`: `p − (a·p)a + c·a`.
#[inline]
pub fn project_point(p: Point3, plane: &Plane) -> Point3 {
    let a = plane.normal;
    p - a * a.dot(p) + a * plane.intercept
}

pub fn project_cloud(cloud: &PointCloud, planes: &PlaneSet) -> Result<PointCloud> {
    if cloud.len() != planes.len() {
        return Err(Error::usage(format!(
            "cloud has {} points but plane set has {} planes",
            cloud.len(),
            planes.len()
        )));
    }
    let points = cloud
        .iter()
        .zip(planes.iter())
        .map(|(&p, plane)| project_point(p, plane))
        .collect();
    PointCloud::new(points)
}

/// Isotropic map into the unit cube: `apply(p) = (p − center)·scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeTransform {
    pub center: Point3,
    pub scale: f64,
}

impl UnitCubeTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        p / self.scale + self.center
    }
}

/// Centers the bounding box at the origin and scales isotropically so the
/// largest extent is 1. A cloud with zero extent on every axis is only centered.
pub fn normalize_unit_cube(cloud: &PointCloud) -> (PointCloud, UnitCubeTransform) {
    let first = cloud[0];
    let (lo, hi) = cloud.iter().fold((first, first), |(lo, hi), p| {
        (
            Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
            Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
        )
    });
    let center = (lo + hi) * 0.5;
    let extent = (hi - lo).x.max((hi - lo).y).max((hi - lo).z);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    let t = UnitCubeTransform { center, scale };
    let points = cloud
        .iter()
        .map(|&p| {
            let q = t.apply(p);
            // Rounding can push an extreme coordinate a hair past the face.
            Point3::new(q.x.clamp(-0.5, 0.5), q.y.clamp(-0.5, 0.5), q.z.clamp(-0.5, 0.5))
        })
        .collect();
    (PointCloud { points }, t)
}

/// Isotropic Gaussian noise `N(0, σ²I)` with a seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::config(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Adds i.i.d. per-coordinate Gaussian noise. Point `i` draws from its own
/// stream `(seed, i)`, so the result does not depend on evaluation order.
pub fn add_gaussian_noise(cloud: &PointCloud, model: &NoiseModel) -> PointCloud {
    if model.sigma == 0.0 {
        return cloud.clone();
    }
    let points = cloud
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut r = rng::stream(model.seed, &[rng::tag::NOISE, i as u64]);
            let mut draw = || -> f64 { StandardNormal.sample(&mut r) };
            let n = Point3::new(draw(), draw(), draw());
            p + n * model.sigma
        })
        .collect();
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(r: &mut impl Rng) -> Point3 {
        loop {
            let v = Point3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn random_point(r: &mut impl Rng, s: f64) -> Point3 {
        Point3::new(r.random_range(-s..s), r.random_range(-s..s), r.random_range(-s..s))
    }

    #[test]
    fn project_axis_aligned() {
        let plane = Plane::new(Point3::new(0.0, 0.0, 1.0), 0.5).unwrap();
        assert_eq!(project_point(Point3::new(1.0, 2.0, 3.0), &plane), Point3::new(1.0, 2.0, 0.5));
        let plane = Plane::new(Point3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert_eq!(project_point(Point3::new(1.0, 2.0, 0.0), &plane), Point3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn project_random_residual_is_along_normal() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_point(&mut r, 2.0);
            let plane = Plane::new(random_unit(&mut r), r.random_range(-1.0..1.0)).unwrap();
            let q = project_point(p, &plane);
            let c = plane.intercept();
            assert!(plane.signed_distance(q).abs() <= 1e-6 * (1.0 + c.abs()));
            assert!((p - q).cross(plane.normal()).norm() < 1e-6);
        }
    }

    #[test]
    fn project_cloud_matches_scalar_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..50).map(|_| random_point(&mut r, 1.0)).collect();
        let planes: PlaneSet = (0..50)
            .map(|_| Plane::new(random_unit(&mut r), r.random_range(-0.5..0.5)).unwrap())
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = project_cloud(&cloud, &planes).unwrap();
        for i in 0..50 {
            assert_eq!(out[i], project_point(pts[i], &planes[i]));
        }
        // single point
        let one = PointCloud::new(vec![pts[0]]).unwrap();
        let one_plane = PlaneSet::new(vec![planes[0]]);
        assert_eq!(project_cloud(&one, &one_plane).unwrap()[0], project_point(pts[0], &planes[0]));
        // already on its planes
        assert_eq!(project_cloud(&out, &planes).unwrap().points().len(), 50);
        let again = project_cloud(&out, &planes).unwrap();
        for i in 0..50 {
            assert!(again[i].dist_sq(out[i]) < 1e-24);
        }
    }

    #[test]
    fn project_cloud_length_mismatch() {
        let cloud = PointCloud::from_arrays(&[[0.0; 3], [1.0; 3]]).unwrap();
        let planes = PlaneSet::new(vec![Plane::new(Point3::new(1.0, 0.0, 0.0), 0.0).unwrap()]);
        assert!(matches!(project_cloud(&cloud, &planes), Err(Error::Usage(_))));
    }

    #[test]
    fn raw_plane_examples() {
        let p = plane_from_raw([0.0, 0.0, 2.0, 1.0]).unwrap();
        assert_eq!(p.normal(), Point3::new(0.0, 0.0, 1.0));
        assert_eq!(p.intercept(), 0.5);
        let p = plane_from_raw([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.normal(), Point3::new(1.0, 0.0, 0.0));
        assert_eq!(p.intercept(), 0.0);
        // ‖(3,4,0)‖ = 5
        let p = plane_from_raw([3.0, 4.0, 0.0, 10.0]).unwrap();
        assert_abs_diff_eq!(p.normal().x, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.normal().y, 0.8, epsilon = 1e-15);
        assert_eq!(p.normal().z, 0.0);
        assert_abs_diff_eq!(p.intercept(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn raw_plane_degenerate() {
        assert!(matches!(plane_from_raw([0.0, 0.0, 0.0, 1.0]), Err(Error::DegeneratePlane { .. })));
        assert!(matches!(plane_from_raw([1e-9, 0.0, 0.0, 1.0]), Err(Error::DegeneratePlane { .. })));
        assert!(plane_from_raw([2e-8, 0.0, 0.0, 1.0]).is_ok());
    }

    #[test]
    fn plane_rejects_non_unit_normal() {
        assert!(Plane::new(Point3::new(0.0, 0.0, 2.0), 0.0).is_err());
        assert!(Plane::new(Point3::new(0.0, 0.0, 1.0 + 1e-10), 0.0).is_ok());
    }

    #[test]
    fn unit_cube_examples() {
        let cloud = PointCloud::from_arrays(&[[0.0; 3], [2.0; 3]]).unwrap();
        let (out, t) = normalize_unit_cube(&cloud);
        assert_eq!(out[0], Point3::new(-0.5, -0.5, -0.5));
        assert_eq!(out[1], Point3::new(0.5, 0.5, 0.5));
        assert_eq!(t.center, Point3::new(1.0, 1.0, 1.0));
        assert_eq!(t.scale, 0.5);

        let cloud = PointCloud::from_arrays(&[[5.0; 3]]).unwrap();
        let (out, t) = normalize_unit_cube(&cloud);
        assert_eq!(out[0], Point3::ZERO);
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn unit_cube_round_trip_and_aspect() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    r.random_range(-3.0..7.0),
                    r.random_range(0.0..2.0),
                    r.random_range(10.0..11.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let (out, t) = normalize_unit_cube(&cloud);
        let mut hi = [f64::MIN; 3];
        let mut lo = [f64::MAX; 3];
        for (q, p) in out.iter().zip(&pts) {
            assert!(t.invert(*q).dist_sq(*p).sqrt() < 1e-6);
            for k in 0..3 {
                hi[k] = hi[k].max(q.to_array()[k]);
                lo[k] = lo[k].min(q.to_array()[k]);
            }
        }
        assert_abs_diff_eq!(hi[0] - lo[0], 1.0, epsilon = 1e-12);
        assert!(hi[1] - lo[1] < 1.0);
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let cloud = PointCloud::from_arrays(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]).unwrap();
        let out = add_gaussian_noise(&cloud, &NoiseModel::new(0.0, 9).unwrap());
        assert_eq!(out, cloud);
    }

    #[test]
    fn noise_is_deterministic() {
        let cloud = PointCloud::from_arrays(&[[0.0; 3]; 100]).unwrap();
        let m = NoiseModel::new(0.05, 1234).unwrap();
        assert_eq!(add_gaussian_noise(&cloud, &m), add_gaussian_noise(&cloud, &m));
        let other = NoiseModel::new(0.05, 1235).unwrap();
        assert_ne!(add_gaussian_noise(&cloud, &m), add_gaussian_noise(&cloud, &other));
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let n = 100_000;
        let cloud = PointCloud::new(vec![Point3::ZERO; n]).unwrap();
        let out = add_gaussian_noise(&cloud, &NoiseModel::new(0.01, 77).unwrap());
        for axis in 0..3 {
            let vals: Vec<f64> = out.iter().map(|p| p.to_array()[axis]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / 1e-4 - 1.0).abs() < 0.05, "axis {axis}: var {var}");
        }
    }

    #[test]
    fn noise_model_validation() {
        assert!(NoiseModel::new(-0.1, 0).is_err());
        assert!(NoiseModel::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    fn unit_vec() -> impl Strategy<Value = Point3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.01)
            .prop_map(|(x, y, z)| Point3::new(x, y, z) / Point3::new(x, y, z).norm())
    }

    proptest! {
        #[test]
        fn projection_idempotent(
            p in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
            n in unit_vec(),
            c in -2.0f64..2.0,
        ) {
            let plane = Plane::new(n, c).unwrap();
            let p = Point3::new(p.0, p.1, p.2);
            let once = project_point(p, &plane);
            let twice = project_point(once, &plane);
            prop_assert!(once.dist_sq(twice).sqrt() < 1e-6);
            prop_assert!(plane.signed_distance(once).abs() < 1e-6);
            prop_assert!((p - once).cross(n).norm() < 1e-6);
        }

        #[test]
        fn raw_plane_scale_invariant(
            raw in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
            k in 1e-3f64..1e3,
        ) {
            let raw = [raw.0, raw.1, raw.2, raw.3];
            prop_assume!(Point3::new(raw[0], raw[1], raw[2]).norm() > 1e-3);
            let a = plane_from_raw(raw).unwrap();
            let b = plane_from_raw(raw.map(|v| v * k)).unwrap();
            prop_assert!(a.normal().dist_sq(b.normal()).sqrt() < 1e-9);
            prop_assert!((a.intercept() - b.intercept()).abs() < 1e-9);
        }

        #[test]
        fn unit_cube_bounds(pts in prop::collection::vec((-100.0f64..100.0, -1.0f64..1.0, 0.0f64..1e-3), 1..60)) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()).unwrap();
            let (out, _) = normalize_unit_cube(&cloud);
            for p in out.iter() {
                for v in p.to_array() {
                    prop_assert!((-0.5..=0.5).contains(&v));
                }
            }
        }
    }
}
