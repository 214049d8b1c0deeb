//! Point-cloud error metrics.

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::spatial::UniformGrid;

/// Mean squared Euclidean distance between index-corresponding points.
pub fn mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "mse needs equal-length clouds, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let total: f64 = a.iter().zip(b.iter()).map(|(p, q)| p.dist_sq(*q)).sum();
    Ok(total / a.len() as f64)
}

/// Exact nearest-neighbor index over a fixed cloud.
#[derive(Debug, Clone)]
pub struct NnIndex {
    grid: UniformGrid,
}

pub fn nn_index_build(cloud: &PointCloud) -> NnIndex {
    NnIndex {
        grid: UniformGrid::auto(cloud.points()),
    }
}

/// Nearest stored point to `p` as `(index, squared distance)`; ties go to the
/// lowest index.
pub fn nn_query(index: &NnIndex, p: Point3) -> (usize, f64) {
    index
        .grid
        .nearest(p, None)
        .expect("index is built from a non-empty cloud")
}

fn one_sided(from: &PointCloud, to: &NnIndex) -> f64 {
    from.iter().map(|&p| nn_query(to, p).1).sum()
}

/// Symmetric squared-distance Chamfer distance, both sums divided by `|a|`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("chamfer distance of an empty cloud"));
    }
    let ia = nn_index_build(a);
    let ib = nn_index_build(b);
    Ok((one_sided(a, &ib) + one_sided(b, &ia)) / a.len() as f64)
}

/// `O(|a|·|b|)` reference for [`chamfer`], summed in the same order.
pub fn chamfer_brute(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("chamfer distance of an empty cloud"));
    }
    let side = |from: &PointCloud, to: &PointCloud| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| p.dist_sq(*q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    Ok((side(a, b) + side(b, a)) / a.len() as f64)
}
