//! Eigendecomposition of 3×3 symmetric matrices.

use crate::geom::Point3;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Point3,
}

/// Flips `v` so its first component with magnitude above `1e-9` is positive.
pub fn canonical_sign(v: Point3) -> (Point3, bool) {
    let first = v.to_array().into_iter().find(|c| c.abs() > 1e-9);
    match first {
        Some(c) if c < 0.0 => (-v, true),
        _ => (v, false),
    }
}

fn frobenius(m: &Mat3) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenpairs of a symmetric matrix in ascending eigenvalue order.
///
/// Cyclic Jacobi rotations run until the off-diagonal mass is below
/// machine precision relative to `‖M‖_F`. Eigenvectors are returned in
/// canonical sign; eigenvalues that agree to `1e-12·‖M‖_F` are ordered by
/// their canonical eigenvector, lexicographically smallest first.
pub fn eig_sym3(m: &Mat3) -> [EigenPair; 3] {
    let mut a = *m;
    // Symmetrize so a slightly asymmetric input is treated as its symmetric part.
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    let scale = frobenius(&a);
    let mut v: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    if scale > 0.0 {
        for _sweep in 0..64 {
            let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
            if off <= f64::EPSILON * 1e-2 * scale {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← JᵀAJ
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut pairs: Vec<EigenPair> = (0..3)
        .map(|k| {
            let col = Point3::new(v[0][k], v[1][k], v[2][k]);
            let col = col / col.norm();
            EigenPair {
                value: a[k][k],
                vector: canonical_sign(col).0,
            }
        })
        .collect();

    let tie = 1e-12 * scale;
    let lex = |a: &Point3, b: &Point3| {
        a.to_array()
            .iter()
            .zip(b.to_array().iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    pairs.sort_by(|x, y| x.value.total_cmp(&y.value));
    // Insertion pass over the three entries to order near-equal eigenvalues.
    for i in 1..3 {
        let mut j = i;
        while j > 0
            && (pairs[j].value - pairs[j - 1].value).abs() <= tie
            && lex(&pairs[j].vector, &pairs[j - 1].vector).is_lt()
        {
            pairs.swap(j, j - 1);
            j -= 1;
        }
    }
    [pairs[0], pairs[1], pairs[2]]
}
