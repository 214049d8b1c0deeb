//! Triangle meshes: OFF/OBJ readers, area-weighted surface sampling and a
//! few analytic shapes for building test corpora without downloads.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::formats::{read_file, write_file};
use crate::geom::{Point3, PointCloud};
use crate::rng::{self, tag};

/// Faces with twice-area at or below this are dropped as degenerate.
const MIN_DOUBLE_AREA: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    dropped: usize,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area faces. Out-of-range indices are
    /// a usage error.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("vertex {v} is not finite")));
        }
        let nv = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (k, f) in faces.into_iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= nv) {
                return Err(Error::usage(format!("face {k} references vertex {bad}, mesh has {nv}")));
            }
            if double_area(&vertices, f) > MIN_DOUBLE_AREA {
                kept.push(f);
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::debug!("dropped {dropped} degenerate face(s)");
        }
        Ok(Self {
            vertices,
            faces: kept,
            dropped,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Number of zero-area faces removed at construction.
    pub fn dropped_faces(&self) -> usize {
        self.dropped
    }

    pub fn area(&self) -> f64 {
        self.faces.iter().map(|&f| 0.5 * double_area(&self.vertices, f)).sum()
    }

    pub fn transformed(&self, f: impl Fn(Point3) -> Point3) -> Result<Self> {
        Self::new(self.vertices.iter().map(|&v| f(v)).collect(), self.faces.clone())
    }

    /// Concatenation of two meshes.
    pub fn merged(&self, other: &TriangleMesh) -> Result<Self> {
        let off = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + off)));
        Self::new(vertices, faces)
    }
}

fn double_area(v: &[Point3], f: [usize; 3]) -> f64 {
    (v[f[1]] - v[f[0]]).cross(v[f[2]] - v[f[0]]).norm()
}

fn parse_err(path: Option<&Path>, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        msg: msg.into(),
    }
}

/// Splits a polygon into a triangle fan around its first vertex.
fn fan(poly: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..poly.len().saturating_sub(1)).map(move |k| [poly[0], poly[k], poly[k + 1]])
}

fn parse_f64(tok: &str, path: Option<&Path>, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("expected a finite number, found {tok:?}"))),
    }
}

/// Parses an OFF document. `#` starts a comment; polygons are fan-triangulated.
pub fn parse_off(text: &str, path: Option<&Path>) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count().max(1);
    let eof = |what: &str| parse_err(path, last_line, format!("unexpected end of file, expected {what}"));

    let (ln, header) = lines.next().ok_or_else(|| eof("OFF header"))?;
    let mut toks: Vec<&str> = header.split_whitespace().collect();
    if toks.first() != Some(&"OFF") {
        return Err(parse_err(path, ln, format!("expected OFF header, found {header:?}")));
    }
    toks.remove(0);
    let (ln, counts) = if toks.is_empty() {
        let (l, s) = lines.next().ok_or_else(|| eof("vertex and face counts"))?;
        (l, s.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, toks)
    };
    if counts.len() < 2 {
        return Err(parse_err(path, ln, "counts line needs vertex and face counts"));
    }
    let count = |t: &str| t.parse::<usize>().map_err(|_| parse_err(path, ln, format!("bad count {t:?}")));
    let (nv, nf) = (count(counts[0])?, count(counts[1])?);

    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    for k in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| eof(&format!("vertex {k} of {nv}")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(parse_err(path, ln, format!("vertex needs 3 coordinates, found {}", t.len())));
        }
        vertices.push(Point3::new(parse_f64(t[0], path, ln)?, parse_f64(t[1], path, ln)?, parse_f64(t[2], path, ln)?));
    }
    let mut faces = Vec::with_capacity(nf.min(1 << 20));
    for k in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| eof(&format!("face {k} of {nf}")))?;
        let mut t = l.split_whitespace();
        let n: usize = t
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(path, ln, "face line must start with its vertex count"))?;
        let idx: Vec<usize> = t
            .by_ref()
            .take(n)
            .map(|s| s.parse::<usize>().map_err(|_| parse_err(path, ln, format!("bad vertex index {s:?}"))))
            .collect::<Result<_>>()?;
        if idx.len() != n || n < 3 {
            return Err(parse_err(path, ln, format!("face declares {n} vertices, found {}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(path, ln, format!("vertex index {bad} out of range (0..{nv})")));
        }
        faces.extend(fan(&idx));
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses the `v` and `f` records of an OBJ document. Indices are 1-based;
/// negative indices count back from the latest vertex. Other records are
/// ignored.
pub fn parse_obj(text: &str, path: Option<&Path>) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<&str> = t.collect();
                if c.len() < 3 {
                    return Err(parse_err(path, ln, format!("vertex needs 3 coordinates, found {}", c.len())));
                }
                vertices.push(Point3::new(parse_f64(c[0], path, ln)?, parse_f64(c[1], path, ln)?, parse_f64(c[2], path, ln)?));
            }
            Some("f") => {
                let nv = vertices.len() as i64;
                let idx: Vec<usize> = t
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        let k: i64 = head
                            .parse()
                            .map_err(|_| parse_err(path, ln, format!("bad vertex reference {s:?}")))?;
                        let abs = if k < 0 { nv + k } else { k - 1 };
                        if k == 0 || abs < 0 || abs >= nv {
                            return Err(parse_err(path, ln, format!("vertex reference {k} out of range (have {nv})")));
                        }
                        Ok(abs as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(path, ln, format!("face needs at least 3 vertices, found {}", idx.len())));
                }
                faces.extend(fan(&idx));
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Loads `.off` or `.obj` by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(Some(path), 1, format!("not UTF-8: {e}")))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("off") => parse_off(text, Some(path)),
        Some("obj") => parse_obj(text, Some(path)),
        _ => Err(Error::usage(format!("{}: unknown mesh extension, expected .off or .obj", path.display()))),
    }
}

pub fn to_off(mesh: &TriangleMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_off(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), to_off(mesh).as_bytes())
}

/// `n` points with triangle chosen in proportion to area and uniform
/// barycentric placement. Point `i` uses its own stream `(seed, i)`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    if n == 0 {
        return Err(Error::usage("cannot sample zero points"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for &f in &mesh.faces {
        total += double_area(&mesh.vertices, f);
        cdf.push(total);
    }
    let v = &mesh.vertices;
    let points = (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, &[tag::SAMPLE, i as u64]);
            let u = r.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.faces[k].map(|j| v[j]);
            let s1 = r.random::<f64>().sqrt();
            let r2 = r.random::<f64>();
            a * (1.0 - s1) + b * (s1 * (1.0 - r2)) + c * (s1 * r2)
        })
        .collect();
    PointCloud::new(points)
}

/// Square `[-0.5, 0.5]²` in the `z = 0` plane, `k×k` cells.
pub fn plane_grid(k: usize) -> TriangleMesh {
    let k = k.max(1);
    let mut vertices = Vec::new();
    for j in 0..=k {
        for i in 0..=k {
            vertices.push(Point3::new(i as f64 / k as f64 - 0.5, j as f64 / k as f64 - 0.5, 0.0));
        }
    }
    let mut faces = Vec::new();
    let at = |i: usize, j: usize| j * (k + 1) + i;
    for j in 0..k {
        for i in 0..k {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid indices are in range")
}

/// Unit sphere as a latitude/longitude mesh.
pub fn uv_sphere(rings: usize, segments: usize) -> TriangleMesh {
    let (rings, segments) = (rings.max(2), segments.max(3));
    let mut vertices = vec![Point3::new(0.0, 0.0, 1.0)];
    for r in 1..rings {
        let th = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let ph = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Point3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
        }
    }
    vertices.push(Point3::new(0.0, 0.0, -1.0));
    let south = vertices.len() - 1;
    let at = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, at(1, s), at(1, s + 1)]);
        faces.push([south, at(rings - 1, s + 1), at(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            faces.push([at(r, s), at(r + 1, s), at(r + 1, s + 1)]);
            faces.push([at(r, s), at(r + 1, s + 1), at(r, s + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("sphere indices are in range")
}

/// Closed cylinder of radius 1 along `z` from `-h/2` to `h/2`.
pub fn cylinder(segments: usize, rings: usize, height: f64) -> TriangleMesh {
    let (segments, rings) = (segments.max(3), rings.max(1));
    let mut vertices = Vec::new();
    for r in 0..=rings {
        let z = height * (r as f64 / rings as f64 - 0.5);
        for s in 0..segments {
            let ph = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Point3::new(ph.cos(), ph.sin(), z));
        }
    }
    let at = |r: usize, s: usize| r * segments + s % segments;
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            faces.push([at(r, s), at(r, s + 1), at(r + 1, s + 1)]);
            faces.push([at(r, s), at(r + 1, s + 1), at(r + 1, s)]);
        }
    }
    let bottom = vertices.len();
    vertices.push(Point3::new(0.0, 0.0, -height / 2.0));
    let top = vertices.len();
    vertices.push(Point3::new(0.0, 0.0, height / 2.0));
    for s in 0..segments {
        faces.push([bottom, at(0, s + 1), at(0, s)]);
        faces.push([top, at(rings, s), at(rings, s + 1)]);
    }
    TriangleMesh::new(vertices, faces).expect("cylinder indices are in range")
}

/// Axis-aligned cube `[-0.5, 0.5]³`, each face split into `k×k` cells.
pub fn cube(k: usize) -> TriangleMesh {
    let face = plane_grid(k);
    let mut out: Option<TriangleMesh> = None;
    let sides: [fn(Point3) -> Point3; 6] = [
        |p| Point3::new(p.x, p.y, 0.5),
        |p| Point3::new(p.y, p.x, -0.5),
        |p| Point3::new(p.y, 0.5, p.x),
        |p| Point3::new(p.x, -0.5, p.y),
        |p| Point3::new(0.5, p.x, p.y),
        |p| Point3::new(-0.5, p.y, p.x),
    ];
    for side in sides {
        let m = face.transformed(side).expect("finite");
        out = Some(match out {
            None => m,
            Some(acc) => acc.merged(&m).expect("in range"),
        });
    }
    out.expect("six sides")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Plane,
    Sphere,
    Cylinder,
    Cube,
    SphereOnPlane,
    CubeAndCylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Plane,
        ShapeKind::Sphere,
        ShapeKind::Cylinder,
        ShapeKind::Cube,
        ShapeKind::SphereOnPlane,
        ShapeKind::CubeAndCylinder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Plane => "plane",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cube => "cube",
            ShapeKind::SphereOnPlane => "sphere_on_plane",
            ShapeKind::CubeAndCylinder => "cube_and_cylinder",
        }
    }

    fn base(self) -> TriangleMesh {
        match self {
            ShapeKind::Plane => plane_grid(8),
            ShapeKind::Sphere => uv_sphere(24, 48),
            ShapeKind::Cylinder => cylinder(48, 4, 2.0),
            ShapeKind::Cube => cube(4),
            ShapeKind::SphereOnPlane => {
                let ground = plane_grid(8).transformed(|p| p * 3.0).expect("finite");
                ground.merged(&uv_sphere(24, 48).transformed(|p| p + Point3::new(0.0, 0.0, 1.0)).expect("finite"))
                    .expect("in range")
            }
            ShapeKind::CubeAndCylinder => {
                let c = cube(4).transformed(|p| p * 1.6 + Point3::new(-0.9, 0.0, 0.0)).expect("finite");
                c.merged(&cylinder(48, 4, 2.0).transformed(|p| p * 0.7 + Point3::new(1.0, 0.0, 0.0)).expect("finite"))
                    .expect("in range")
            }
        }
    }
}

fn random_rotation(r: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(r));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// An analytic shape under a random rotation and per-axis stretch in
/// `[0.7, 1.3]`, drawn from stream `(seed, index)`.
pub fn analytic_shape(kind: ShapeKind, seed: u64, index: u64) -> TriangleMesh {
    let mut r = rng::stream(seed, &[tag::SHAPE, index]);
    let stretch: [f64; 3] = std::array::from_fn(|_| r.random_range(0.7..1.3));
    let rot = random_rotation(&mut r);
    kind.base()
        .transformed(|p| {
            let s = [p.x * stretch[0], p.y * stretch[1], p.z * stretch[2]];
            Point3::new(
                rot[0][0] * s[0] + rot[0][1] * s[1] + rot[0][2] * s[2],
                rot[1][0] * s[0] + rot[1][1] * s[1] + rot[1][2] * s[2],
                rot[2][0] * s[0] + rot[2][1] * s[1] + rot[2][2] * s[2],
            )
        })
        .expect("rotation keeps vertices finite")
}

/// A named mesh with where it came from.
#[derive(Clone, Debug)]
pub struct MeshSource {
    pub name: String,
    pub source: String,
    pub mesh: TriangleMesh,
}

/// `count` analytic shapes cycling through [`ShapeKind::ALL`], starting at
/// `offset` in the cycle and in the shape stream.
pub fn analytic_corpus(count: usize, seed: u64, offset: usize) -> Vec<MeshSource> {
    (offset..offset + count)
        .map(|i| {
            let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
            MeshSource {
                name: format!("{}_{i:03}", kind.name()),
                source: format!("analytic:{}:seed={seed}:index={i}", kind.name()),
                mesh: analytic_shape(kind, seed, i as u64),
            }
        })
        .collect()
}

/// Loads each path as a [`MeshSource`] named after the file stem. Load
/// failures are returned per path rather than aborting.
pub fn load_sources(paths: &[PathBuf]) -> Vec<(PathBuf, Result<MeshSource>)> {
    paths
        .iter()
        .map(|p| {
            let r = load_mesh(p).map(|mesh| MeshSource {
                name: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into()),
                source: p.display().to_string(),
                mesh,
            });
            (p.clone(), r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI_OFF: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn off_single_triangle() {
        let m = parse_off(TRI_OFF, None).unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        assert!((m.area() - 0.5).abs() < 1e-15);
        let inline = parse_off("# c\nOFF 3 1 0\n0 0 0\n1 0 0 # x\n0 1 0\n\n3 0 1 2\n", None).unwrap();
        assert_eq!(inline, m);
    }

    #[test]
    fn obj_quad_fans_to_two_triangles() {
        let m = parse_obj("o q\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3//1 4\n", None).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
        let neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", None).unwrap();
        assert_eq!(neg.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("OFX\n", 1),
            ("OFF\n3 1 0\n0 0 0\n1 0 zz\n0 1 0\n3 0 1 2\n", 4),
            ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", 6),
            ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2\n", 6),
        ];
        for (text, line) in cases {
            match parse_off(text, None) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        match parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 3\n", None) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_obj("v 0 0\n", None) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncations_never_panic() {
        let full = to_off(&cube(1));
        // cutting inside the last face line can still leave valid indices
        let last_line = full.trim_end().rfind('\n').unwrap();
        for cut in 0..full.len() {
            let r = parse_off(&full[..cut], None);
            if cut <= last_line + 2 {
                assert!(matches!(r, Err(Error::Parse { .. })), "cut {cut}: {r:?}");
            }
        }
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        for cut in 0..obj.len() {
            let _ = parse_obj(&obj[..cut], None);
        }
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let m = parse_off("OFF\n4 2 0\n0 0 0\n1 0 0\n2 0 0\n0 1 0\n3 0 1 2\n3 0 1 3\n", None).unwrap();
        assert_eq!(m.faces().len(), 1);
        assert_eq!(m.dropped_faces(), 1);
        let flat = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n", None).unwrap();
        assert!(matches!(sample_surface(&flat, 10, 0), Err(Error::EmptySurface)));
    }

    #[test]
    fn samples_stay_in_triangle() {
        let (a, b, c) = (Point3::new(0.2, -0.1, 0.3), Point3::new(1.0, 0.4, -0.2), Point3::new(-0.3, 0.9, 0.5));
        let m = TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        let cloud = sample_surface(&m, 2000, 3).unwrap();
        let n = (b - a).cross(c - a);
        let area2 = n.norm_sq();
        for &p in cloud.iter() {
            assert!((p - a).dot(n).abs() < 1e-12);
            // barycentric coordinates from sub-triangle areas
            let u = (c - b).cross(p - b).dot(n) / area2;
            let v = (a - c).cross(p - c).dot(n) / area2;
            let w = 1.0 - u - v;
            assert!(u >= -1e-12 && v >= -1e-12 && w >= -1e-12, "{u} {v} {w}");
        }
    }

    #[test]
    fn area_weighting_matches_one_to_three() {
        // two disjoint triangles with areas 1 and 3
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 5.0),
            Point3::new(3.0, 0.0, 5.0),
            Point3::new(0.0, 2.0, 5.0),
        ];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let cloud = sample_surface(&m, 100_000, 11).unwrap();
        let high = cloud.iter().filter(|p| p.z > 2.5).count() as f64;
        let frac = high / 100_000.0;
        assert!((frac - 0.75).abs() < 0.02 * 0.75, "{frac}");
    }

    #[test]
    fn unit_square_mean_is_centered() {
        let cloud = sample_surface(&plane_grid(3), 50_000, 5).unwrap();
        let mean = cloud.iter().fold(Point3::default(), |acc, &p| acc + p) / 50_000.0;
        assert!(mean.norm() < 0.01, "{mean:?}");
        assert_eq!(sample_surface(&plane_grid(3), 64, 5).unwrap(), sample_surface(&plane_grid(3), 64, 5).unwrap());
    }

    #[test]
    fn analytic_meshes_have_expected_area() {
        assert!((plane_grid(5).area() - 1.0).abs() < 1e-12);
        assert!((cube(3).area() - 6.0).abs() < 1e-12);
        assert!((uv_sphere(64, 128).area() - 4.0 * PI).abs() < 0.01 * 4.0 * PI);
        let cyl = cylinder(256, 2, 2.0).area();
        assert!((cyl - 6.0 * PI).abs() < 0.01 * 6.0 * PI, "{cyl}");
        for kind in ShapeKind::ALL {
            let m = analytic_shape(kind, 1, 0);
            assert!(m.area() > 0.0 && m.dropped_faces() == 0, "{kind:?}");
        }
        let corpus = analytic_corpus(7, 2, 0);
        assert_eq!(corpus[6].name, "plane_006");
        assert_eq!(analytic_corpus(1, 2, 6)[0].mesh, corpus[6].mesh);
    }

    #[test]
    fn off_round_trip() {
        let m = analytic_shape(ShapeKind::CubeAndCylinder, 3, 1);
        assert_eq!(parse_off(&to_off(&m), None).unwrap(), m);
    }
}
