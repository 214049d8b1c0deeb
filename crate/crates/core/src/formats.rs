//! Binary point-cloud (`PCB1`) and plane-set (`PLN1`) files.
//!
//! Both are little-endian: a 4-byte magic, a `u32` row count, then rows of
//! `f32` (`x,y,z` for clouds, `nx,ny,nz,c` for planes). Files with trailing
//! bytes are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{plane_from_raw, Plane, PlaneSet, Point3, PointCloud};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";
pub const PLN_MAGIC: &[u8; 4] = b"PLN1";

/// Little-endian cursor over a byte slice that reports truncation as a
/// format error instead of panicking.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Error::format(format!("{n} unexpected trailing bytes"))),
        }
    }
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4], width: usize) -> Result<usize> {
    let m = r.take(4, "magic")?;
    if m != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let n = r.u32("row count")? as usize;
    let need = n
        .checked_mul(width * 4)
        .ok_or_else(|| Error::format("row count overflows"))?;
    if need != r.remaining() {
        return Err(Error::format(format!(
            "header declares {n} rows ({need} bytes) but {} bytes follow",
            r.remaining()
        )));
    }
    Ok(n)
}

fn read_rows<const W: usize>(bytes: &[u8], magic: &[u8; 4]) -> Result<Vec<[f32; W]>> {
    let mut r = Reader::new(bytes);
    let n = read_header(&mut r, magic, W)?;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = [0f32; W];
        for v in &mut row {
            *v = r.f32("row data")?;
        }
        rows.push(row);
    }
    r.finish()?;
    Ok(rows)
}

fn write_rows<const W: usize>(magic: &[u8; 4], rows: impl ExactSizeIterator<Item = [f32; W]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + rows.len() * W * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for row in rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    write_rows(
        PCB_MAGIC,
        cloud.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]),
    )
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let rows = read_rows::<3>(bytes, PCB_MAGIC)?;
    if rows.is_empty() {
        return Err(Error::format("point cloud has zero points"));
    }
    let pts = rows
        .iter()
        .map(|r| Point3::new(r[0] as f64, r[1] as f64, r[2] as f64))
        .collect();
    PointCloud::new(pts).map_err(|e| Error::format(e.to_string()))
}

/// Raw `f32` rows of a PLN1 buffer, exactly as stored.
pub fn decode_plane_rows(bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    read_rows::<4>(bytes, PLN_MAGIC)
}

pub fn encode_planes(planes: &PlaneSet) -> Vec<u8> {
    write_rows(
        PLN_MAGIC,
        planes.iter().map(|p| p.to_array().map(|v| v as f32)),
    )
}

/// Decodes a PLN1 buffer. Stored normals are unit length only to `f32`
/// precision, so each row is renormalized in `f64`.
pub fn decode_planes(bytes: &[u8]) -> Result<PlaneSet> {
    decode_plane_rows(bytes)?
        .iter()
        .enumerate()
        .map(|(i, r)| -> Result<Plane> {
            let raw = r.map(|v| v as f64);
            let n = Point3::new(raw[0], raw[1], raw[2]).norm();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::format(format!("plane {i} normal has norm {n}")));
            }
            plane_from_raw(raw).map_err(|e| Error::format(format!("plane {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(PlaneSet::new)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    decode_cloud(&read_file(path)?).map_err(|e| e.with_path(path))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_file(path.as_ref(), &encode_cloud(cloud))
}

pub fn read_planes(path: impl AsRef<Path>) -> Result<PlaneSet> {
    let path = path.as_ref();
    decode_planes(&read_file(path)?).map_err(|e| e.with_path(path))
}

pub fn write_planes(path: impl AsRef<Path>, planes: &PlaneSet) -> Result<()> {
    write_file(path.as_ref(), &encode_planes(planes))
}
