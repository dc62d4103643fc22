//! Plain-text mesh format.
//!
//! ```text
//! vertices <n>
//! <index> <x> <y>
//! triangles <m>
//! <a> <b> <c>
//! edges <k>
//! <a> <b> <tag>
//! ```
//!
//! Coordinates are written with the shortest round-trip representation, so a
//! write/read cycle is exact. Only boundary edges are listed; lines starting with `#`
//! are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EdgeTag, Point, Rect, TriMesh};
use crate::error::{Error, Result};

pub fn format_mesh(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "vertices {}", mesh.num_vertices());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(out, "{i} {} {}", p[0], p[1]);
    }
    let _ = writeln!(out, "triangles {}", mesh.num_triangles());
    for t in mesh.triangles() {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    let edges: Vec<_> = mesh.boundary_edges().collect();
    let _ = writeln!(out, "edges {}", edges.len());
    for ((a, b), tag) in edges {
        let _ = writeln!(out, "{a} {b} {tag}");
    }
    out
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    fs::write(path, format_mesh(mesh))?;
    Ok(())
}

/// Reads a mesh; with `periodic` the left/right and bottom/top traces are paired.
pub fn read_mesh(path: &Path, periodic: bool) -> Result<TriMesh> {
    let text = fs::read_to_string(path)?;
    parse_mesh(&text, periodic).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

pub fn parse_mesh_str(text: &str, periodic: bool) -> Result<TriMesh> {
    parse_mesh(text, periodic).map_err(|(line, message)| Error::Parse {
        path: "<string>".into(),
        line,
        message,
    })
}

struct Records<'a> {
    inner: Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>,
}

impl<'a> Records<'a> {
    fn new(text: &'a str) -> Self {
        let inner = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(no, l)| (no, l.split_whitespace().collect()));
        Records {
            inner: Box::new(inner),
        }
    }

    fn header(&mut self, name: &str) -> ParseResult<usize> {
        let (no, f) = self
            .inner
            .next()
            .ok_or((0, format!("missing `{name}` section")))?;
        if f.len() != 2 || f[0] != name {
            return Err((no, format!("expected `{name} <count>`")));
        }
        f[1].parse()
            .map_err(|_| (no, format!("bad count in `{name}` header")))
    }

    fn record(&mut self, what: &str, fields: usize) -> ParseResult<(usize, Vec<&'a str>)> {
        let (no, f) = self
            .inner
            .next()
            .ok_or((0, format!("truncated {what} table")))?;
        if f.len() != fields {
            return Err((no, format!("{what} record needs {fields} fields")));
        }
        Ok((no, f))
    }
}

fn field<T: std::str::FromStr>(no: usize, s: &str, what: &str) -> ParseResult<T> {
    s.parse().map_err(|_| (no, format!("bad {what} `{s}`")))
}

fn parse_mesh(text: &str, periodic: bool) -> ParseResult<TriMesh> {
    let mut rec = Records::new(text);

    let nv = rec.header("vertices")?;
    let mut vertices: Vec<Point> = Vec::with_capacity(nv);
    for k in 0..nv {
        let (no, f) = rec.record("vertex", 3)?;
        let idx: usize = field(no, f[0], "vertex index")?;
        if idx != k {
            return Err((no, format!("vertex index {idx} out of order, expected {k}")));
        }
        vertices.push([field(no, f[1], "x coordinate")?, field(no, f[2], "y coordinate")?]);
    }

    let nt = rec.header("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (no, f) = rec.record("triangle", 3)?;
        triangles.push([
            field(no, f[0], "vertex index")?,
            field(no, f[1], "vertex index")?,
            field(no, f[2], "vertex index")?,
        ]);
    }

    let ne = rec.header("edges")?;
    let mut tags = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (no, f) = rec.record("edge", 3)?;
        let tag = EdgeTag::parse(f[2]).ok_or((no, format!("unknown edge tag `{}`", f[2])))?;
        tags.push((field(no, f[0], "vertex index")?, field(no, f[1], "vertex index")?, tag));
    }
    if let Some((no, _)) = rec.inner.next() {
        return Err((no, "trailing data after edge table".into()));
    }
    if vertices.is_empty() {
        return Err((0, "mesh has no vertices".into()));
    }

    let bounds = vertices.iter().fold(
        Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |r, p| Rect::new(r.x0.min(p[0]), r.x1.max(p[0]), r.y0.min(p[1]), r.y1.max(p[1])),
    );
    let mut mesh = TriMesh::from_tagged_parts(vertices, triangles, tags, bounds, periodic, 0.0)
        .map_err(|e| (0, e.to_string()))?;
    mesh.h = mesh.max_edge_length();
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_mesh, build_macro_mesh, Geometry};

    #[test]
    fn round_trip_is_exact() {
        let m = build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap();
        let text = format_mesh(&m);
        let back = parse_mesh_str(&text, true).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.periodic_pairs(), m.periodic_pairs());
        assert_eq!(format_mesh(&back), text);
    }

    #[test]
    fn macro_round_trip() {
        let m = build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), 4, 5).unwrap();
        let back = parse_mesh_str(&format_mesh(&m), false).unwrap();
        assert_eq!(back.bounds(), m.bounds());
        assert_eq!(back.boundary_edges().count(), m.boundary_edges().count());
    }

    #[test]
    fn rejects_unknown_tag() {
        let text = "vertices 3\n0 0 0\n1 1 0\n2 0 1\ntriangles 1\n0 1 2\nedges 1\n0 1 sideways\n";
        let err = parse_mesh_str(text, false).unwrap_err();
        assert!(err.to_string().contains("sideways"));
    }
}
