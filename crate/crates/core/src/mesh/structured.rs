use super::{Point, Rect, TriMesh};
use crate::error::{Error, Result};

/// Grid of `n1 x n2` nodes on `domain`, each cell split along alternating diagonals.
pub(crate) fn structured_parts(domain: Rect, n1: usize, n2: usize) -> (Vec<Point>, Vec<[usize; 3]>) {
    let dx = domain.width() / (n1 - 1) as f64;
    let dy = domain.height() / (n2 - 1) as f64;
    let mut vertices = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        // pin the last row/column to the exact bounds so periodic traces match bitwise
        let y = if j == n2 - 1 { domain.y1 } else { domain.y0 + j as f64 * dy };
        for i in 0..n1 {
            let x = if i == n1 - 1 { domain.x1 } else { domain.x0 + i as f64 * dx };
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * n1 + i;
    let mut triangles = Vec::with_capacity(2 * (n1 - 1) * (n2 - 1));
    for j in 0..n2 - 1 {
        for i in 0..n1 - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    (vertices, triangles)
}

/// Structured triangulation of an axis-aligned rectangle with `n1 x n2` grid nodes.
pub fn build_macro_mesh(domain: Rect, n1: usize, n2: usize) -> Result<TriMesh> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Precondition(format!(
            "macro mesh needs at least 2 nodes per direction, got {n1} x {n2}"
        )));
    }
    if !(domain.width() > 0.0 && domain.height() > 0.0) {
        return Err(Error::Precondition(format!("empty macro domain {domain:?}")));
    }
    let (vertices, triangles) = structured_parts(domain, n1, n2);
    let h = (domain.width() / (n1 - 1) as f64).hypot(domain.height() / (n2 - 1) as f64);
    TriMesh::from_parts(vertices, triangles, domain, false, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{fluid_area, EdgeTag};

    #[test]
    fn minimal_grid() {
        let m = build_macro_mesh(Rect::UNIT, 2, 2).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!(m.periodic_pairs().is_empty());
    }

    #[test]
    fn paper_resolution() {
        let m = build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), 50, 50).unwrap();
        assert_eq!(m.num_vertices(), 2500);
        assert_eq!(m.num_triangles(), 2 * 49 * 49);
        assert!((fluid_area(&m) - 2.0).abs() < 1e-12);
        m.validate().unwrap();
        let outer = m.boundary_edges().filter(|(_, t)| t.is_outer()).count();
        assert_eq!(outer, 4 * 49);
        assert!(m.boundary_edges().all(|(_, t)| t != EdgeTag::Obstacle));
    }

    #[test]
    fn rejects_single_node_direction() {
        let r = build_macro_mesh(Rect::new(0.0, 1.0, 0.0, 2.0), 1, 5);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
