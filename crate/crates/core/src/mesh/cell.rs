use std::f64::consts::PI;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::structured::structured_parts;
use super::{dist, fluid_area, read_mesh, Geometry, Point, Rect, TriMesh};
use crate::error::{Error, Result};

/// Tuning knobs for the perforated-cell mesher.
#[derive(Debug, Clone, Copy)]
pub struct CellMeshOptions {
    /// Quality floor; meshes with a smaller angle are rejected.
    pub min_angle_degrees: f64,
    /// Laplacian smoothing passes applied to interior points.
    pub smoothing_passes: usize,
    /// Interior points closer than `clearance * h` to a boundary are dropped.
    pub clearance: f64,
}

impl Default for CellMeshOptions {
    fn default() -> Self {
        CellMeshOptions {
            min_angle_degrees: 10.0,
            smoothing_passes: 6,
            clearance: 0.6,
        }
    }
}

/// Meshes the fluid part of the unit cell with target element size `h`.
pub fn build_cell_mesh(geometry: &Geometry, h: f64) -> Result<TriMesh> {
    build_cell_mesh_with(geometry, h, CellMeshOptions::default())
}

pub fn build_cell_mesh_with(geometry: &Geometry, h: f64, opts: CellMeshOptions) -> Result<TriMesh> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Precondition(format!("mesh size must be positive, got {h}")));
    }
    geometry.validate()?;
    let mesh = match geometry {
        Geometry::Full => {
            let n = (1.0 / h).ceil().max(1.0) as usize + 1;
            let (v, t) = structured_parts(Rect::UNIT, n, n);
            TriMesh::from_parts(v, t, Rect::UNIT, true, h)?
        }
        Geometry::Custom { mesh_file } => {
            let m = read_mesh(mesh_file, true)?;
            if m.bounds() != Rect::UNIT {
                return Err(Error::GeometryInvalid(format!(
                    "custom cell mesh spans {:?}, expected the unit square",
                    m.bounds()
                )));
            }
            m
        }
        Geometry::Disk { center, radius } => {
            let n = ((2.0 * PI * radius / h).ceil() as usize).max(8);
            let poly = (0..n)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / n as f64;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect();
            perforated_mesh(vec![poly], h, opts)?
        }
        Geometry::TwoRects { rects } => {
            let polys = rects.iter().map(|r| rect_polygon(r, h)).collect();
            perforated_mesh(polys, h, opts)?
        }
    };
    mesh.validate()?;
    if let Some(expected) = geometry.obstacle_components() {
        let loops = mesh.obstacle_loops()?;
        if loops != expected {
            return Err(Error::MeshingFailed(format!(
                "expected {expected} obstacle loops, found {loops}"
            )));
        }
    }
    let min_angle = mesh.min_angle_degrees();
    if min_angle < opts.min_angle_degrees {
        return Err(Error::MeshingFailed(format!(
            "minimum angle {min_angle:.2} deg below the {:.1} deg floor",
            opts.min_angle_degrees
        )));
    }
    log::debug!(
        "cell mesh {}: {} vertices, {} triangles, min angle {:.1} deg, area {:.6}",
        geometry.label(),
        mesh.num_vertices(),
        mesh.num_triangles(),
        min_angle,
        fluid_area(&mesh)
    );
    Ok(mesh)
}

/// Counter-clockwise boundary polygon of a rectangle with segments no longer than `h`.
fn rect_polygon(r: &Rect, h: f64) -> Vec<Point> {
    let nx = (r.width() / h).ceil().max(1.0) as usize;
    let ny = (r.height() / h).ceil().max(1.0) as usize;
    let mut poly = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        poly.push([r.x0 + r.width() * i as f64 / nx as f64, r.y0]);
    }
    for j in 0..ny {
        poly.push([r.x1, r.y0 + r.height() * j as f64 / ny as f64]);
    }
    for i in 0..nx {
        poly.push([r.x1 - r.width() * i as f64 / nx as f64, r.y1]);
    }
    for j in 0..ny {
        poly.push([r.x0, r.y1 - r.height() * j as f64 / ny as f64]);
    }
    poly
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

struct Obstacles {
    polygons: Vec<Vec<Point>>,
}

impl Obstacles {
    fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| point_in_polygon(p, poly))
    }

    fn clearance(&self, p: Point) -> f64 {
        let square = p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]);
        self.polygons
            .iter()
            .flat_map(|poly| (0..poly.len()).map(move |k| (poly[k], poly[(k + 1) % poly.len()])))
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(square, f64::min)
    }
}

/// Constrained Delaunay mesh of the unit square minus polygonal holes.
///
/// Outer boundary points are laid out once per axis and reused on both opposite sides,
/// so the left/right and bottom/top traces match exactly.
fn perforated_mesh(polygons: Vec<Vec<Point>>, h: f64, opts: CellMeshOptions) -> Result<TriMesh> {
    let obstacles = Obstacles { polygons };
    let m = (1.0 / h).ceil().max(1.0) as usize;
    let trace: Vec<f64> = (0..=m)
        .map(|i| if i == m { 1.0 } else { i as f64 / m as f64 })
        .collect();

    let mut fixed: Vec<Point> = Vec::new();
    for &s in &trace {
        fixed.push([s, 0.0]);
        fixed.push([s, 1.0]);
    }
    for &s in &trace[1..m] {
        fixed.push([0.0, s]);
        fixed.push([1.0, s]);
    }
    let mut constraints: Vec<(Point, Point)> = Vec::new();
    for w in trace.windows(2) {
        constraints.push(([w[0], 0.0], [w[1], 0.0]));
        constraints.push(([w[0], 1.0], [w[1], 1.0]));
        constraints.push(([0.0, w[0]], [0.0, w[1]]));
        constraints.push(([1.0, w[0]], [1.0, w[1]]));
    }
    for poly in &obstacles.polygons {
        fixed.extend_from_slice(poly);
        for k in 0..poly.len() {
            constraints.push((poly[k], poly[(k + 1) % poly.len()]));
        }
    }

    // equilateral-ish lattice for the interior
    let hx = 1.0 / m as f64;
    let rows = ((1.0 / (hx * 3f64.sqrt() / 2.0)).round() as usize).max(2);
    let hy = 1.0 / rows as f64;
    let mut free: Vec<Point> = Vec::new();
    for r in 1..rows {
        let offset = if r % 2 == 1 { 0.5 * hx } else { 0.0 };
        let y = r as f64 * hy;
        let mut x = offset;
        while x < 1.0 {
            let p = [x, y];
            if x > 0.0 && !obstacles.contains(p) && obstacles.clearance(p) >= opts.clearance * h {
                free.push(p);
            }
            x += hx;
        }
    }

    let mut result = triangulate(&fixed, &free, &constraints, &obstacles)?;
    for _ in 0..opts.smoothing_passes {
        let moved = smooth(&result, fixed.len(), &obstacles, opts.clearance * h * 0.5);
        free = moved;
        result = triangulate(&fixed, &free, &constraints, &obstacles)?;
    }
    let (vertices, triangles) = result;
    TriMesh::from_parts(vertices, triangles, Rect::UNIT, true, h)
}

type Parts = (Vec<Point>, Vec<[usize; 3]>);

/// Returns vertices ordered as `fixed ++ free` and the fluid triangles.
fn triangulate(
    fixed: &[Point],
    free: &[Point],
    constraints: &[(Point, Point)],
    obstacles: &Obstacles,
) -> Result<Parts> {
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(fixed.len() + free.len());
    for p in fixed.iter().chain(free) {
        let h = cdt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::MeshingFailed(format!("point insertion failed at {p:?}: {e:?}")))?;
        handles.push(h);
    }
    let lookup: std::collections::HashMap<(u64, u64), usize> = fixed
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0].to_bits(), p[1].to_bits()), i))
        .collect();
    for (a, b) in constraints {
        let ia = lookup[&(a[0].to_bits(), a[1].to_bits())];
        let ib = lookup[&(b[0].to_bits(), b[1].to_bits())];
        if cdt.can_add_constraint(handles[ia], handles[ib]) {
            cdt.add_constraint(handles[ia], handles[ib]);
        } else if !cdt.exists_constraint(handles[ia], handles[ib]) {
            return Err(Error::MeshingFailed(format!(
                "boundary segment {a:?} -> {b:?} intersects another constraint"
            )));
        }
    }
    let mut index_of = vec![usize::MAX; cdt.num_vertices()];
    for (i, h) in handles.iter().enumerate() {
        index_of[h.index()] = i;
    }
    if index_of.iter().any(|&i| i == usize::MAX) {
        return Err(Error::MeshingFailed("duplicate mesh points".into()));
    }
    let vertices: Vec<Point> = fixed.iter().chain(free).copied().collect();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let vs = face.vertices().map(|v| index_of[v.fix().index()]);
        let c = [
            (vertices[vs[0]][0] + vertices[vs[1]][0] + vertices[vs[2]][0]) / 3.0,
            (vertices[vs[0]][1] + vertices[vs[1]][1] + vertices[vs[2]][1]) / 3.0,
        ];
        if !obstacles.contains(c) {
            triangles.push(vs);
        }
    }
    Ok((vertices, triangles))
}

/// One Laplacian smoothing sweep over the free points.
fn smooth(parts: &Parts, n_fixed: usize, obstacles: &Obstacles, min_clearance: f64) -> Vec<Point> {
    let (vertices, triangles) = parts;
    let n = vertices.len();
    let mut sum = vec![[0.0f64; 2]; n];
    let mut count = vec![0usize; n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            // interior edges are visited twice, boundary ones once; weights stay symmetric enough
            for (i, j) in [(a, b), (b, a)] {
                sum[i][0] += vertices[j][0];
                sum[i][1] += vertices[j][1];
                count[i] += 1;
            }
        }
    }
    (n_fixed..n)
        .map(|i| {
            if count[i] == 0 {
                return vertices[i];
            }
            let p = [sum[i][0] / count[i] as f64, sum[i][1] / count[i] as f64];
            if obstacles.contains(p) || obstacles.clearance(p) < min_clearance {
                vertices[i]
            } else {
                p
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EdgeTag;

    #[test]
    fn full_cell_half_spacing() {
        let m = build_cell_mesh(&Geometry::Full, 0.5).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
        assert_eq!(m.periodic_pairs().horizontal.len(), 3);
        assert_eq!(m.periodic_pairs().vertical.len(), 3);
        assert!((fluid_area(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_cell_area_and_loops() {
        let m = build_cell_mesh(&Geometry::centered_disk(), 0.05).unwrap();
        let exact = 1.0 - PI * 0.0625;
        let area = fluid_area(&m);
        assert!((area - exact).abs() / exact < 0.01, "area {area}");
        assert_eq!(m.obstacle_loops().unwrap(), 1);
        assert!(m.min_angle_degrees() > 10.0);
        for ((a, b), t) in m.boundary_edges() {
            if t == EdgeTag::Obstacle {
                assert!(dist(m.vertices()[a], m.vertices()[b]) <= 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn bars_cell_area() {
        let m = build_cell_mesh(&Geometry::horizontal_bars(), 0.05).unwrap();
        assert!((fluid_area(&m) - 0.84).abs() / 0.84 < 0.01);
        assert_eq!(m.obstacle_loops().unwrap(), 2);
    }

    #[test]
    fn oversized_disk_rejected() {
        let g = Geometry::Disk {
            center: [0.5, 0.5],
            radius: 0.6,
        };
        assert!(matches!(build_cell_mesh(&g, 0.05), Err(Error::GeometryInvalid(_))));
    }

    #[test]
    fn polygon_containment() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(point_in_polygon([0.5, 0.5], &sq));
        assert!(!point_in_polygon([1.5, 0.5], &sq));
    }
}
