//! Triangulations of the perforated unit cell and of the rectangular macro domain.

mod cell;
mod io;
mod structured;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cell::{build_cell_mesh, build_cell_mesh_with, CellMeshOptions};
pub use io::{format_mesh, parse_mesh_str, read_mesh, write_mesh};
pub use structured::build_macro_mesh;

pub type Point = [f64; 2];

/// Absolute tolerance for coordinate matching on the cell boundary.
pub const COORD_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    /// Euclidean distance from `p` to the closed rectangle (zero inside).
    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.x0 - p[0]).max(0.0).max(p[0] - self.x1);
        let dy = (self.y0 - p[1]).max(0.0).max(p[1] - self.y1);
        dx.hypot(dy)
    }

    fn is_valid(&self) -> bool {
        [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    fn strictly_inside_unit(&self) -> bool {
        self.x0 > 0.0 && self.y0 > 0.0 && self.x1 < 1.0 && self.y1 < 1.0
    }
}

/// Obstacle layout of the unit cell. The fluid region is `(0,1)^2` minus the obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// No obstacle.
    Full,
    /// Closed disk obstacle.
    Disk { center: Point, radius: f64 },
    /// Two disjoint closed rectangles.
    TwoRects { rects: [Rect; 2] },
    /// Externally supplied cell mesh in the text mesh format.
    Custom { mesh_file: PathBuf },
}

impl Geometry {
    /// Disk of radius 0.25 centred in the cell.
    pub fn centered_disk() -> Self {
        Geometry::Disk {
            center: [0.5, 0.5],
            radius: 0.25,
        }
    }

    /// Two horizontal bars `[0.1,0.9]x[0.1,0.2]` and `[0.1,0.9]x[0.8,0.9]`.
    pub fn horizontal_bars() -> Self {
        Geometry::TwoRects {
            rects: [Rect::new(0.1, 0.9, 0.1, 0.2), Rect::new(0.1, 0.9, 0.8, 0.9)],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Geometry::Full => "full",
            Geometry::Disk { .. } => "disk",
            Geometry::TwoRects { .. } => "two_rects",
            Geometry::Custom { .. } => "custom",
        }
    }

    /// Label plus parameters, usable in file names and cache keys.
    pub fn key(&self) -> String {
        match self {
            Geometry::Full => "full".into(),
            Geometry::Disk { center, radius } => format!("disk-{}-{}-{}", center[0], center[1], radius),
            Geometry::TwoRects { rects } => {
                let r: Vec<String> = rects
                    .iter()
                    .map(|r| format!("{}-{}-{}-{}", r.x0, r.x1, r.y0, r.y1))
                    .collect();
                format!("two_rects-{}", r.join("-"))
            }
            Geometry::Custom { mesh_file } => format!(
                "custom-{}",
                mesh_file.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default()
            ),
        }
    }

    /// Checks the obstacle invariants.
    pub fn validate(&self) -> Result<()> {
        match self {
            Geometry::Full | Geometry::Custom { .. } => Ok(()),
            Geometry::Disk { center, radius } => {
                let r = *radius;
                if !(r.is_finite() && r > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::GeometryInvalid(format!(
                        "disk radius must be positive and finite, got {r}"
                    )));
                }
                let inside = center[0] - r > 0.0
                    && center[0] + r < 1.0
                    && center[1] - r > 0.0
                    && center[1] + r < 1.0;
                if !inside {
                    return Err(Error::GeometryInvalid(format!(
                        "disk B_{r}({:?}) is not strictly inside the unit square",
                        center
                    )));
                }
                Ok(())
            }
            Geometry::TwoRects { rects } => {
                for (k, r) in rects.iter().enumerate() {
                    if !r.is_valid() {
                        return Err(Error::GeometryInvalid(format!(
                            "rectangle {k} is degenerate: {r:?}"
                        )));
                    }
                    if !r.strictly_inside_unit() {
                        return Err(Error::GeometryInvalid(format!(
                            "rectangle {k} touches or leaves the unit square: {r:?}"
                        )));
                    }
                }
                let [a, b] = rects;
                let gap_x = (b.x0 - a.x1).max(a.x0 - b.x1);
                let gap_y = (b.y0 - a.y1).max(a.y0 - b.y1);
                if gap_x <= 0.0 && gap_y <= 0.0 {
                    return Err(Error::GeometryInvalid(
                        "rectangles overlap or touch; only disjoint rectangles are supported"
                            .into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Analytic fluid area `|Y|`, when closed-form.
    pub fn analytic_fluid_area(&self) -> Option<f64> {
        match self {
            Geometry::Full => Some(1.0),
            Geometry::Disk { radius, .. } => Some(1.0 - std::f64::consts::PI * radius * radius),
            Geometry::TwoRects { rects } => Some(1.0 - rects[0].area() - rects[1].area()),
            Geometry::Custom { .. } => None,
        }
    }

    /// Number of connected obstacle components.
    pub fn obstacle_components(&self) -> Option<usize> {
        match self {
            Geometry::Full => Some(0),
            Geometry::Disk { .. } => Some(1),
            Geometry::TwoRects { .. } => Some(2),
            Geometry::Custom { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeTag {
    Left,
    Right,
    Bottom,
    Top,
    Obstacle,
    Interior,
}

impl EdgeTag {
    pub fn name(self) -> &'static str {
        match self {
            EdgeTag::Left => "left",
            EdgeTag::Right => "right",
            EdgeTag::Bottom => "bottom",
            EdgeTag::Top => "top",
            EdgeTag::Obstacle => "obstacle",
            EdgeTag::Interior => "interior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "left" => EdgeTag::Left,
            "right" => EdgeTag::Right,
            "bottom" => EdgeTag::Bottom,
            "top" => EdgeTag::Top,
            "obstacle" => EdgeTag::Obstacle,
            "interior" => EdgeTag::Interior,
            _ => return None,
        })
    }

    pub fn is_outer(self) -> bool {
        matches!(
            self,
            EdgeTag::Left | EdgeTag::Right | EdgeTag::Bottom | EdgeTag::Top
        )
    }
}

impl fmt::Display for EdgeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Opposite-side vertex pairs of a periodic cell mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeriodicPairs {
    /// Left vertex -> right partner, shifted by `(1, 0)`.
    pub horizontal: Vec<(usize, usize)>,
    /// Bottom vertex -> top partner, shifted by `(0, 1)`.
    pub vertical: Vec<(usize, usize)>,
}

impl PeriodicPairs {
    pub fn is_empty(&self) -> bool {
        self.horizontal.is_empty() && self.vertical.is_empty()
    }

    pub fn len(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }
}

/// Edge list of a mesh with the triangle-to-edge incidence.
///
/// Local edge `k` of a triangle joins local vertices `k` and `(k + 1) % 3`.
#[derive(Debug, Clone)]
pub struct MeshEdges {
    pub edges: Vec<[usize; 2]>,
    pub triangle_edges: Vec<[usize; 3]>,
    index: HashMap<(usize, usize), usize>,
}

impl MeshEdges {
    pub fn find(&self, a: usize, b: usize) -> Option<usize> {
        self.index.get(&edge_key(a, b)).copied()
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Conforming triangulation with boundary classification. Immutable once built.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edge_tags: BTreeMap<(usize, usize), EdgeTag>,
    periodic_pairs: PeriodicPairs,
    bounds: Rect,
    h: f64,
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriMesh {
    /// Assembles a mesh from raw parts. Triangles are reoriented counter-clockwise,
    /// boundary edges are tagged against `bounds`, and periodic pairs are matched when
    /// `periodic` is set.
    pub fn from_parts(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        bounds: Rect,
        periodic: bool,
        h: f64,
    ) -> Result<Self> {
        let n = vertices.len();
        for t in triangles.iter_mut() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::MeshingFailed(format!(
                    "triangle {t:?} references a missing vertex"
                )));
            }
            if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                *counts.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut edge_tags = BTreeMap::new();
        for (&(a, b), &c) in &counts {
            if c > 2 {
                return Err(Error::MeshingFailed(format!(
                    "edge ({a}, {b}) shared by {c} triangles"
                )));
            }
            if c == 1 {
                edge_tags.insert((a, b), classify_edge(vertices[a], vertices[b], &bounds));
            }
        }
        let mut mesh = TriMesh {
            vertices,
            triangles,
            edge_tags,
            periodic_pairs: PeriodicPairs::default(),
            bounds,
            h,
        };
        if periodic {
            mesh.periodic_pairs = match_periodic_pairs(&mesh)?;
        }
        Ok(mesh)
    }

    /// Like [`TriMesh::from_parts`] but keeps caller-provided boundary tags.
    pub(crate) fn from_tagged_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        tags: Vec<(usize, usize, EdgeTag)>,
        bounds: Rect,
        periodic: bool,
        h: f64,
    ) -> Result<Self> {
        let mut mesh = Self::from_parts(vertices, triangles, bounds, false, h)?;
        for (a, b, tag) in tags {
            let key = edge_key(a, b);
            match mesh.edge_tags.get_mut(&key) {
                Some(t) => *t = tag,
                None if tag == EdgeTag::Interior => {}
                None => {
                    return Err(Error::MeshingFailed(format!(
                        "tagged edge ({a}, {b}) is not a boundary edge"
                    )))
                }
            }
        }
        if periodic {
            mesh.periodic_pairs = match_periodic_pairs(&mesh)?;
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn periodic_pairs(&self) -> &PeriodicPairs {
        &self.periodic_pairs
    }

    /// Boundary edges with their tags; every other edge is interior.
    pub fn boundary_edges(&self) -> impl Iterator<Item = ((usize, usize), EdgeTag)> + '_ {
        self.edge_tags.iter().map(|(&k, &t)| (k, t))
    }

    pub fn edge_tag(&self, a: usize, b: usize) -> EdgeTag {
        self.edge_tags
            .get(&edge_key(a, b))
            .copied()
            .unwrap_or(EdgeTag::Interior)
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    /// Vertices lying on an edge with one of `tags`.
    pub fn vertices_with_tags(&self, tags: &[EdgeTag]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edge_tags
            .iter()
            .filter(|(_, t)| tags.contains(t))
            .flat_map(|(&(a, b), _)| [a, b])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn edges(&self) -> MeshEdges {
        let mut edges = Vec::new();
        let mut index = HashMap::new();
        let mut triangle_edges = Vec::with_capacity(self.triangles.len());
        for t in &self.triangles {
            let mut te = [0; 3];
            for k in 0..3 {
                let key = edge_key(t[k], t[(k + 1) % 3]);
                te[k] = *index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
            }
            triangle_edges.push(te);
        }
        MeshEdges {
            edges,
            triangle_edges,
            index,
        }
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| min_triangle_angle(self.triangle_points(t)))
            .fold(f64::INFINITY, f64::min)
            .to_degrees()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .edges
            .iter()
            .map(|&[a, b]| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Number of closed loops formed by obstacle-tagged edges.
    pub fn obstacle_loops(&self) -> Result<usize> {
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for (&(a, b), &t) in &self.edge_tags {
            if t == EdgeTag::Obstacle {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        if let Some((v, nb)) = adj.iter().find(|(_, nb)| nb.len() != 2) {
            return Err(Error::MeshingFailed(format!(
                "obstacle vertex {v} has {} obstacle edges; boundary is not a closed loop",
                nb.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut loops = 0;
        for &start in adj.keys() {
            if !seen.insert(start) {
                continue;
            }
            loops += 1;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &adj[&v] {
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
        }
        Ok(loops)
    }

    /// Checks orientation, conformity, periodic pairing and boundary tagging.
    pub fn validate(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            let area = self.triangle_area(t);
            if !(area > 0.0) {
                return Err(Error::MeshingFailed(format!(
                    "triangle {t} {tri:?} has non-positive area {area:e}"
                )));
            }
        }
        for (&(a, b), &tag) in &self.edge_tags {
            if tag == EdgeTag::Interior {
                return Err(Error::MeshingFailed(format!(
                    "boundary edge ({a}, {b}) carries the interior tag"
                )));
            }
            if tag.is_outer() && classify_edge(self.vertices[a], self.vertices[b], &self.bounds) != tag {
                return Err(Error::MeshingFailed(format!(
                    "edge ({a}, {b}) tagged {tag} does not lie on that side"
                )));
            }
        }
        // A hanging vertex shows up as an outer-boundary or obstacle chain that
        // does not close, or as a boundary edge strictly inside the domain.
        self.obstacle_loops()?;
        let check = |pairs: &[(usize, usize)], shift: Point| -> Result<()> {
            for &(a, b) in pairs {
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                if (pb[0] - pa[0] - shift[0]).abs() > COORD_TOL
                    || (pb[1] - pa[1] - shift[1]).abs() > COORD_TOL
                {
                    return Err(Error::MeshingFailed(format!(
                        "periodic pair ({a}, {b}) is not shifted by {shift:?}"
                    )));
                }
            }
            Ok(())
        };
        check(&self.periodic_pairs.horizontal, [self.bounds.width(), 0.0])?;
        check(&self.periodic_pairs.vertical, [0.0, self.bounds.height()])?;
        Ok(())
    }
}

/// Sum of triangle areas, used as `|Y|` in every cell average.
pub fn fluid_area(mesh: &TriMesh) -> f64 {
    (0..mesh.num_triangles()).map(|t| mesh.triangle_area(t)).sum()
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn min_triangle_angle(p: [Point; 3]) -> f64 {
    let mut min = f64::INFINITY;
    for k in 0..3 {
        let a = p[k];
        let b = p[(k + 1) % 3];
        let c = p[(k + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cross = (u[0] * v[1] - u[1] * v[0]).abs();
        let dot = u[0] * v[0] + u[1] * v[1];
        min = min.min(cross.atan2(dot));
    }
    min
}

fn classify_edge(a: Point, b: Point, bounds: &Rect) -> EdgeTag {
    let on = |v: f64, target: f64| (v - target).abs() <= COORD_TOL;
    if on(a[0], bounds.x0) && on(b[0], bounds.x0) {
        EdgeTag::Left
    } else if on(a[0], bounds.x1) && on(b[0], bounds.x1) {
        EdgeTag::Right
    } else if on(a[1], bounds.y0) && on(b[1], bounds.y0) {
        EdgeTag::Bottom
    } else if on(a[1], bounds.y1) && on(b[1], bounds.y1) {
        EdgeTag::Top
    } else {
        EdgeTag::Obstacle
    }
}

fn match_side(
    mesh: &TriMesh,
    from: EdgeTag,
    to: EdgeTag,
    coord: usize,
) -> Result<Vec<(usize, usize)>> {
    let sorted = |tag| {
        let mut v = mesh.vertices_with_tags(&[tag]);
        v.sort_by(|&a, &b| mesh.vertices[a][coord].total_cmp(&mesh.vertices[b][coord]));
        v
    };
    let src = sorted(from);
    let dst = sorted(to);
    if src.len() != dst.len() {
        return Err(Error::MeshingFailed(format!(
            "{from} side has {} vertices but {to} side has {}",
            src.len(),
            dst.len()
        )));
    }
    src.into_iter()
        .zip(dst)
        .map(|(a, b)| {
            if (mesh.vertices[a][coord] - mesh.vertices[b][coord]).abs() > COORD_TOL {
                Err(Error::MeshingFailed(format!(
                    "{from}/{to} boundary traces are not mirror-matched at vertices {a}, {b}"
                )))
            } else {
                Ok((a, b))
            }
        })
        .collect()
}

fn match_periodic_pairs(mesh: &TriMesh) -> Result<PeriodicPairs> {
    Ok(PeriodicPairs {
        horizontal: match_side(mesh, EdgeTag::Left, EdgeTag::Right, 1)?,
        vertical: match_side(mesh, EdgeTag::Bottom, EdgeTag::Top, 0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_distance() {
        let r = Rect::new(0.1, 0.9, 0.1, 0.2);
        assert_eq!(r.distance([0.5, 0.15]), 0.0);
        assert!((r.distance([0.5, 0.3]) - 0.1).abs() < 1e-15);
        assert!((r.distance([0.0, 0.0]) - 0.1f64.hypot(0.1)).abs() < 1e-15);
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::centered_disk().validate().is_ok());
        assert!(Geometry::horizontal_bars().validate().is_ok());
        let big = Geometry::Disk {
            center: [0.5, 0.5],
            radius: 0.6,
        };
        assert!(matches!(big.validate(), Err(Error::GeometryInvalid(_))));
        let touching = Geometry::TwoRects {
            rects: [Rect::new(0.0, 0.9, 0.1, 0.2), Rect::new(0.1, 0.9, 0.8, 0.9)],
        };
        assert!(matches!(touching.validate(), Err(Error::GeometryInvalid(_))));
        let overlapping = Geometry::TwoRects {
            rects: [Rect::new(0.1, 0.9, 0.1, 0.5), Rect::new(0.4, 0.6, 0.3, 0.9)],
        };
        assert!(matches!(overlapping.validate(), Err(Error::GeometryInvalid(_))));
    }

    #[test]
    fn analytic_areas() {
        let d = Geometry::centered_disk().analytic_fluid_area().unwrap();
        assert!((d - (1.0 - std::f64::consts::PI / 16.0)).abs() < 1e-15);
        let r = Geometry::horizontal_bars().analytic_fluid_area().unwrap();
        assert!((r - 0.84).abs() < 1e-12);
    }
}
