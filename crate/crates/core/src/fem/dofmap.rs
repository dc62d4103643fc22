use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{EdgeTag, MeshEdges, Point, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    ScalarP1,
    /// Two P2 components stored block-wise: `[all x-dofs, all y-dofs]`.
    VectorP2,
    /// Same nodes as [`Space::ScalarP1`]; kept distinct for pressure blocks.
    ScalarP1Pressure,
}

impl Space {
    pub fn components(self) -> usize {
        match self {
            Space::VectorP2 => 2,
            _ => 1,
        }
    }

    pub fn nodes_per_element(self) -> usize {
        match self {
            Space::VectorP2 => 6,
            _ => 3,
        }
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, Space::VectorP2)
    }
}

/// Degree-of-freedom numbering with periodic identification and Dirichlet elimination.
///
/// Indices go through three levels: *raw* (one per node and component), *class*
/// (raw dofs identified across periodic faces), and *free* (classes that are not
/// Dirichlet-constrained).
#[derive(Debug, Clone)]
pub struct DofMap {
    space: Space,
    n_nodes: usize,
    element_nodes: Vec<[usize; 6]>,
    node_coords: Vec<Point>,
    class_of: Vec<usize>,
    n_classes: usize,
    free_of_class: Vec<Option<usize>>,
    n_free: usize,
    identified: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // smaller index becomes the master
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

impl DofMap {
    /// Builds the map; `periodic` identifies the mesh's periodic pairs, and nodes on
    /// edges tagged with any of `dirichlet` are eliminated.
    pub fn new(mesh: &TriMesh, space: Space, periodic: bool, dirichlet: &[EdgeTag]) -> Result<Self> {
        let nv = mesh.num_vertices();
        let edges: Option<MeshEdges> = space.is_quadratic().then(|| mesh.edges());
        let n_nodes = nv + edges.as_ref().map_or(0, |e| e.edges.len());

        let mut element_nodes = Vec::with_capacity(mesh.num_triangles());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let mut nodes = [usize::MAX; 6];
            nodes[..3].copy_from_slice(tri);
            if let Some(e) = &edges {
                for k in 0..3 {
                    nodes[3 + k] = nv + e.triangle_edges[t][k];
                }
            }
            element_nodes.push(nodes);
        }
        let mut node_coords = mesh.vertices().to_vec();
        if let Some(e) = &edges {
            let v = mesh.vertices();
            node_coords.extend(
                e.edges
                    .iter()
                    .map(|&[a, b]| [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])]),
            );
        }

        let mut parent: Vec<usize> = (0..n_nodes).collect();
        let pairs = mesh.periodic_pairs();
        let identified = periodic && !pairs.is_empty();
        if identified {
            let mut partner: HashMap<usize, usize> = HashMap::new();
            for &(a, b) in pairs.horizontal.iter().chain(&pairs.vertical) {
                union(&mut parent, a, b);
            }
            if let Some(e) = &edges {
                for (from, to, list) in [
                    (EdgeTag::Left, EdgeTag::Right, &pairs.horizontal),
                    (EdgeTag::Bottom, EdgeTag::Top, &pairs.vertical),
                ] {
                    partner.clear();
                    partner.extend(list.iter().copied());
                    for ((a, b), tag) in mesh.boundary_edges() {
                        if tag != from {
                            continue;
                        }
                        let (pa, pb) = match (partner.get(&a), partner.get(&b)) {
                            (Some(&pa), Some(&pb)) => (pa, pb),
                            _ => {
                                return Err(Error::MissingPairs(format!(
                                    "{from} edge ({a}, {b}) has no {to} partner"
                                )))
                            }
                        };
                        let ea = e.find(a, b).expect("boundary edge indexed");
                        let eb = e.find(pa, pb).ok_or_else(|| {
                            Error::MissingPairs(format!("no {to} edge ({pa}, {pb})"))
                        })?;
                        union(&mut parent, nv + ea, nv + eb);
                    }
                }
            }
        }

        let mut dirichlet_node = vec![false; n_nodes];
        for ((a, b), tag) in mesh.boundary_edges() {
            if dirichlet.contains(&tag) {
                dirichlet_node[a] = true;
                dirichlet_node[b] = true;
                if let Some(e) = &edges {
                    dirichlet_node[nv + e.find(a, b).expect("edge")] = true;
                }
            }
        }

        let components = space.components();
        let n_raw = n_nodes * components;
        let mut root_class: HashMap<usize, usize> = HashMap::new();
        let mut node_class = vec![0; n_nodes];
        for i in 0..n_nodes {
            let r = find(&mut parent, i);
            let next = root_class.len();
            node_class[i] = *root_class.entry(r).or_insert(next);
        }
        let classes_per_comp = root_class.len();
        let mut class_dirichlet = vec![false; classes_per_comp];
        for i in 0..n_nodes {
            class_dirichlet[node_class[i]] |= dirichlet_node[i];
        }
        let class_of: Vec<usize> = (0..n_raw)
            .map(|d| (d / n_nodes) * classes_per_comp + node_class[d % n_nodes])
            .collect();
        let n_classes = classes_per_comp * components;
        let mut free_of_class = vec![None; n_classes];
        let mut n_free = 0;
        for (c, slot) in free_of_class.iter_mut().enumerate() {
            if !class_dirichlet[c % classes_per_comp] {
                *slot = Some(n_free);
                n_free += 1;
            }
        }
        Ok(DofMap {
            space,
            n_nodes,
            element_nodes,
            node_coords,
            class_of,
            n_classes,
            free_of_class,
            n_free,
            identified,
        })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Nodes per component (vertices, plus edge midpoints for P2).
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_raw(&self) -> usize {
        self.n_nodes * self.space.components()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn free_dof_count(&self) -> usize {
        self.n_free
    }

    pub fn is_identified(&self) -> bool {
        self.identified
    }

    /// Local-to-global node numbers of triangle `t` (3 for P1, 6 for P2).
    pub fn element_nodes(&self, t: usize) -> &[usize] {
        &self.element_nodes[t][..self.space.nodes_per_element()]
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    /// Raw dof of `node` in component `comp`.
    pub fn raw(&self, node: usize, comp: usize) -> usize {
        comp * self.n_nodes + node
    }

    pub fn class_of(&self, raw: usize) -> usize {
        self.class_of[raw]
    }

    pub fn free_of_class(&self, class: usize) -> Option<usize> {
        self.free_of_class[class]
    }

    pub fn free_of_raw(&self, raw: usize) -> Option<usize> {
        self.free_of_class[self.class_of[raw]]
    }

    pub(crate) fn raw_to_class_map(&self) -> Vec<Option<usize>> {
        self.class_of.iter().map(|&c| Some(c)).collect()
    }

    pub(crate) fn class_to_free_map(&self) -> &[Option<usize>] {
        &self.free_of_class
    }

    /// Raw coefficient vector from free values; eliminated dofs are zero.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        (0..self.n_raw())
            .map(|d| self.free_of_raw(d).map_or(0.0, |f| free[f]))
            .collect()
    }

    /// Free values from a raw vector, taking the value at each class's first raw dof.
    pub fn restrict(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        let mut seen = vec![false; self.n_free];
        for (d, &v) in raw.iter().enumerate() {
            if let Some(f) = self.free_of_raw(d) {
                if !seen[f] {
                    out[f] = v;
                    seen[f] = true;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_mesh, build_macro_mesh, Geometry, Rect};

    #[test]
    fn structured_three_by_three_periodic() {
        let m = build_cell_mesh(&Geometry::Full, 0.5).unwrap();
        let d = DofMap::new(&m, Space::ScalarP1, true, &[]).unwrap();
        assert_eq!(d.n_raw(), 9);
        assert_eq!(d.free_dof_count(), 4);
        // all four corners share one class
        let corners: Vec<usize> = m
            .vertices()
            .iter()
            .enumerate()
            .filter(|(_, p)| (p[0] == 0.0 || p[0] == 1.0) && (p[1] == 0.0 || p[1] == 1.0))
            .map(|(i, _)| d.class_of(i))
            .collect();
        assert_eq!(corners.len(), 4);
        assert!(corners.iter().all(|&c| c == corners[0]));
    }

    #[test]
    fn p2_periodic_counts() {
        // 3x3 grid: 9 vertices, 16 edges; torus has 4 vertices and 12 edges
        let m = build_cell_mesh(&Geometry::Full, 0.5).unwrap();
        let d = DofMap::new(&m, Space::VectorP2, true, &[]).unwrap();
        assert_eq!(d.n_nodes(), 25);
        assert_eq!(d.free_dof_count(), 2 * (4 + 12));
    }

    #[test]
    fn dirichlet_removed() {
        let m = build_macro_mesh(Rect::UNIT, 4, 4).unwrap();
        let tags = [EdgeTag::Left, EdgeTag::Right, EdgeTag::Bottom, EdgeTag::Top];
        let d = DofMap::new(&m, Space::ScalarP1, false, &tags).unwrap();
        assert_eq!(d.free_dof_count(), 4);
        assert!(!d.is_identified());
    }

    #[test]
    fn obstacle_no_slip_nodes() {
        let m = build_cell_mesh(&Geometry::centered_disk(), 0.1).unwrap();
        let d = DofMap::new(&m, Space::VectorP2, true, &[EdgeTag::Obstacle]).unwrap();
        let obstacle_edges = m
            .boundary_edges()
            .filter(|(_, t)| *t == EdgeTag::Obstacle)
            .count();
        // closed loop: as many vertices as edges, plus one midpoint per edge
        assert_eq!(d.n_classes() - d.free_dof_count(), 2 * 2 * obstacle_edges);
    }
}
