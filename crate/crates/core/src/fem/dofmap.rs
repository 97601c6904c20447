//! Degree-of-freedom maps for Taylor-Hood spaces: P2 (vector) velocity,
//! P1 pressure-like scalars, and P2 scalars when needed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryLabel, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    P1Scalar,
    P2Scalar,
    P2Vector2,
}

impl Space {
    pub fn components(self) -> usize {
        match self {
            Space::P2Vector2 => 2,
            _ => 1,
        }
    }
}

/// Dof layout: scalar nodes are mesh vertices (P1) or vertices followed by
/// edge midpoints (P2). Vector dofs interleave components: node n carries
/// dofs (2n, 2n+1).
#[derive(Debug, Clone)]
pub struct DofMap {
    pub space: Space,
    pub vertex_count: usize,
    /// Unique mesh edges as sorted vertex pairs, lexicographically ordered.
    pub edges: Vec<(usize, usize)>,
    edge_index: HashMap<(usize, usize), usize>,
    pub dof_count: usize,
    /// Dirichlet-constrained dofs with prescribed values, sorted by dof.
    pub constrained: Vec<(usize, f64)>,
}

fn unique_edges(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = mesh
        .triangles
        .iter()
        .flat_map(|t| {
            (0..3).map(move |k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

impl DofMap {
    pub fn new(mesh: &TriMesh, space: Space) -> DofMap {
        let nv = mesh.vertices.len();
        let edges = match space {
            Space::P1Scalar => Vec::new(),
            _ => unique_edges(mesh),
        };
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let nodes = match space {
            Space::P1Scalar => nv,
            _ => nv + edges.len(),
        };
        DofMap {
            space,
            vertex_count: nv,
            edges,
            edge_index,
            dof_count: nodes * space.components(),
            constrained: Vec::new(),
        }
    }

    /// P2 vector space with Dirichlet constraints on inlet and wall parts.
    /// `value` maps (position, label) to the prescribed velocity; nodes shared
    /// between wall and inlet edges count as wall.
    pub fn p2_vector_dirichlet(
        mesh: &TriMesh,
        value: &dyn Fn([f64; 2], BoundaryLabel) -> [f64; 2],
    ) -> DofMap {
        let mut map = DofMap::new(mesh, Space::P2Vector2);
        let nv = map.vertex_count;
        // node -> label; wall wins over inlet on shared corners.
        let mut labels: HashMap<usize, BoundaryLabel> = HashMap::new();
        let tag = |node: usize, label: BoundaryLabel, labels: &mut HashMap<usize, BoundaryLabel>| {
            labels
                .entry(node)
                .and_modify(|l| {
                    if label == BoundaryLabel::WallDirichlet {
                        *l = label;
                    }
                })
                .or_insert(label);
        };
        for &(a, b, label) in &mesh.boundary_edges {
            if !label.is_dirichlet() {
                continue;
            }
            let e = if a < b { (a, b) } else { (b, a) };
            let mid = nv + map.edge_index[&e];
            tag(a, label, &mut labels);
            tag(b, label, &mut labels);
            tag(mid, label, &mut labels);
        }
        let coords = map.node_coords(mesh);
        let mut constrained = Vec::new();
        for (&node, &label) in &labels {
            let v = value(coords[node], label);
            constrained.push((2 * node, v[0]));
            constrained.push((2 * node + 1, v[1]));
        }
        constrained.sort_by_key(|&(d, _)| d);
        map.constrained = constrained;
        map
    }

    /// P1 scalar space with homogeneous Dirichlet values on the outlet, the
    /// trial/test space of the pressure-continuity correction.
    pub fn p1_scalar_outlet_zero(mesh: &TriMesh) -> DofMap {
        let mut map = DofMap::new(mesh, Space::P1Scalar);
        let mut constrained: Vec<(usize, f64)> = mesh
            .boundary_edges
            .iter()
            .filter(|(_, _, l)| *l == BoundaryLabel::Outlet)
            .flat_map(|&(a, b, _)| [(a, 0.0), (b, 0.0)])
            .collect();
        constrained.sort_by_key(|&(d, _)| d);
        constrained.dedup_by_key(|&mut (d, _)| d);
        map.constrained = constrained;
        map
    }

    pub fn scalar_node_count(&self) -> usize {
        self.dof_count / self.space.components()
    }

    /// Coordinates of scalar nodes: vertices, then P2 edge midpoints.
    pub fn node_coords(&self, mesh: &TriMesh) -> Vec<[f64; 2]> {
        let mut coords: Vec<[f64; 2]> = mesh.vertices.clone();
        if self.space != Space::P1Scalar {
            coords.extend(self.edges.iter().map(|&(a, b)| {
                let pa = mesh.vertices[a];
                let pb = mesh.vertices[b];
                [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
            }));
        }
        coords
    }

    /// Scalar nodes of triangle `t`, in local order
    /// [v0, v1, v2, e01, e12, e20] for P2 and [v0, v1, v2] for P1.
    pub fn triangle_nodes(&self, mesh: &TriMesh, t: usize) -> Vec<usize> {
        let tri = mesh.triangles[t];
        match self.space {
            Space::P1Scalar => tri.to_vec(),
            _ => {
                let nv = self.vertex_count;
                let mut nodes = Vec::with_capacity(6);
                nodes.extend_from_slice(&tri);
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    let e = if a < b { (a, b) } else { (b, a) };
                    nodes.push(nv + self.edge_index[&e]);
                }
                nodes
            }
        }
    }

    pub fn edge_node(&self, a: usize, b: usize) -> Option<usize> {
        let e = if a < b { (a, b) } else { (b, a) };
        self.edge_index.get(&e).map(|&k| self.vertex_count + k)
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        debug_assert!(comp < self.space.components());
        node * self.space.components() + comp
    }

    pub fn check_field(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.dof_count {
            return Err(Error::DimensionMismatch(format!(
                "field has {} entries, dofmap expects {}",
                values.len(),
                self.dof_count
            )));
        }
        Ok(())
    }
}

/// Coefficient vector over a dof map.
#[derive(Debug, Clone, PartialEq)]
pub struct FEField {
    pub values: Vec<f64>,
}

impl FEField {
    pub fn zeros(dofmap: &DofMap) -> FEField {
        FEField {
            values: vec![0.0; dofmap.dof_count],
        }
    }

    pub fn from_values(values: Vec<f64>) -> FEField {
        FEField { values }
    }

    /// Nodal interpolation of a scalar function.
    pub fn interpolate_scalar(mesh: &TriMesh, dofmap: &DofMap, f: impl Fn([f64; 2]) -> f64) -> FEField {
        assert_eq!(dofmap.space.components(), 1);
        let values = dofmap.node_coords(mesh).into_iter().map(f).collect();
        FEField { values }
    }

    /// Nodal interpolation of a vector function.
    pub fn interpolate_vector(
        mesh: &TriMesh,
        dofmap: &DofMap,
        f: impl Fn([f64; 2]) -> [f64; 2],
    ) -> FEField {
        assert_eq!(dofmap.space, Space::P2Vector2);
        let mut values = Vec::with_capacity(dofmap.dof_count);
        for p in dofmap.node_coords(mesh) {
            let v = f(p);
            values.push(v[0]);
            values.push(v[1]);
        }
        FEField { values }
    }

    /// Overwrites constrained entries with their prescribed values.
    pub fn apply_constraints(&mut self, dofmap: &DofMap) {
        for &(d, v) in &dofmap.constrained {
            self.values[d] = v;
        }
    }
}
