//! Operator assembly on triangular meshes: mass, stiffness, convection,
//! velocity-pressure coupling, and the 1D trace operators on the outlet.
//!
//! All assembly loops run in a fixed element order with a fixed quadrature
//! rule, so identical inputs produce bit-identical matrices.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::fem::dofmap::{DofMap, FEField, Space};
use crate::fem::quadrature::{GAUSS3, TRI6};
use crate::fem::sparse::{CooBuilder, CsrMatrix};
use crate::mesh::{OutletSegment, TriMesh};

/// Per-triangle geometry: area and barycentric gradients.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub verts: [[f64; 2]; 3],
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(mesh: &TriMesh, t: usize) -> TriGeom {
        let [a, b, c] = mesh.triangles[t];
        let verts = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
        let area = 0.5
            * ((verts[1][0] - verts[0][0]) * (verts[2][1] - verts[0][1])
                - (verts[2][0] - verts[0][0]) * (verts[1][1] - verts[0][1]));
        let inv2a = 1.0 / (2.0 * area);
        let mut grad_lambda = [[0.0; 2]; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            grad_lambda[i] = [
                (verts[j][1] - verts[k][1]) * inv2a,
                (verts[k][0] - verts[j][0]) * inv2a,
            ];
        }
        TriGeom {
            verts,
            area,
            grad_lambda,
        }
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let mut l = [0.0; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            let twice = (self.verts[k][0] - self.verts[j][0]) * (p[1] - self.verts[j][1])
                - (self.verts[k][1] - self.verts[j][1]) * (p[0] - self.verts[j][0]);
            l[i] = twice / (2.0 * self.area);
        }
        l
    }
}

/// P2 shape values at barycentric point, local order [v0,v1,v2,e01,e12,e20].
pub fn p2_shapes(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_grads(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        for d in 0..2 {
            g[i][d] = (4.0 * l[i] - 1.0) * gl[i][d];
        }
    }
    let pairs = [(0, 1), (1, 2), (2, 0)];
    for (e, &(a, b)) in pairs.iter().enumerate() {
        for d in 0..2 {
            g[3 + e][d] = 4.0 * (l[a] * gl[b][d] + l[b] * gl[a][d]);
        }
    }
    g
}

fn shapes(space: Space, l: [f64; 3]) -> Vec<f64> {
    match space {
        Space::P1Scalar => l.to_vec(),
        _ => p2_shapes(l).to_vec(),
    }
}

fn grads(space: Space, l: [f64; 3], gl: &[[f64; 2]; 3]) -> Vec<[f64; 2]> {
    match space {
        Space::P1Scalar => gl.to_vec(),
        _ => p2_grads(l, gl).to_vec(),
    }
}

/// L2 Gram matrix of the space; SPD.
pub fn assemble_mass(mesh: &TriMesh, dofmap: &DofMap) -> CsrMatrix {
    let comps = dofmap.space.components();
    let mut builder = CooBuilder::new(dofmap.dof_count, dofmap.dof_count);
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let nodes = dofmap.triangle_nodes(mesh, t);
        let n = nodes.len();
        let mut local = vec![0.0; n * n];
        for &(l, w) in TRI6.iter() {
            let s = shapes(dofmap.space, l);
            let wq = w * geom.area;
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += wq * s[i] * s[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..comps {
                    builder.add(
                        dofmap.dof(nodes[i], c),
                        dofmap.dof(nodes[j], c),
                        local[i * n + j],
                    );
                }
            }
        }
    }
    builder.build(true)
}

/// Gradient Gram matrix; symmetric positive semidefinite.
pub fn assemble_stiffness(mesh: &TriMesh, dofmap: &DofMap) -> CsrMatrix {
    let comps = dofmap.space.components();
    let mut builder = CooBuilder::new(dofmap.dof_count, dofmap.dof_count);
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let nodes = dofmap.triangle_nodes(mesh, t);
        let n = nodes.len();
        let mut local = vec![0.0; n * n];
        for &(l, w) in TRI6.iter() {
            let g = grads(dofmap.space, l, &geom.grad_lambda);
            let wq = w * geom.area;
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += wq * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..comps {
                    builder.add(
                        dofmap.dof(nodes[i], c),
                        dofmap.dof(nodes[j], c),
                        local[i * n + j],
                    );
                }
            }
        }
    }
    builder.build(true)
}

/// Convection matrix C(w) with entries ((w . grad) phi_j, phi_i); linear in w.
pub fn assemble_convection(mesh: &TriMesh, dofmap_vel: &DofMap, w: &FEField) -> Result<CsrMatrix> {
    assert_eq!(dofmap_vel.space, Space::P2Vector2);
    dofmap_vel.check_field(&w.values)?;
    let mut builder = CooBuilder::new(dofmap_vel.dof_count, dofmap_vel.dof_count);
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let nodes = dofmap_vel.triangle_nodes(mesh, t);
        let n = nodes.len();
        let mut local = vec![0.0; n * n];
        for &(l, wt) in TRI6.iter() {
            let s = p2_shapes(l);
            let g = p2_grads(l, &geom.grad_lambda);
            // w at the quadrature point
            let mut wx = 0.0;
            let mut wy = 0.0;
            for (i, &node) in nodes.iter().enumerate() {
                wx += w.values[dofmap_vel.dof(node, 0)] * s[i];
                wy += w.values[dofmap_vel.dof(node, 1)] * s[i];
            }
            let wq = wt * geom.area;
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += wq * (wx * g[j][0] + wy * g[j][1]) * s[i];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..2 {
                    builder.add(
                        dofmap_vel.dof(nodes[i], c),
                        dofmap_vel.dof(nodes[j], c),
                        local[i * n + j],
                    );
                }
            }
        }
    }
    Ok(builder.build(false))
}

/// Divergence coupling B of size n_pres x n_vel: B[i,(j,c)] = (psi_i, d phi_j / d x_c).
pub fn assemble_div_coupling(
    mesh: &TriMesh,
    dofmap_vel: &DofMap,
    dofmap_pres: &DofMap,
) -> Result<CsrMatrix> {
    assert_eq!(dofmap_vel.space, Space::P2Vector2);
    if dofmap_vel.vertex_count != dofmap_pres.vertex_count {
        return Err(Error::DimensionMismatch(
            "velocity and pressure dof maps are on different meshes".into(),
        ));
    }
    let mut builder = CooBuilder::new(dofmap_pres.dof_count, dofmap_vel.dof_count);
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let vel_nodes = dofmap_vel.triangle_nodes(mesh, t);
        let pres_nodes = dofmap_pres.triangle_nodes(mesh, t);
        for &(l, w) in TRI6.iter() {
            let sp = shapes(dofmap_pres.space, l);
            let gv = p2_grads(l, &geom.grad_lambda);
            let wq = w * geom.area;
            for (i, &pi) in pres_nodes.iter().enumerate() {
                for (j, &vj) in vel_nodes.iter().enumerate() {
                    for c in 0..2 {
                        builder.add(pi, dofmap_vel.dof(vj, c), wq * sp[i] * gv[j][c]);
                    }
                }
            }
        }
    }
    Ok(builder.build(false))
}

/// Gradient coupling G of size n_vel x n_scalar: G[(j,c), i] = (phi_j, d psi_i / d x_c),
/// i.e. the weak pairing (grad q, v) for scalar q and velocity test v.
pub fn assemble_grad_coupling(
    mesh: &TriMesh,
    dofmap_vel: &DofMap,
    dofmap_scalar: &DofMap,
) -> Result<CsrMatrix> {
    assert_eq!(dofmap_vel.space, Space::P2Vector2);
    if dofmap_vel.vertex_count != dofmap_scalar.vertex_count {
        return Err(Error::DimensionMismatch(
            "velocity and scalar dof maps are on different meshes".into(),
        ));
    }
    let mut builder = CooBuilder::new(dofmap_vel.dof_count, dofmap_scalar.dof_count);
    for t in 0..mesh.triangles.len() {
        let geom = TriGeom::new(mesh, t);
        let vel_nodes = dofmap_vel.triangle_nodes(mesh, t);
        let sc_nodes = dofmap_scalar.triangle_nodes(mesh, t);
        for &(l, w) in TRI6.iter() {
            let sv = p2_shapes(l);
            let gs = grads(dofmap_scalar.space, l, &geom.grad_lambda);
            let wq = w * geom.area;
            for (j, &vj) in vel_nodes.iter().enumerate() {
                for (i, &si) in sc_nodes.iter().enumerate() {
                    for c in 0..2 {
                        builder.add(dofmap_vel.dof(vj, c), si, wq * sv[j] * gs[i][c]);
                    }
                }
            }
        }
    }
    Ok(builder.build(false))
}

/// One 1D element on the outlet trace: a boundary edge with its parent
/// triangle and its two 1D dofs ordered by increasing x2.
#[derive(Debug, Clone, Copy)]
pub struct OutletElement {
    pub dofs: (usize, usize),
    pub verts: (usize, usize),
    pub tri: usize,
    pub length: f64,
}

/// P1 space on the outlet trace, segment by segment, dofs ordered by
/// increasing x2 within each segment. Both ends of each segment are natural
/// (Neumann), matching the zero-slope end conditions of the trace problem.
#[derive(Debug, Clone)]
pub struct OutletSpace {
    pub segments: Vec<OutletSegment>,
    /// 1D dof index per mesh vertex on the outlet.
    pub dof_of_vertex: HashMap<usize, usize>,
    /// x2 coordinate per 1D dof.
    pub coords: Vec<f64>,
    /// (segment, first dof, dof count) per segment.
    pub segment_dofs: Vec<(usize, usize)>,
    pub elements: Vec<OutletElement>,
    pub dof_count: usize,
}

pub fn build_outlet_space(mesh: &TriMesh) -> Result<OutletSpace> {
    let segments = mesh.outlet_segments()?;
    let parent = boundary_edge_parents(mesh);
    let mut dof_of_vertex = HashMap::new();
    let mut coords = Vec::new();
    let mut segment_dofs = Vec::new();
    let mut elements = Vec::new();
    for seg in &segments {
        let first = coords.len();
        for &v in &seg.vertices {
            dof_of_vertex.insert(v, coords.len());
            coords.push(mesh.vertices[v][1]);
        }
        segment_dofs.push((first, seg.vertices.len()));
        for pair in seg.vertices.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let key = if a < b { (a, b) } else { (b, a) };
            let tri = *parent.get(&key).ok_or_else(|| {
                Error::InvalidGeometry(format!("outlet edge {key:?} has no parent triangle"))
            })?;
            elements.push(OutletElement {
                dofs: (dof_of_vertex[&a], dof_of_vertex[&b]),
                verts: (a, b),
                tri,
                length: mesh.vertices[b][1] - mesh.vertices[a][1],
            });
        }
    }
    let dof_count = coords.len();
    Ok(OutletSpace {
        segments,
        dof_of_vertex,
        coords,
        segment_dofs,
        elements,
        dof_count,
    })
}

/// Map from boundary edge (sorted vertex pair) to its unique parent triangle.
pub fn boundary_edge_parents(mesh: &TriMesh) -> HashMap<(usize, usize), usize> {
    let mut count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = if a < b { (a, b) } else { (b, a) };
            let e = count.entry(key).or_insert((0, t));
            e.0 += 1;
            e.1 = t;
        }
    }
    count
        .into_iter()
        .filter(|(_, (n, _))| *n == 1)
        .map(|(k, (_, t))| (k, t))
        .collect()
}

/// 1D mass and stiffness matrices along x2 on the outlet trace.
pub fn assemble_outlet_trace_ops(outlet: &OutletSpace) -> (CsrMatrix, CsrMatrix) {
    let n = outlet.dof_count;
    let mut mb = CooBuilder::new(n, n);
    let mut sb = CooBuilder::new(n, n);
    for el in &outlet.elements {
        let h = el.length;
        let (a, b) = el.dofs;
        mb.add(a, a, h / 3.0);
        mb.add(a, b, h / 6.0);
        mb.add(b, a, h / 6.0);
        mb.add(b, b, h / 3.0);
        sb.add(a, a, 1.0 / h);
        sb.add(a, b, -1.0 / h);
        sb.add(b, a, -1.0 / h);
        sb.add(b, b, 1.0 / h);
    }
    (mb.build(true), sb.build(true))
}

/// Trace-divergence operator T of size n_1d x n_vel with entries
/// (q_i, div phi_j)_{Gamma_N}; the Step-2 load is -nu * T * u_tilde.
pub fn assemble_outlet_div_matrix(
    mesh: &TriMesh,
    outlet: &OutletSpace,
    dofmap_vel: &DofMap,
) -> CsrMatrix {
    let mut builder = CooBuilder::new(outlet.dof_count, dofmap_vel.dof_count);
    for el in &outlet.elements {
        let geom = TriGeom::new(mesh, el.tri);
        let nodes = dofmap_vel.triangle_nodes(mesh, el.tri);
        let pa = mesh.vertices[el.verts.0];
        let pb = mesh.vertices[el.verts.1];
        for &(s, w) in GAUSS3.iter() {
            let p = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let l = geom.barycentric(p);
            let g = p2_grads(l, &geom.grad_lambda);
            let hat = [1.0 - s, s];
            let wq = w * el.length;
            for (j, &node) in nodes.iter().enumerate() {
                for c in 0..2 {
                    let div_part = g[j][c];
                    let col = dofmap_vel.dof(node, c);
                    builder.add(el.dofs.0, col, wq * hat[0] * div_part);
                    builder.add(el.dofs.1, col, wq * hat[1] * div_part);
                }
            }
        }
    }
    builder.build(false)
}

/// Load vector of the outlet pressure BC problem: -nu (div u, q)_{Gamma_N}.
pub fn assemble_outlet_div_rhs(
    mesh: &TriMesh,
    outlet: &OutletSpace,
    dofmap_vel: &DofMap,
    u: &FEField,
    nu: f64,
) -> Result<Vec<f64>> {
    dofmap_vel.check_field(&u.values)?;
    let t = assemble_outlet_div_matrix(mesh, outlet, dofmap_vel);
    let mut rhs = t.mul_vec(&u.values);
    for v in &mut rhs {
        *v *= -nu;
    }
    Ok(rhs)
}

/// Streamwise-constant extension of an outlet trace into the P1 space:
/// a vertex whose x2 falls inside a segment's span gets the trace value at
/// that x2, all other vertices get zero.
pub fn extend_outlet_trace(
    mesh: &TriMesh,
    dofmap_p1: &DofMap,
    outlet: &OutletSpace,
    phi_hat: &[f64],
) -> FEField {
    assert_eq!(dofmap_p1.space, Space::P1Scalar);
    assert_eq!(phi_hat.len(), outlet.dof_count);
    let tol = 1e-12;
    let mut values = vec![0.0; dofmap_p1.dof_count];
    for (v, p) in mesh.vertices.iter().enumerate() {
        let y = p[1];
        for (seg_idx, seg) in outlet.segments.iter().enumerate() {
            let (lo, hi) = seg.span(mesh);
            if y < lo - tol || y > hi + tol {
                continue;
            }
            let (first, count) = outlet.segment_dofs[seg_idx];
            // Linear interpolation along the segment's 1D nodes.
            let coords = &outlet.coords[first..first + count];
            let vals = &phi_hat[first..first + count];
            values[v] = interp_linear(coords, vals, y);
            break;
        }
    }
    FEField { values }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x).min(xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let (y0, y1) = (ys[k - 1], ys[k]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Dirichlet constraints by symmetric elimination: constrained columns are
/// moved to the right-hand side, constrained rows replaced by identity rows
/// carrying the prescribed value. Symmetry of the input is preserved.
pub fn apply_dirichlet(
    a: &CsrMatrix,
    b: &[f64],
    constrained: &[(usize, f64)],
) -> (CsrMatrix, Vec<f64>) {
    let n = a.nrows;
    let mut is_constrained = vec![false; n];
    let mut value = vec![0.0; n];
    for &(d, v) in constrained {
        is_constrained[d] = true;
        value[d] = v;
    }
    let mut rhs = b.to_vec();
    let mut builder = CooBuilder::new(n, n);
    for i in 0..n {
        if is_constrained[i] {
            builder.add(i, i, 1.0);
            rhs[i] = value[i];
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if is_constrained[j] {
                rhs[i] -= v * value[j];
            } else {
                builder.add(i, j, v);
            }
        }
    }
    (builder.build(a.symmetric), rhs)
}

/// Divergence of a P2 vector field at a barycentric point of a triangle.
pub fn divergence_at(
    dofmap_vel: &DofMap,
    nodes: &[usize],
    values: &[f64],
    grads: &[[f64; 2]; 6],
) -> f64 {
    let mut div = 0.0;
    for (j, &node) in nodes.iter().enumerate() {
        div += values[dofmap_vel.dof(node, 0)] * grads[j][0];
        div += values[dofmap_vel.dof(node, 1)] * grads[j][1];
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryLabel, DomainId};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn unit_right_triangle() -> TriMesh {
        TriMesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![
                (0, 1, BoundaryLabel::WallDirichlet),
                (1, 2, BoundaryLabel::WallDirichlet),
                (2, 0, BoundaryLabel::WallDirichlet),
            ],
            domain_id: DomainId::External,
        }
    }

    #[test]
    fn p1_mass_on_unit_right_triangle() {
        let mesh = unit_right_triangle();
        let map = DofMap::new(&mesh, Space::P1Scalar);
        let m = assemble_mass(&mesh, &map);
        let expected = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m.get(i, j), expected[i][j] / 24.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn p1_stiffness_on_unit_right_triangle() {
        let mesh = unit_right_triangle();
        let map = DofMap::new(&mesh, Space::P1Scalar);
        let k = assemble_stiffness(&mesh, &map);
        let expected = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k.get(i, j), expected[i][j] / 2.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn mass_partition_of_unity() {
        let mesh = crate::mesh::generate_channel(2.0, 1.0, 3, 2).unwrap();
        for space in [Space::P1Scalar, Space::P2Scalar] {
            let map = DofMap::new(&mesh, space);
            let m = assemble_mass(&mesh, &map);
            let c = 3.5;
            let ones = vec![c; map.dof_count];
            let mc = m.mul_vec(&ones);
            let quad: f64 = ones.iter().zip(&mc).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(quad, c * c * 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn mass_is_spd_on_channel() {
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let map = DofMap::new(&mesh, Space::P2Scalar);
        let m = assemble_mass(&mesh, &map);
        assert!(m.max_asymmetry() <= 1e-12 * m.max_abs());
        // Dense eigensolver oracle.
        let eig = m.to_dense().symmetric_eigen();
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(min > 0.0, "mass matrix must be positive definite, min eig {min}");
    }

    #[test]
    fn stiffness_kernel_and_dirichlet_energy() {
        let mesh = crate::mesh::generate_channel(2.0, 1.0, 4, 3).unwrap();
        let map = DofMap::new(&mesh, Space::P2Scalar);
        let k = assemble_stiffness(&mesh, &map);
        let ones = vec![1.0; map.dof_count];
        for v in k.mul_vec(&ones) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        // linear field x1: integral of |grad x1|^2 = |Omega| = 2
        let x = FEField::interpolate_scalar(&mesh, &map, |p| p[0]);
        let kx = k.mul_vec(&x.values);
        let energy: f64 = x.values.iter().zip(&kx).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(energy, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn convection_zero_and_linearity() {
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let map = DofMap::new(&mesh, Space::P2Vector2);
        let zero = FEField::zeros(&map);
        let c0 = assemble_convection(&mesh, &map, &zero).unwrap();
        assert!(c0.values.iter().all(|&v| v == 0.0));

        let w = FEField::interpolate_vector(&mesh, &map, |p| [p[1], -p[0]]);
        let c1 = assemble_convection(&mesh, &map, &w).unwrap();
        let mut w2 = w.clone();
        for v in &mut w2.values {
            *v *= 2.5;
        }
        let c2 = assemble_convection(&mesh, &map, &w2).unwrap();
        for (a, b) in c1.values.iter().zip(&c2.values) {
            assert_abs_diff_eq!(2.5 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn convection_skew_part_matches_boundary_quadrature() {
        // For constant w, C + C^T equals the boundary matrix
        // int_{dOmega} (w . n) N_i N_j, by the product rule.
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let map = DofMap::new(&mesh, Space::P2Vector2);
        let w = FEField::interpolate_vector(&mesh, &map, |_| [1.0, 0.0]);
        let c = assemble_convection(&mesh, &map, &w).unwrap();
        let nsc = map.scalar_node_count();
        let mut boundary = DMatrix::zeros(nsc, nsc);
        let parents = boundary_edge_parents(&mesh);
        for &(a, b, _) in &mesh.boundary_edges {
            let key = if a < b { (a, b) } else { (b, a) };
            let t = parents[&key];
            let geom = TriGeom::new(&mesh, t);
            let nodes = map.triangle_nodes(&mesh, t);
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            let len = mesh.edge_length(a, b);
            // outward normal: rotate edge direction; orient by triangle centroid
            let txy = [(pb[0] - pa[0]) / len, (pb[1] - pa[1]) / len];
            let mut nrm = [txy[1], -txy[0]];
            let centroid = [
                (geom.verts[0][0] + geom.verts[1][0] + geom.verts[2][0]) / 3.0,
                (geom.verts[0][1] + geom.verts[1][1] + geom.verts[2][1]) / 3.0,
            ];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            if (centroid[0] - mid[0]) * nrm[0] + (centroid[1] - mid[1]) * nrm[1] > 0.0 {
                nrm = [-nrm[0], -nrm[1]];
            }
            let wn = 1.0 * nrm[0]; // w = (1,0)
            for &(s, wq) in GAUSS3.iter() {
                let p = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let l = geom.barycentric(p);
                let sh = p2_shapes(l);
                for (i, &ni) in nodes.iter().enumerate() {
                    for (j, &nj) in nodes.iter().enumerate() {
                        boundary[(ni, nj)] += wq * len * wn * sh[i] * sh[j];
                    }
                }
            }
        }
        // Compare the x-component block.
        for i in 0..nsc {
            for j in 0..nsc {
                let skew = c.get(2 * i, 2 * j) + c.get(2 * j, 2 * i);
                assert_abs_diff_eq!(skew, boundary[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn div_coupling_identities() {
        let mesh = crate::mesh::generate_channel(2.0, 1.0, 4, 2).unwrap();
        let vel = DofMap::new(&mesh, Space::P2Vector2);
        let pres = DofMap::new(&mesh, Space::P1Scalar);
        let b = assemble_div_coupling(&mesh, &vel, &pres).unwrap();

        let constant = FEField::interpolate_vector(&mesh, &vel, |_| [2.0, -1.0]);
        for v in b.mul_vec(&constant.values) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let shear = FEField::interpolate_vector(&mesh, &vel, |p| [p[1], 0.0]);
        for v in b.mul_vec(&shear.values) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let stretch = FEField::interpolate_vector(&mesh, &vel, |p| [p[0], 0.0]);
        let total: f64 = b.mul_vec(&stretch.values).iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-10); // area of the channel
    }

    #[test]
    fn outlet_trace_ops_basics() {
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let outlet = build_outlet_space(&mesh).unwrap();
        let (m, s) = assemble_outlet_trace_ops(&outlet);
        let total: f64 = m.values.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12); // outlet length 2L = 1
        let ones = vec![1.0; outlet.dof_count];
        for v in s.mul_vec(&ones) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        // interior stiffness row on a uniform grid of spacing h
        let h = 0.5;
        let mid = 1; // middle dof of three
        assert_abs_diff_eq!(s.get(mid, 0), -1.0 / h, epsilon = 1e-14);
        assert_abs_diff_eq!(s.get(mid, mid), 2.0 / h, epsilon = 1e-14);
        assert_abs_diff_eq!(s.get(mid, 2), -1.0 / h, epsilon = 1e-14);
    }

    #[test]
    fn outlet_div_rhs_identities() {
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let vel = DofMap::new(&mesh, Space::P2Vector2);
        let outlet = build_outlet_space(&mesh).unwrap();
        let nu = 0.3;

        let constant = FEField::interpolate_vector(&mesh, &vel, |_| [1.0, 2.0]);
        for v in assemble_outlet_div_rhs(&mesh, &outlet, &vel, &constant, nu).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        // div (x1, 0) = 1, so rhs = -nu * M_hat row sums
        let stretch = FEField::interpolate_vector(&mesh, &vel, |p| [p[0], 0.0]);
        let rhs = assemble_outlet_div_rhs(&mesh, &outlet, &vel, &stretch, nu).unwrap();
        let (m, _) = assemble_outlet_trace_ops(&outlet);
        let ones = vec![1.0; outlet.dof_count];
        let row_sums = m.mul_vec(&ones);
        for (r, ms) in rhs.iter().zip(&row_sums) {
            assert_abs_diff_eq!(*r, -nu * ms, epsilon = 1e-10);
        }
        // nu = 0 kills the load
        for v in assemble_outlet_div_rhs(&mesh, &outlet, &vel, &stretch, 0.0).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn dirichlet_elimination_preserves_symmetry() {
        let mesh = crate::mesh::generate_channel(1.0, 1.0, 2, 2).unwrap();
        let map = DofMap::new(&mesh, Space::P2Scalar);
        let k = assemble_stiffness(&mesh, &map);
        let b = vec![1.0; map.dof_count];
        let constraints = vec![(0usize, 2.0), (5usize, -1.0)];
        let (kc, bc) = apply_dirichlet(&k, &b, &constraints);
        assert!(kc.max_asymmetry() <= 1e-12 * kc.max_abs().max(1.0));
        assert_eq!(bc[0], 2.0);
        assert_eq!(bc[5], -1.0);
        assert_eq!(kc.get(0, 0), 1.0);
    }

    #[test]
    fn assembly_is_bit_reproducible() {
        let mesh = crate::mesh::generate_bifurcated_tube(16).unwrap();
        let map = DofMap::new(&mesh, Space::P2Vector2);
        let w = FEField::interpolate_vector(&mesh, &map, |p| [p[1], p[0] * p[1]]);
        let a1 = assemble_convection(&mesh, &map, &w).unwrap();
        let a2 = assemble_convection(&mesh, &map, &w).unwrap();
        assert_eq!(a1, a2);
    }
}
