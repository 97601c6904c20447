//! Quantities of interest (kinetic energy, outflux, charge drop, drag/lift)
//! and the error metrics used to compare reduced and full solutions.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::assembly::{
    assemble_convection, assemble_div_coupling, assemble_mass, assemble_stiffness,
    boundary_edge_parents, p2_shapes, TriGeom,
};
use crate::fem::dofmap::{DofMap, FEField, Space};
use crate::fem::quadrature::GAUSS3;
use crate::fem::solver::{solve_sparse, SolveOpts};
use crate::fem::sparse::CsrMatrix;
use crate::fem::assembly::apply_dirichlet;
use crate::mesh::{BoundaryLabel, OutletSegment, TriMesh};

/// E_kin = 1/2 u^T M u.
pub fn kinetic_energy(mass: &CsrMatrix, u: &[f64]) -> f64 {
    let mu = mass.mul_vec(u);
    0.5 * u.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>()
}

/// Unit outward normal of a boundary edge, oriented away from the parent
/// triangle's centroid.
fn outward_normal(mesh: &TriMesh, tri: usize, a: usize, b: usize) -> [f64; 2] {
    let geom = TriGeom::new(mesh, tri);
    let pa = mesh.vertices[a];
    let pb = mesh.vertices[b];
    let len = mesh.edge_length(a, b);
    let mut n = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
    let centroid = [
        (geom.verts[0][0] + geom.verts[1][0] + geom.verts[2][0]) / 3.0,
        (geom.verts[0][1] + geom.verts[1][1] + geom.verts[2][1]) / 3.0,
    ];
    let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
    if (centroid[0] - mid[0]) * n[0] + (centroid[1] - mid[1]) * n[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    n
}

/// Integrates f(u . n, p) over the given boundary edges by 3-point Gauss.
/// `u` is a P2 vector field, `p` an optional P1 field evaluated alongside.
fn boundary_integral(
    mesh: &TriMesh,
    vel_map: &DofMap,
    u: &[f64],
    p: Option<&[f64]>,
    edges: &[(usize, usize)],
    f: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    vel_map.check_field(u)?;
    let parents = boundary_edge_parents(mesh);
    let mut total = 0.0;
    for &(a, b) in edges {
        let key = if a < b { (a, b) } else { (b, a) };
        let tri = *parents.get(&key).ok_or_else(|| {
            Error::InvalidGeometry(format!("edge ({a},{b}) is not a boundary edge"))
        })?;
        let geom = TriGeom::new(mesh, tri);
        let nodes = vel_map.triangle_nodes(mesh, tri);
        let n = outward_normal(mesh, tri, a, b);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let len = mesh.edge_length(a, b);
        for &(s, w) in GAUSS3.iter() {
            let pt = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let l = geom.barycentric(pt);
            let sh = p2_shapes(l);
            let mut un = 0.0;
            for (k, &node) in nodes.iter().enumerate() {
                un += (u[vel_map.dof(node, 0)] * n[0] + u[vel_map.dof(node, 1)] * n[1]) * sh[k];
            }
            let pv = match p {
                Some(pf) => {
                    // P1 pressure on the edge endpoints
                    (1.0 - s) * pf[a] + s * pf[b]
                }
                None => 0.0,
            };
            total += w * len * f(un, pv);
        }
    }
    Ok(total)
}

/// Boundary edges carrying a given label.
pub fn labeled_edges(mesh: &TriMesh, label: BoundaryLabel) -> Vec<(usize, usize)> {
    mesh.boundary_edges
        .iter()
        .filter(|(_, _, l)| *l == label)
        .map(|&(a, b, _)| (a, b))
        .collect()
}

/// Q = int u . n over one outlet segment.
pub fn outflux(
    mesh: &TriMesh,
    vel_map: &DofMap,
    u: &[f64],
    segment: &OutletSegment,
) -> Result<f64> {
    let edges: Vec<(usize, usize)> = segment
        .vertices
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect();
    if edges.is_empty() {
        return Err(Error::InvalidGeometry("outlet segment has no edges".into()));
    }
    boundary_integral(mesh, vel_map, u, None, &edges, |un, _| un)
}

/// Total normal flux through all edges with the given label (sign: outward).
pub fn boundary_flux(
    mesh: &TriMesh,
    vel_map: &DofMap,
    u: &[f64],
    label: BoundaryLabel,
) -> Result<f64> {
    let edges = labeled_edges(mesh, label);
    if edges.is_empty() {
        return Err(Error::InvalidGeometry(format!(
            "no boundary edges labeled {}",
            label.as_str()
        )));
    }
    boundary_integral(mesh, vel_map, u, None, &edges, |un, _| un)
}

/// CD = 1/2 (int_L (u.n)^2 - int_R (u.n)^2) + (int_L p - int_R p)
/// with L the inlet and R one outlet segment.
pub fn charge_drop(
    mesh: &TriMesh,
    vel_map: &DofMap,
    u: &[f64],
    p: &[f64],
    outlet: &OutletSegment,
) -> Result<f64> {
    let inlet = labeled_edges(mesh, BoundaryLabel::InletDirichlet);
    if inlet.is_empty() {
        return Err(Error::InvalidGeometry("mesh has no inlet".into()));
    }
    let out_edges: Vec<(usize, usize)> = outlet
        .vertices
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect();
    let left_sq = boundary_integral(mesh, vel_map, u, None, &inlet, |un, _| un * un)?;
    let right_sq = boundary_integral(mesh, vel_map, u, None, &out_edges, |un, _| un * un)?;
    let left_p = boundary_integral(mesh, vel_map, u, Some(p), &inlet, |_, pv| pv)?;
    let right_p = boundary_integral(mesh, vel_map, u, Some(p), &out_edges, |_, pv| pv)?;
    Ok(0.5 * (left_sq - right_sq) + (left_p - right_p))
}

/// Linear functional l with l[dof] = int phi_dof . n over the given edges,
/// so that l . u is the normal flux.
pub fn boundary_flux_vector(
    mesh: &TriMesh,
    vel_map: &DofMap,
    edges: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let parents = boundary_edge_parents(mesh);
    let mut out = vec![0.0; vel_map.dof_count];
    for &(a, b) in edges {
        let key = if a < b { (a, b) } else { (b, a) };
        let tri = *parents.get(&key).ok_or_else(|| {
            Error::InvalidGeometry(format!("edge ({a},{b}) is not a boundary edge"))
        })?;
        let geom = TriGeom::new(mesh, tri);
        let nodes = vel_map.triangle_nodes(mesh, tri);
        let n = outward_normal(mesh, tri, a, b);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let len = mesh.edge_length(a, b);
        for &(s, w) in GAUSS3.iter() {
            let pt = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let sh = p2_shapes(geom.barycentric(pt));
            for (k, &node) in nodes.iter().enumerate() {
                out[vel_map.dof(node, 0)] += w * len * sh[k] * n[0];
                out[vel_map.dof(node, 1)] += w * len * sh[k] * n[1];
            }
        }
    }
    Ok(out)
}

/// Quadratic form W with u^T W u = int (u . n)^2 over the given edges.
pub fn boundary_normal_quadratic(
    mesh: &TriMesh,
    vel_map: &DofMap,
    edges: &[(usize, usize)],
) -> Result<CsrMatrix> {
    let parents = boundary_edge_parents(mesh);
    let mut builder = crate::fem::sparse::CooBuilder::new(vel_map.dof_count, vel_map.dof_count);
    for &(a, b) in edges {
        let key = if a < b { (a, b) } else { (b, a) };
        let tri = *parents.get(&key).ok_or_else(|| {
            Error::InvalidGeometry(format!("edge ({a},{b}) is not a boundary edge"))
        })?;
        let geom = TriGeom::new(mesh, tri);
        let nodes = vel_map.triangle_nodes(mesh, tri);
        let n = outward_normal(mesh, tri, a, b);
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let len = mesh.edge_length(a, b);
        for &(s, w) in GAUSS3.iter() {
            let pt = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let sh = p2_shapes(geom.barycentric(pt));
            for (i, &ni) in nodes.iter().enumerate() {
                for (j, &nj) in nodes.iter().enumerate() {
                    for ci in 0..2 {
                        for cj in 0..2 {
                            builder.add(
                                vel_map.dof(ni, ci),
                                vel_map.dof(nj, cj),
                                w * len * sh[i] * sh[j] * n[ci] * n[cj],
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(builder.build(true))
}

/// Linear functional q over P1 with q . p = int p over the given edges.
pub fn boundary_scalar_vector(
    mesh: &TriMesh,
    pres_map: &DofMap,
    edges: &[(usize, usize)],
) -> Result<Vec<f64>> {
    assert_eq!(pres_map.space, Space::P1Scalar);
    let mut out = vec![0.0; pres_map.dof_count];
    for &(a, b) in edges {
        let len = mesh.edge_length(a, b);
        out[a] += 0.5 * len;
        out[b] += 0.5 * len;
    }
    Ok(out)
}

/// Boundary edges of an interior obstacle: wall edges whose midpoint lies
/// strictly inside the mesh bounding box.
pub fn obstacle_edges(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &mesh.vertices {
        xmin = xmin.min(v[0]);
        xmax = xmax.max(v[0]);
        ymin = ymin.min(v[1]);
        ymax = ymax.max(v[1]);
    }
    let tol = 1e-9 * (xmax - xmin).max(ymax - ymin);
    mesh.boundary_edges
        .iter()
        .filter(|&&(a, b, l)| {
            if l != BoundaryLabel::WallDirichlet {
                return false;
            }
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            mid[0] > xmin + tol && mid[0] < xmax - tol && mid[1] > ymin + tol && mid[1] < ymax - tol
        })
        .map(|&(a, b, _)| (a, b))
        .collect()
}

/// Discrete-harmonic test fields for the volume drag/lift formulation:
/// the drag field equals (1,0) on the obstacle boundary, the lift field
/// (0,1); both vanish on all other boundaries and satisfy the discrete
/// Laplace equation in the interior.
pub fn harmonic_test_fields(mesh: &TriMesh, vel_map: &DofMap) -> Result<(FEField, FEField)> {
    assert_eq!(vel_map.space, Space::P2Vector2);
    let obstacle = obstacle_edges(mesh);
    if obstacle.is_empty() {
        return Err(Error::InvalidGeometry(
            "drag/lift needs an interior obstacle boundary".into(),
        ));
    }
    let mut obstacle_nodes: HashSet<usize> = HashSet::new();
    for &(a, b) in &obstacle {
        obstacle_nodes.insert(a);
        obstacle_nodes.insert(b);
        if let Some(m) = vel_map.edge_node(a, b) {
            obstacle_nodes.insert(m);
        }
    }
    let mut boundary_nodes: HashSet<usize> = HashSet::new();
    for &(a, b, _) in &mesh.boundary_edges {
        boundary_nodes.insert(a);
        boundary_nodes.insert(b);
        if let Some(m) = vel_map.edge_node(a, b) {
            boundary_nodes.insert(m);
        }
    }

    let k = assemble_stiffness(mesh, vel_map);
    let zero_rhs = vec![0.0; vel_map.dof_count];
    let mut fields = Vec::with_capacity(2);
    for comp in 0..2 {
        let mut constraints: Vec<(usize, f64)> = Vec::new();
        for &node in &boundary_nodes {
            let on_obstacle = obstacle_nodes.contains(&node);
            for c in 0..2 {
                let v = if on_obstacle && c == comp { 1.0 } else { 0.0 };
                constraints.push((vel_map.dof(node, c), v));
            }
        }
        constraints.sort_by_key(|&(d, _)| d);
        let (kc, rhs) = apply_dirichlet(&k, &zero_rhs, &constraints);
        let v = solve_sparse(&kc, &rhs, &SolveOpts::cg())?;
        fields.push(FEField::from_values(v));
    }
    let lift = fields.pop().unwrap();
    let drag = fields.pop().unwrap();
    Ok((drag, lift))
}

/// Reference scales of the drag/lift normalization 2 / (D Ubar^2).
#[derive(Debug, Clone, Copy)]
pub struct DragLiftConfig {
    pub nu: f64,
    pub dt: f64,
    pub diameter: f64,
    pub mean_velocity: f64,
}

/// Drag and lift coefficients by the volume-integral formulation
/// -(2/(D Ubar^2)) [ (du/dt, v) + (u . grad u, v) + nu (grad u, grad v)
/// - (p, div v) ], with du/dt a backward difference.
pub fn drag_lift(
    mesh: &TriMesh,
    vel_map: &DofMap,
    pres_map: &DofMap,
    u: &[f64],
    u_prev: &[f64],
    p: &[f64],
    cfg: &DragLiftConfig,
    test_drag: &FEField,
    test_lift: &FEField,
) -> Result<(f64, f64)> {
    vel_map.check_field(u)?;
    vel_map.check_field(u_prev)?;
    pres_map.check_field(p)?;
    let mass = assemble_mass(mesh, vel_map);
    let stiff = assemble_stiffness(mesh, vel_map);
    let conv = assemble_convection(mesh, vel_map, &FEField::from_values(u.to_vec()))?;
    let div = assemble_div_coupling(mesh, vel_map, pres_map)?;

    let dudt: Vec<f64> = u
        .iter()
        .zip(u_prev)
        .map(|(a, b)| (a - b) / cfg.dt)
        .collect();
    let scale = -2.0 / (cfg.diameter * cfg.mean_velocity * cfg.mean_velocity);
    let functional = |v: &FEField| -> f64 {
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let time_term = dot(&mass.mul_vec(&dudt), &v.values);
        let conv_term = dot(&conv.mul_vec(u), &v.values);
        let visc_term = cfg.nu * dot(&stiff.mul_vec(u), &v.values);
        let pres_term = dot(p, &div.mul_vec(&v.values));
        scale * (time_term + conv_term + visc_term - pres_term)
    };
    Ok((functional(test_drag), functional(test_lift)))
}

/// sqrt(sum_n |a_n - b_n|^2_G) / sqrt(sum_n |a_n|^2_G) over aligned series.
pub fn l2l2_relative_error(
    series_a: &[Vec<f64>],
    series_b: &[Vec<f64>],
    gram: &CsrMatrix,
) -> Result<f64> {
    if series_a.len() != series_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths differ: {} vs {}",
            series_a.len(),
            series_b.len()
        )));
    }
    let sq = |v: &[f64]| {
        let gv = gram.mul_vec(v);
        v.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in series_a.iter().zip(series_b) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(
                "field sizes differ within the series".into(),
            ));
        }
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        num += sq(&diff);
        den += sq(a);
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Trapezoidal quadrature over possibly non-uniform time stamps.
pub fn trapezoid(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "trapezoid: {} times vs {} values",
            times.len(),
            values.len()
        )));
    }
    let mut acc = 0.0;
    for k in 1..times.len() {
        acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
    }
    Ok(acc)
}

/// ||mu - mu*||_{L2(time)} / ||mu||_{L2(time)} with trapezoidal quadrature.
pub fn qoi_relative_error_l2time(times: &[f64], mu: &[f64], mu_star: &[f64]) -> Result<f64> {
    if mu.len() != mu_star.len() || mu.len() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "qoi error: {} times, {} reference, {} candidate",
            times.len(),
            mu.len(),
            mu_star.len()
        )));
    }
    let diff_sq: Vec<f64> = mu
        .iter()
        .zip(mu_star)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let ref_sq: Vec<f64> = mu.iter().map(|a| a * a).collect();
    let num = trapezoid(times, &diff_sq)?;
    let den = trapezoid(times, &ref_sq)?;
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Time series of the scalar outputs, one entry per step.
#[derive(Debug, Clone, Default)]
pub struct QoISeries {
    pub times: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    /// One column per outlet segment.
    pub outflux: Vec<Vec<f64>>,
    /// One column per outlet segment.
    pub charge_drop: Vec<Vec<f64>>,
    pub drag: Vec<f64>,
    pub lift: Vec<f64>,
}

impl QoISeries {
    pub fn new(n_outlets: usize) -> QoISeries {
        QoISeries {
            outflux: vec![Vec::new(); n_outlets],
            charge_drop: vec![Vec::new(); n_outlets],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,E_kin")?;
        for k in 0..self.outflux.len() {
            write!(w, ",Q_outflux_{k}")?;
        }
        for k in 0..self.charge_drop.len() {
            write!(w, ",CD_charge_{k}")?;
        }
        if !self.drag.is_empty() {
            write!(w, ",C_D,C_L")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:e},{:e}", self.times[i], self.kinetic_energy[i])?;
            for col in &self.outflux {
                write!(w, ",{:e}", col[i])?;
            }
            for col in &self.charge_drop {
                write!(w, ",{:e}", col[i])?;
            }
            if !self.drag.is_empty() {
                write!(w, ",{:e},{:e}", self.drag[i], self.lift[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Column by header name, for comparisons between runs.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == "E_kin" {
            return Some(&self.kinetic_energy);
        }
        if name == "C_D" && !self.drag.is_empty() {
            return Some(&self.drag);
        }
        if name == "C_L" && !self.lift.is_empty() {
            return Some(&self.lift);
        }
        if let Some(k) = name.strip_prefix("Q_outflux_") {
            return k.parse::<usize>().ok().and_then(|k| self.outflux.get(k)).map(|v| &v[..]);
        }
        if let Some(k) = name.strip_prefix("CD_charge_") {
            return k
                .parse::<usize>()
                .ok()
                .and_then(|k| self.charge_drop.get(k))
                .map(|v| &v[..]);
        }
        None
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["E_kin".to_string()];
        for k in 0..self.outflux.len() {
            names.push(format!("Q_outflux_{k}"));
        }
        for k in 0..self.charge_drop.len() {
            names.push(format!("CD_charge_{k}"));
        }
        if !self.drag.is_empty() {
            names.push("C_D".into());
            names.push("C_L".into());
        }
        names
    }
}

/// Inner-product norm helper used by several metrics.
pub fn gram_norm(gram: &CsrMatrix, v: &[f64]) -> f64 {
    let gv = gram.mul_vec(v);
    v.iter()
        .zip(&gv)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Projection coefficients convenience: dense dot against a Gram-multiplied field.
pub fn gram_dot(gram: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let gb = gram.mul_vec(b);
    DVector::from_column_slice(a).dot(&DVector::from_vec(gb))
}
