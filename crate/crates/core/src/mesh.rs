//! 2D triangular meshes of channel-like domains with labeled boundary parts.
//!
//! Meshes are immutable after construction and safe to share across threads.
//! Boundary labels split the boundary into the inflow Dirichlet part, the
//! no-slip walls and the open outflow part; outflow edges always lie on
//! vertical straight segments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryLabel {
    InletDirichlet,
    WallDirichlet,
    Outlet,
}

impl BoundaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryLabel::InletDirichlet => "inlet",
            BoundaryLabel::WallDirichlet => "wall",
            BoundaryLabel::Outlet => "outlet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inlet" => Ok(BoundaryLabel::InletDirichlet),
            "wall" => Ok(BoundaryLabel::WallDirichlet),
            "outlet" => Ok(BoundaryLabel::Outlet),
            other => Err(Error::ParseError(format!("unknown boundary label `{other}`"))),
        }
    }

    /// Inlet and walls together form the Dirichlet part of the boundary.
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryLabel::Outlet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainId {
    Channel,
    BifurcatedTube,
    CylinderChannel,
    External,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<(usize, usize, BoundaryLabel)>,
    pub domain_id: DomainId,
}

/// One maximal connected run of outlet edges, always on a vertical line.
#[derive(Debug, Clone)]
pub struct OutletSegment {
    pub x1: f64,
    /// Vertex indices ordered by increasing x2; consecutive pairs are edges.
    pub vertices: Vec<usize>,
}

impl TriMesh {
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&(a, b, _)| self.edge_length(a, b))
            .sum()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
    }

    /// Checks orientation, boundary edge cover and outlet verticality.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(Error::InvalidGeometry(format!(
                        "triangle {t} references vertex {v} out of {nv}"
                    )));
                }
            }
            if self.signed_area(t) <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "triangle {t} has non-positive signed area {}",
                    self.signed_area(t)
                )));
            }
        }

        // Each interior edge must be shared by two triangles, each boundary
        // edge by exactly one, and the declared boundary must match.
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = sorted_pair(tri[k], tri[(k + 1) % 3]);
                *edge_count.entry((a, b)).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &edge_count {
            if n > 2 {
                return Err(Error::InvalidGeometry(format!(
                    "edge ({a},{b}) shared by {n} triangles"
                )));
            }
        }
        let mut declared: HashMap<(usize, usize), usize> = HashMap::new();
        for &(a, b, _) in &self.boundary_edges {
            if a >= nv || b >= nv {
                return Err(Error::InvalidGeometry(format!(
                    "boundary edge ({a},{b}) out of range"
                )));
            }
            *declared.entry(sorted_pair(a, b)).or_insert(0) += 1;
        }
        for (&e, &n) in &declared {
            if n != 1 {
                return Err(Error::InvalidGeometry(format!(
                    "boundary edge {e:?} declared {n} times"
                )));
            }
            match edge_count.get(&e) {
                Some(1) => {}
                Some(k) => {
                    return Err(Error::InvalidGeometry(format!(
                        "declared boundary edge {e:?} belongs to {k} triangles"
                    )))
                }
                None => {
                    return Err(Error::InvalidGeometry(format!(
                        "declared boundary edge {e:?} is not a mesh edge"
                    )))
                }
            }
        }
        for (&e, &n) in &edge_count {
            if n == 1 && !declared.contains_key(&e) {
                return Err(Error::InvalidGeometry(format!(
                    "mesh edge {e:?} lies on the boundary but carries no label"
                )));
            }
        }

        for &(a, b, label) in &self.boundary_edges {
            if label == BoundaryLabel::Outlet {
                let dx = (self.vertices[a][0] - self.vertices[b][0]).abs();
                if dx > GEOM_TOL {
                    return Err(Error::InvalidGeometry(format!(
                        "outlet edge ({a},{b}) is not vertical (dx = {dx})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Groups outlet edges into maximal connected vertical segments,
    /// each with vertices ordered by increasing x2.
    pub fn outlet_segments(&self) -> Result<Vec<OutletSegment>> {
        let outlet: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .filter(|(_, _, l)| *l == BoundaryLabel::Outlet)
            .map(|&(a, b, _)| (a, b))
            .collect();
        if outlet.is_empty() {
            return Err(Error::InvalidGeometry("mesh has no outlet edges".into()));
        }
        // Union of edges into chains keyed by vertex adjacency.
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(a, b) in &outlet {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let mut visited: HashMap<usize, bool> = HashMap::new();
        let mut segments = Vec::new();
        // Start chains at degree-1 endpoints for a deterministic walk.
        let mut endpoints: Vec<usize> = adj
            .iter()
            .filter(|(_, n)| n.len() == 1)
            .map(|(&v, _)| v)
            .collect();
        endpoints.sort_unstable();
        for start in endpoints {
            if *visited.get(&start).unwrap_or(&false) {
                continue;
            }
            let mut chain = vec![start];
            visited.insert(start, true);
            let mut cur = start;
            loop {
                let next = adj[&cur]
                    .iter()
                    .copied()
                    .find(|v| !*visited.get(v).unwrap_or(&false));
                match next {
                    Some(v) => {
                        visited.insert(v, true);
                        chain.push(v);
                        cur = v;
                    }
                    None => break,
                }
            }
            if chain.len() < 2 {
                return Err(Error::InvalidGeometry("degenerate outlet segment".into()));
            }
            if self.vertices[chain[0]][1] > self.vertices[*chain.last().unwrap()][1] {
                chain.reverse();
            }
            let x1 = self.vertices[chain[0]][0];
            for &v in &chain {
                if (self.vertices[v][0] - x1).abs() > GEOM_TOL {
                    return Err(Error::InvalidGeometry(
                        "outlet segment is not on a single vertical line".into(),
                    ));
                }
            }
            segments.push(OutletSegment { x1, vertices: chain });
        }
        if segments.is_empty() {
            return Err(Error::InvalidGeometry(
                "outlet edges form a closed loop, expected open vertical segments".into(),
            ));
        }
        Ok(segments)
    }
}

impl OutletSegment {
    /// x2 coordinates of the segment vertices, increasing.
    pub fn coords<'a>(&'a self, mesh: &'a TriMesh) -> impl Iterator<Item = f64> + 'a {
        self.vertices.iter().map(|&v| mesh.vertices[v][1])
    }

    pub fn span(&self, mesh: &TriMesh) -> (f64, f64) {
        (
            mesh.vertices[self.vertices[0]][1],
            mesh.vertices[*self.vertices.last().unwrap()][1],
        )
    }

    pub fn length(&self, mesh: &TriMesh) -> f64 {
        let (lo, hi) = self.span(mesh);
        hi - lo
    }
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Structured crossed-diagonal channel mesh on [0,length] x [0,height].
///
/// Left edge is the inlet, right edge the outlet, top/bottom are walls.
/// Each cell is split into four triangles around its center to avoid
/// diagonal-induced anisotropy.
pub fn generate_channel(length: f64, height: f64, nx: usize, ny: usize) -> Result<TriMesh> {
    if !(length > 0.0) || !(height > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "channel dimensions must be positive, got {length} x {height}"
        )));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidGeometry(format!(
            "channel needs nx, ny >= 2, got {nx} x {ny}"
        )));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| length * i as f64 / nx as f64).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| height * j as f64 / ny as f64).collect();
    let mesh = crossed_grid(&xs, &ys, |_, _| true, DomainId::Channel, |mid| {
        if mid[0].abs() <= GEOM_TOL {
            BoundaryLabel::InletDirichlet
        } else if (mid[0] - length).abs() <= GEOM_TOL {
            BoundaryLabel::Outlet
        } else {
            BoundaryLabel::WallDirichlet
        }
    });
    mesh.validate()?;
    Ok(mesh)
}

/// Bifurcated tube [0,8] x [-0.5,0.5] minus [0,0.5] x [-0.5,0] and
/// [1.5,8] x [-0.1,0.2]; inlet at {0} x (0,0.5), two outlets at x=8.
///
/// Internal corner coordinates (0.5, 1.5, -0.1, 0, 0.2) are snapped to grid
/// lines so every boundary edge has an unambiguous label.
pub fn generate_bifurcated_tube(nx: usize) -> Result<TriMesh> {
    if nx < 16 {
        return Err(Error::InvalidGeometry(format!(
            "bifurcated tube needs nx >= 16 to resolve the 0.1-wide lower branch, got {nx}"
        )));
    }
    let mut xs: Vec<f64> = (0..=nx).map(|i| 8.0 * i as f64 / nx as f64).collect();
    snap_to(&mut xs, 0.5);
    snap_to(&mut xs, 1.5);
    // ny multiple of 10 keeps -0.1, 0 and 0.2 on grid lines.
    let ny = 10 * ((nx + 40) / 80).max(1);
    let mut ys: Vec<f64> = (0..=ny).map(|j| -0.5 + j as f64 / ny as f64).collect();
    snap_to(&mut ys, -0.1);
    snap_to(&mut ys, 0.0);
    snap_to(&mut ys, 0.2);

    let inside = |cx: f64, cy: f64| {
        let in_block1 = cx < 0.5 && cy < 0.0;
        let in_block2 = cx > 1.5 && cy > -0.1 && cy < 0.2;
        !(in_block1 || in_block2)
    };
    let mesh = crossed_grid(&xs, &ys, inside, DomainId::BifurcatedTube, |mid| {
        if mid[0].abs() <= GEOM_TOL && mid[1] > 0.0 {
            BoundaryLabel::InletDirichlet
        } else if (mid[0] - 8.0).abs() <= GEOM_TOL {
            BoundaryLabel::Outlet
        } else {
            BoundaryLabel::WallDirichlet
        }
    });
    mesh.validate()?;
    if mesh.outlet_segments()?.len() != 2 {
        return Err(Error::InvalidGeometry(
            "bifurcated tube must expose two outlet segments".into(),
        ));
    }
    Ok(mesh)
}

fn snap_to(coords: &mut [f64], target: f64) {
    let (idx, _) = coords
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().partial_cmp(&(b.1 - target).abs()).unwrap())
        .unwrap();
    coords[idx] = target;
}

/// Crossed-diagonal triangulation over the cells of a tensor grid for which
/// `keep(center_x, center_y)` holds. Unused grid vertices are compacted away.
fn crossed_grid(
    xs: &[f64],
    ys: &[f64],
    keep: impl Fn(f64, f64) -> bool,
    domain_id: DomainId,
    label: impl Fn([f64; 2]) -> BoundaryLabel,
) -> TriMesh {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let grid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut raw_vertices: Vec<[f64; 2]> = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            raw_vertices.push([xs[i], ys[j]]);
        }
    }
    let mut triangles_raw: Vec<[usize; 3]> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let cx = 0.5 * (xs[i] + xs[i + 1]);
            let cy = 0.5 * (ys[j] + ys[j + 1]);
            if !keep(cx, cy) {
                continue;
            }
            let center = raw_vertices.len();
            raw_vertices.push([cx, cy]);
            let v00 = grid(i, j);
            let v10 = grid(i + 1, j);
            let v11 = grid(i + 1, j + 1);
            let v01 = grid(i, j + 1);
            triangles_raw.push([v00, v10, center]);
            triangles_raw.push([v10, v11, center]);
            triangles_raw.push([v11, v01, center]);
            triangles_raw.push([v01, v00, center]);
        }
    }

    // Compact unused vertices.
    let mut remap = vec![usize::MAX; raw_vertices.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(triangles_raw.len());
    for tri in &triangles_raw {
        let mut t = [0usize; 3];
        for (k, &v) in tri.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(raw_vertices[v]);
            }
            t[k] = remap[v];
        }
        triangles.push(t);
    }

    let mut mesh = TriMesh {
        vertices,
        triangles,
        boundary_edges: Vec::new(),
        domain_id,
    };
    mesh.boundary_edges = derive_boundary_edges(&mesh, label);
    mesh
}

/// Finds all single-triangle edges and labels them by midpoint.
pub fn derive_boundary_edges(
    mesh: &TriMesh,
    label: impl Fn([f64; 2]) -> BoundaryLabel,
) -> Vec<(usize, usize, BoundaryLabel)> {
    let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let e = sorted_pair(tri[k], tri[(k + 1) % 3]);
            *edge_count.entry(e).or_insert(0) += 1;
        }
    }
    let mut edges: Vec<(usize, usize)> = edge_count
        .into_iter()
        .filter(|&(_, n)| n == 1)
        .map(|(e, _)| e)
        .collect();
    edges.sort_unstable();
    edges
        .into_iter()
        .map(|(a, b)| {
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            (a, b, label(mid))
        })
        .collect()
}

/// Writes the `MESH2D v1` text format.
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "MESH2D v1").unwrap();
    writeln!(
        out,
        "{} {} {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.boundary_edges.len()
    )
    .unwrap();
    for v in &mesh.vertices {
        // Display for f64 is shortest round-trip, so save/load is bit-exact.
        writeln!(out, "{} {}", v[0], v[1]).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
    }
    for &(a, b, l) in &mesh.boundary_edges {
        writeln!(out, "{} {} {}", a, b, l.as_str()).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads and validates the `MESH2D v1` text format.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::ParseError("empty mesh file".into()))?;
    if header.trim() != "MESH2D v1" {
        return Err(Error::ParseError(format!("bad header `{header}`")));
    }
    let counts = lines
        .next()
        .ok_or_else(|| Error::ParseError("missing counts line".into()))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::ParseError(format!("bad count `{s}`"))))
        .collect::<Result<_>>()?;
    if counts.len() != 3 {
        return Err(Error::ParseError("counts line must have 3 fields".into()));
    }
    let (nv, nt, nbe) = (counts[0], counts[1], counts[2]);

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let line = lines
            .next()
            .ok_or_else(|| Error::ParseError(format!("truncated at vertex {k}")))?;
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::ParseError(format!("bad coordinate `{s}`"))))
            .collect::<Result<_>>()?;
        if f.len() != 2 {
            return Err(Error::ParseError(format!("vertex line {k} needs 2 fields")));
        }
        vertices.push([f[0], f[1]]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for k in 0..nt {
        let line = lines
            .next()
            .ok_or_else(|| Error::ParseError(format!("truncated at triangle {k}")))?;
        let f: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::ParseError(format!("bad index `{s}`"))))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(Error::ParseError(format!("triangle line {k} needs 3 fields")));
        }
        triangles.push([f[0], f[1], f[2]]);
    }
    let mut boundary_edges = Vec::with_capacity(nbe);
    for k in 0..nbe {
        let line = lines
            .next()
            .ok_or_else(|| Error::ParseError(format!("truncated at boundary edge {k}")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::ParseError(format!(
                "boundary edge line {k} needs 3 fields"
            )));
        }
        let a: usize = f[0]
            .parse()
            .map_err(|_| Error::ParseError(format!("bad index `{}`", f[0])))?;
        let b: usize = f[1]
            .parse()
            .map_err(|_| Error::ParseError(format!("bad index `{}`", f[1])))?;
        boundary_edges.push((a, b, BoundaryLabel::parse(f[2])?));
    }

    let mesh = TriMesh {
        vertices,
        triangles,
        boundary_edges,
        domain_id: DomainId::External,
    };
    mesh.validate()?;
    Ok(mesh)
}
