//! Full-order solver: a four-step time-splitting scheme for incompressible
//! flow with an open (do-nothing) outlet.
//!
//! Each time step solves
//!   1. a prediction-diffusion problem for the predicted velocity,
//!   2. a 1D reaction-diffusion problem on the outlet trace that supplies a
//!      pressure boundary correction,
//!   3. a pressure-continuity Poisson problem, zero on the outlet, driven by
//!      the divergence of the predicted velocity and by the streamwise
//!      extension of the outlet trace, and
//!   4. a nodal pressure update plus an L2 projection updating the velocity.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::assembly::{
    apply_dirichlet, assemble_convection, assemble_div_coupling, assemble_grad_coupling,
    assemble_mass, assemble_outlet_trace_ops, assemble_outlet_div_matrix, assemble_stiffness,
    build_outlet_space, extend_outlet_trace, OutletSpace,
};
use crate::fem::dofmap::{DofMap, FEField, Space};
use crate::fem::solver::{solve_sparse, SolveOpts};
use crate::fem::sparse::CsrMatrix;
use crate::mesh::{BoundaryLabel, TriMesh};
use crate::qoi::{
    charge_drop, drag_lift, harmonic_test_fields, kinetic_energy, obstacle_edges, outflux,
    DragLiftConfig, QoISeries,
};

/// Inflow velocity profile on the inlet boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InflowProfile {
    /// Parabolic profile with the given mean velocity; vanishes at the inlet
    /// corners.
    Parabolic { mean_velocity: f64 },
    /// No inflow (zero Dirichlet everywhere on the inlet).
    None,
}

#[derive(Debug, Clone)]
pub struct FOMConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub inflow: InflowProfile,
    /// Cosine ramp of the inflow over this many initial steps; 0 disables.
    pub ramp_steps: usize,
    /// Snapshots are recorded for t in [window.0, window.1].
    pub snapshot_window: (f64, f64),
    /// Record every `snapshot_stride`-th step inside the window.
    pub snapshot_stride: usize,
    /// Disables the convective term (Stokes mode), used by linearity tests.
    pub convection: bool,
    /// Parameter value recorded with the snapshots (Reynolds number).
    pub param: f64,
    pub solver: SolveOpts,
}

impl FOMConfig {
    pub fn new(nu: f64, dt: f64, t_end: f64, mean_velocity: f64) -> FOMConfig {
        FOMConfig {
            nu,
            dt,
            t_end,
            inflow: InflowProfile::Parabolic { mean_velocity },
            ramp_steps: 10,
            snapshot_window: (0.0, t_end),
            snapshot_stride: 1,
            convection: true,
            param: 0.0,
            solver: SolveOpts::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::InvalidInput(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt < self.t_end) {
            return Err(Error::InvalidInput(format!(
                "need 0 < dt < t_end, got dt={} t_end={}",
                self.dt, self.t_end
            )));
        }
        let (a, b) = self.snapshot_window;
        if !(a < b && b <= self.t_end + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "snapshot window [{a}, {b}] must be increasing and end by t_end={}",
                self.t_end
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidInput("snapshot stride must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// x2 range of the inlet boundary.
pub fn inlet_span(mesh: &TriMesh) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(a, b, l) in &mesh.boundary_edges {
        if l == BoundaryLabel::InletDirichlet {
            for v in [a, b] {
                lo = lo.min(mesh.vertices[v][1]);
                hi = hi.max(mesh.vertices[v][1]);
            }
        }
    }
    if lo >= hi {
        return Err(Error::InvalidGeometry("mesh has no inlet edges".into()));
    }
    Ok((lo, hi))
}

/// Inflow velocity at a point of the inlet, before ramping.
pub fn inflow_value(profile: InflowProfile, span: (f64, f64), p: [f64; 2]) -> [f64; 2] {
    match profile {
        InflowProfile::None => [0.0, 0.0],
        InflowProfile::Parabolic { mean_velocity } => {
            let (lo, hi) = span;
            let h = hi - lo;
            [6.0 * mean_velocity * (p[1] - lo) * (hi - p[1]) / (h * h), 0.0]
        }
    }
}

/// Everything assembled once per (mesh, config) pair.
pub struct FOMOperators {
    pub vel_map: DofMap,
    pub pres_map: DofMap,
    /// Pressure space with zero constraints on the outlet (Step-3 space).
    pub phi_map: DofMap,
    pub outlet: OutletSpace,
    pub mass_vel: CsrMatrix,
    pub stiff_vel: CsrMatrix,
    /// (psi_i, div phi_j), pressure-by-velocity.
    pub div: CsrMatrix,
    /// (phi_i, d psi_j / dx_c), velocity-by-pressure ((grad q, v) pairing).
    pub grad: CsrMatrix,
    pub mass_p1: CsrMatrix,
    pub stiff_p1: CsrMatrix,
    /// Step-3 stiffness with outlet rows/columns eliminated.
    pub stiff_phi: CsrMatrix,
    /// Outlet trace mass and stiffness.
    pub trace_mass: CsrMatrix,
    pub trace_stiff: CsrMatrix,
    /// Trace-divergence pairing (q_i, div u)_{outlet}.
    pub trace_div: CsrMatrix,
    /// Step-2 system nu*dt*S + M.
    pub step2_matrix: CsrMatrix,
    /// Full inflow Dirichlet values (before ramping) per velocity dof.
    pub inflow_values: Vec<f64>,
}

impl FOMOperators {
    pub fn new(mesh: &TriMesh, cfg: &FOMConfig) -> Result<FOMOperators> {
        let span = match cfg.inflow {
            InflowProfile::None => (0.0, 1.0),
            _ => inlet_span(mesh)?,
        };
        let vel_map = DofMap::p2_vector_dirichlet(mesh, &|p, label| {
            if label == BoundaryLabel::InletDirichlet {
                inflow_value(cfg.inflow, span, p)
            } else {
                [0.0, 0.0]
            }
        });
        let pres_map = DofMap::new(mesh, Space::P1Scalar);
        let phi_map = DofMap::p1_scalar_outlet_zero(mesh);
        let outlet = build_outlet_space(mesh)?;

        let mass_vel = assemble_mass(mesh, &vel_map);
        let stiff_vel = assemble_stiffness(mesh, &vel_map);
        let div = assemble_div_coupling(mesh, &vel_map, &pres_map)?;
        let grad = assemble_grad_coupling(mesh, &vel_map, &pres_map)?;
        let mass_p1 = assemble_mass(mesh, &pres_map);
        let stiff_p1 = assemble_stiffness(mesh, &pres_map);
        let zeros = vec![0.0; pres_map.dof_count];
        let (stiff_phi, _) = apply_dirichlet(&stiff_p1, &zeros, &phi_map.constrained);
        let (trace_mass, trace_stiff) = assemble_outlet_trace_ops(&outlet);
        let trace_div = assemble_outlet_div_matrix(mesh, &outlet, &vel_map);
        let step2_matrix = CsrMatrix::linear_combination(&[
            (cfg.nu * cfg.dt, &trace_stiff),
            (1.0, &trace_mass),
        ])?;

        let mut inflow_values = vec![0.0; vel_map.dof_count];
        for &(d, v) in &vel_map.constrained {
            inflow_values[d] = v;
        }
        Ok(FOMOperators {
            vel_map,
            pres_map,
            phi_map,
            outlet,
            mass_vel,
            stiff_vel,
            div,
            grad,
            mass_p1,
            stiff_p1,
            stiff_phi,
            trace_mass,
            trace_stiff,
            trace_div,
            step2_matrix,
            inflow_values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FOMState {
    pub u: FEField,
    pub u_tilde: FEField,
    pub p: FEField,
    pub phi: FEField,
    pub phi_hat: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl FOMState {
    pub fn zero(ops: &FOMOperators) -> FOMState {
        FOMState {
            u: FEField::zeros(&ops.vel_map),
            u_tilde: FEField::zeros(&ops.vel_map),
            p: FEField::zeros(&ops.pres_map),
            phi: FEField::zeros(&ops.phi_map),
            phi_hat: vec![0.0; ops.outlet.dof_count],
            t: 0.0,
            step: 0,
        }
    }
}

/// Cosine ramp factor for the inflow of step `n` (computing the state at
/// t^{n+1}); reaches 1 after `ramp_steps` steps.
pub fn ramp_factor(ramp_steps: usize, n: usize) -> f64 {
    if ramp_steps == 0 || n + 1 >= ramp_steps {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * (n + 1) as f64 / ramp_steps as f64).cos())
    }
}

/// Step 1: predicted velocity from
/// (1/dt)(u~ - u^n, v) + (u^n . grad u~, v) + nu (grad u~, grad v)
///   - (p^n, div v) = 0, with (ramped) inflow Dirichlet values.
pub fn fom_step1_predict(
    mesh: &TriMesh,
    ops: &FOMOperators,
    cfg: &FOMConfig,
    state: &FOMState,
    ramp: f64,
) -> Result<FEField> {
    let inv_dt = 1.0 / cfg.dt;
    let a = if cfg.convection {
        let conv = assemble_convection(mesh, &ops.vel_map, &state.u)?;
        CsrMatrix::linear_combination(&[
            (inv_dt, &ops.mass_vel),
            (1.0, &conv),
            (cfg.nu, &ops.stiff_vel),
        ])?
    } else {
        CsrMatrix::linear_combination(&[(inv_dt, &ops.mass_vel), (cfg.nu, &ops.stiff_vel)])?
    };
    let mut rhs = ops.mass_vel.mul_vec(&state.u.values);
    for v in &mut rhs {
        *v *= inv_dt;
    }
    // + (p^n, div v): transpose action of the divergence pairing
    let bp = ops.div.mul_transpose_vec(&state.p.values);
    for (r, b) in rhs.iter_mut().zip(&bp) {
        *r += b;
    }
    let constraints: Vec<(usize, f64)> = ops
        .vel_map
        .constrained
        .iter()
        .map(|&(d, v)| (d, ramp * v))
        .collect();
    let (ac, rhsc) = apply_dirichlet(&a, &rhs, &constraints);
    let x = solve_sparse(&ac, &rhsc, &SolveOpts::lu()).map_err(|e| e.with_context("step 1"))?;
    Ok(FEField::from_values(x))
}

/// Step 2: outlet pressure correction trace from
/// nu dt (d phi^ / dx2, d q / dx2) + (phi^, q) = -nu (div u~, q) on the outlet.
pub fn fom_step2_outlet_bc(
    ops: &FOMOperators,
    cfg: &FOMConfig,
    u_tilde: &FEField,
) -> Result<Vec<f64>> {
    let mut rhs = ops.trace_div.mul_vec(&u_tilde.values);
    for v in &mut rhs {
        *v *= -cfg.nu;
    }
    solve_sparse(&ops.step2_matrix, &rhs, &SolveOpts::cg()).map_err(|e| e.with_context("step 2"))
}

/// Step 3: pressure-continuity correction, zero on the outlet, from
/// (grad phi, grad q) = -(1/dt)(div u~, q) - (grad phi~, grad q).
/// Returns (phi, phi~) where phi~ is the streamwise extension of phi^.
pub fn fom_step3_pressure_correction(
    mesh: &TriMesh,
    ops: &FOMOperators,
    cfg: &FOMConfig,
    u_tilde: &FEField,
    phi_hat: &[f64],
) -> Result<(FEField, FEField)> {
    let phi_tilde = extend_outlet_trace(mesh, &ops.pres_map, &ops.outlet, phi_hat);
    let div_u = ops.div.mul_vec(&u_tilde.values);
    let ext_grad = ops.stiff_p1.mul_vec(&phi_tilde.values);
    let mut rhs: Vec<f64> = div_u
        .iter()
        .zip(&ext_grad)
        .map(|(d, e)| -d / cfg.dt - e)
        .collect();
    // Homogeneous Dirichlet rows on the outlet (values are zero, so only the
    // right-hand side rows need clearing).
    for &(d, _) in &ops.phi_map.constrained {
        rhs[d] = 0.0;
    }
    let phi = solve_sparse(&ops.stiff_phi, &rhs, &SolveOpts::cg())
        .map_err(|e| e.with_context("step 3"))?;
    Ok((FEField::from_values(phi), phi_tilde))
}

/// Step 4: p^{n+1} = p^n + phi + phi~ nodally; u^{n+1} is the L2 projection
/// of u~ - dt grad(phi + phi~) onto the velocity space.
pub fn fom_step4_update(
    ops: &FOMOperators,
    cfg: &FOMConfig,
    state: &FOMState,
    u_tilde: &FEField,
    phi: &FEField,
    phi_tilde: &FEField,
) -> Result<(FEField, FEField)> {
    let phi_bar: Vec<f64> = phi
        .values
        .iter()
        .zip(&phi_tilde.values)
        .map(|(a, b)| a + b)
        .collect();
    let p_new: Vec<f64> = state
        .p
        .values
        .iter()
        .zip(&phi_bar)
        .map(|(a, b)| a + b)
        .collect();

    let mut rhs = ops.mass_vel.mul_vec(&u_tilde.values);
    let grad_term = ops.grad.mul_vec(&phi_bar);
    for (r, g) in rhs.iter_mut().zip(&grad_term) {
        *r -= cfg.dt * g;
    }
    // The mass matrix is well conditioned; a tight tolerance is cheap and
    // keeps the projection error far below the splitting error.
    let mut opts = SolveOpts::cg();
    opts.tol = 1e-13;
    let u_new =
        solve_sparse(&ops.mass_vel, &rhs, &opts).map_err(|e| e.with_context("step 4"))?;
    Ok((FEField::from_values(u_new), FEField::from_values(p_new)))
}

/// Advances the state by one full time step.
pub fn fom_step(
    mesh: &TriMesh,
    ops: &FOMOperators,
    cfg: &FOMConfig,
    state: &mut FOMState,
) -> Result<()> {
    let ramp = ramp_factor(cfg.ramp_steps, state.step);
    let u_tilde = fom_step1_predict(mesh, ops, cfg, state, ramp)?;
    let phi_hat = fom_step2_outlet_bc(ops, cfg, &u_tilde)?;
    let (phi, phi_tilde) = fom_step3_pressure_correction(mesh, ops, cfg, &u_tilde, &phi_hat)?;
    let (u, p) = fom_step4_update(ops, cfg, state, &u_tilde, &phi, &phi_tilde)?;
    state.u = u;
    state.u_tilde = u_tilde;
    state.p = p;
    state.phi = phi;
    state.phi_hat = phi_hat;
    state.step += 1;
    state.t = state.step as f64 * cfg.dt;
    Ok(())
}

/// Snapshot columns of all five fields over one parameter run.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    pub param: f64,
    pub u: DMatrix<f64>,
    pub u_tilde: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub phi_hat: DMatrix<f64>,
}

impl SnapshotSet {
    fn from_columns(
        times: Vec<f64>,
        param: f64,
        cols: [(usize, &Vec<Vec<f64>>); 5],
    ) -> SnapshotSet {
        let build = |(rows, data): (usize, &Vec<Vec<f64>>)| {
            let n = data.len();
            let mut m = DMatrix::zeros(rows, n);
            for (j, col) in data.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            m
        };
        SnapshotSet {
            times,
            param,
            u: build(cols[0]),
            u_tilde: build(cols[1]),
            p: build(cols[2]),
            phi: build(cols[3]),
            phi_hat: build(cols[4]),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Concatenates snapshot sets column-wise (multiple parameter runs).
    pub fn concat(sets: &[SnapshotSet]) -> Result<SnapshotSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidInput("no snapshot sets to merge".into()))?;
        let glue = |pick: fn(&SnapshotSet) -> &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let rows = pick(first).nrows();
            let total: usize = sets.iter().map(|s| pick(s).ncols()).sum();
            let mut out = DMatrix::zeros(rows, total);
            let mut at = 0;
            for s in sets {
                let m = pick(s);
                if m.nrows() != rows {
                    return Err(Error::DimensionMismatch(
                        "snapshot sets live on different meshes".into(),
                    ));
                }
                out.view_mut((0, at), (rows, m.ncols())).copy_from(m);
                at += m.ncols();
            }
            Ok(out)
        };
        Ok(SnapshotSet {
            times: sets.iter().flat_map(|s| s.times.iter().copied()).collect(),
            param: first.param,
            u: glue(|s| &s.u)?,
            u_tilde: glue(|s| &s.u_tilde)?,
            p: glue(|s| &s.p)?,
            phi: glue(|s| &s.phi)?,
            phi_hat: glue(|s| &s.phi_hat)?,
        })
    }
}

/// Result of a full-order run.
pub struct FOMRun {
    pub state: FOMState,
    pub snapshots: SnapshotSet,
    pub qoi: QoISeries,
    pub wall_time: Duration,
}

/// Runs the four-step scheme from a zero start for cfg.n_steps() steps,
/// recording snapshots inside the configured window and the scalar outputs
/// at every step.
pub fn run_fom(mesh: &TriMesh, cfg: &FOMConfig) -> Result<FOMRun> {
    cfg.validate()?;
    let start = Instant::now();
    let ops = FOMOperators::new(mesh, cfg)?;
    run_fom_with(mesh, &ops, cfg, start)
}

pub fn run_fom_with(
    mesh: &TriMesh,
    ops: &FOMOperators,
    cfg: &FOMConfig,
    start: Instant,
) -> Result<FOMRun> {
    let mut state = FOMState::zero(ops);
    let segments = ops.outlet.segments.clone();
    let mut qoi = QoISeries::new(segments.len());

    // Drag/lift only when the mesh carries an interior obstacle.
    let with_obstacle = !obstacle_edges(mesh).is_empty();
    let test_fields = if with_obstacle {
        Some(harmonic_test_fields(mesh, &ops.vel_map)?)
    } else {
        None
    };
    let (diameter, mean_velocity) = (1.0, mean_inflow_velocity(cfg));

    let mut snap_times = Vec::new();
    let mut snap_u: Vec<Vec<f64>> = Vec::new();
    let mut snap_ut: Vec<Vec<f64>> = Vec::new();
    let mut snap_p: Vec<Vec<f64>> = Vec::new();
    let mut snap_phi: Vec<Vec<f64>> = Vec::new();
    let mut snap_phi_hat: Vec<Vec<f64>> = Vec::new();

    let n_steps = cfg.n_steps();
    for n in 0..n_steps {
        let u_prev = state.u.values.clone();
        fom_step(mesh, ops, cfg, &mut state).map_err(|e| e.with_context(&format!("time step {n}")))?;

        qoi.times.push(state.t);
        qoi.kinetic_energy
            .push(kinetic_energy(&ops.mass_vel, &state.u.values));
        for (k, seg) in segments.iter().enumerate() {
            qoi.outflux[k].push(outflux(mesh, &ops.vel_map, &state.u.values, seg)?);
            qoi.charge_drop[k].push(charge_drop(
                mesh,
                &ops.vel_map,
                &state.u.values,
                &state.p.values,
                seg,
            )?);
        }
        if let Some((vd, vl)) = &test_fields {
            let dl_cfg = DragLiftConfig {
                nu: cfg.nu,
                dt: cfg.dt,
                diameter,
                mean_velocity,
            };
            let (cd, cl) = drag_lift(
                mesh,
                &ops.vel_map,
                &ops.pres_map,
                &state.u.values,
                &u_prev,
                &state.p.values,
                &dl_cfg,
                vd,
                vl,
            )?;
            qoi.drag.push(cd);
            qoi.lift.push(cl);
        }

        let (ta, tb) = cfg.snapshot_window;
        if state.t >= ta - 1e-12 && state.t <= tb + 1e-12 && state.step % cfg.snapshot_stride == 0 {
            snap_times.push(state.t);
            snap_u.push(state.u.values.clone());
            snap_ut.push(state.u_tilde.values.clone());
            snap_p.push(state.p.values.clone());
            snap_phi.push(state.phi.values.clone());
            snap_phi_hat.push(state.phi_hat.clone());
        }
    }

    let snapshots = SnapshotSet::from_columns(
        snap_times,
        cfg.param,
        [
            (ops.vel_map.dof_count, &snap_u),
            (ops.vel_map.dof_count, &snap_ut),
            (ops.pres_map.dof_count, &snap_p),
            (ops.pres_map.dof_count, &snap_phi),
            (ops.outlet.dof_count, &snap_phi_hat),
        ],
    );
    Ok(FOMRun {
        state,
        snapshots,
        qoi,
        wall_time: start.elapsed(),
    })
}

fn mean_inflow_velocity(cfg: &FOMConfig) -> f64 {
    match cfg.inflow {
        InflowProfile::Parabolic { mean_velocity } => mean_velocity,
        InflowProfile::None => 1.0,
    }
}

impl Error {
    fn with_context(self, what: &str) -> Error {
        match self {
            Error::SolverDiverged {
                residual,
                iterations,
                context,
            } => Error::SolverDiverged {
                residual,
                iterations,
                context: Some(match context {
                    Some(c) => format!("{what}: {c}"),
                    None => what.to_string(),
                }),
            },
            other => other,
        }
    }
}
