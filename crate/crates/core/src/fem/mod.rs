//! Finite-element layer: sparse matrices, solvers, quadrature, dof maps and
//! operator assembly on Taylor-Hood pairs.

pub mod assembly;
pub mod dofmap;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assembly::{
    apply_dirichlet, assemble_convection, assemble_div_coupling, assemble_grad_coupling,
    assemble_mass, assemble_outlet_div_matrix, assemble_outlet_div_rhs, assemble_outlet_trace_ops,
    assemble_stiffness, build_outlet_space, extend_outlet_trace, OutletSpace, TriGeom,
};
pub use dofmap::{DofMap, FEField, Space};
pub use solver::{solve_sparse, SolveOpts, SolverMethod};
pub use sparse::{CooBuilder, CsrMatrix};
