//! Reduced-order modeling toolkit for 2D incompressible flow: a four-step
//! time-splitting full-order solver with open-boundary pressure treatment,
//! snapshot-based modal reduction, an intrusive reduced model, and a hybrid
//! reduced model that interpolates pressure-correction coefficients with
//! radial basis functions.

pub mod error;
pub mod fem;
pub mod fom;
pub mod harness;
pub mod hybrid;
pub mod io;
pub mod mesh;
pub mod pod;
pub mod qoi;
pub mod rbf;
pub mod rom;

pub use error::{Error, Result};
