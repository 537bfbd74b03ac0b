//! Viscous-plastic sea-ice dynamics on adaptive quadrilateral meshes, with a
//! goal-oriented space-time error estimator for the partitioned time stepping.

pub mod adaptivity;
pub mod adjoint;
pub mod checkpoint;
pub mod error;
pub mod estimator;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
