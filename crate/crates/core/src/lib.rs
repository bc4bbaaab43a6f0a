pub mod accel;
pub mod audit;
pub mod box_solver;
pub mod error;
pub mod harness;
pub mod lagrangian;
pub mod linalg;
pub mod outer;
pub mod profile;
pub mod problem;
pub mod qp_oracle;
pub mod registry;

pub use error::{Error, Result};
