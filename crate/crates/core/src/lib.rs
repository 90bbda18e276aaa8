//! Averaging of fast shear flows: Reeb graphs, graph diffusion coefficients, book diffusions and
//! Monte Carlo comparison of the ambient and limiting laws.

pub mod ambient;
pub mod book3d;
pub mod coeffs;
pub mod error;
pub mod expr;
pub mod fields;
pub mod flows;
pub mod graphsim;
pub mod numerics;
pub mod pathio;
pub mod reeb;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Hamiltonian = fields::HamiltonianSystem2D<f64>;
pub type Orbit = fields::Orbit<f64>;
pub type Point = fields::P2<f64>;
