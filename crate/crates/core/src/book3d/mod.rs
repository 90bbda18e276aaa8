//! Ambient flow on ℝ³ whose orbit space is a book of four pages glued along a binding, and the
//! limiting diffusion on it.

pub mod elliptic;
pub mod geometry;
pub mod sim;
pub mod weights;

pub use elliptic::{ellip, elliptic_e, elliptic_k, Ellip};
pub use geometry::*;
pub use sim::{simulate_book_ambient, BookAmbientConfig, BookScheme, BookSim};
