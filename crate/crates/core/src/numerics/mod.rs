pub mod interp;
pub mod ode;
pub mod quad;
pub mod roots;
