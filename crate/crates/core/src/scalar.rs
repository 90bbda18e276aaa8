use std::fmt::{Debug, Display};

/// Floating point scalar used by the deterministic numerical kernels.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn pi() -> Self {
        Self::c(std::f64::consts::PI)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
