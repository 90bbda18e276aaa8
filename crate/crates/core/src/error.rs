use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("integration step failed at t = {t} (step size {h} below minimum)")]
    StepFailure { t: f64, h: f64 },
    #[error("trajectory left the domain box at ({x:?})")]
    OutOfDomain { x: Vec<f64> },
    #[error("orbit did not close within flow time {max_time}")]
    NotClosed { max_time: f64 },
    #[error("anchor too close to a critical point (|grad H| = {grad})")]
    NearCritical { grad: f64 },
    #[error("degenerate critical point at ({x}, {y}) with det Hess = {det}")]
    DegenerateCritical { x: f64, y: f64, det: f64 },
    #[error("ambiguous component matching at level {level}: {detail}")]
    TopologyAmbiguous { level: f64, detail: String },
    #[error("extrapolation unstable at vertex {vertex}: {a} vs {b}")]
    ExtrapolationUnstable { vertex: usize, a: f64, b: f64 },
    #[error("nonzero weight {alpha} at extremum vertex {vertex}")]
    NonzeroAtExtremum { vertex: usize, alpha: f64 },
    #[error("fit window too narrow: {points} points")]
    WindowTooNarrow { points: usize },
    #[error("state h = {h} outside tabulated range [{lo}, {hi}] of edge {edge}")]
    CoefficientRangeExceeded { edge: usize, h: f64, lo: f64, hi: f64 },
    #[error("radial coordinate collapsed to {r}")]
    RadialCollapse { r: f64 },
    #[error("point lies on the binding")]
    BindingPoint,
    #[error("covariance not positive semidefinite: eigenvalue {eig}")]
    PsdViolation { eig: f64 },
    #[error("empty empirical law")]
    EmptyLaw,
    #[error("expression error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
