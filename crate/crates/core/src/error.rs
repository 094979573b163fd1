use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid grid spacing {h}: {reason}")]
    InvalidSpacing { h: f64, reason: String },
    #[error("point {0:?} lies outside the interpolation region")]
    OutsideDomain(Vec<f64>),
    #[error("radius {r} is below the reliable floor {floor}")]
    RadiusTooSmall { r: f64, floor: f64 },
    #[error("ball of radius {r} around {center:?} leaves the grid")]
    BallLeavesDomain { center: Vec<f64>, r: f64 },
    #[error("invalid blow-up matrix: {0}")]
    InvalidMatrix(String),
    #[error("vector is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("unsupported harmonic (dim {dim}, degree {degree}, index {index})")]
    UnsupportedHarmonic { dim: usize, degree: usize, index: usize },
    #[error("w vanishes on the sphere of radius {r} (H = {h_value:e})")]
    HBelowFloor { r: f64, h_value: f64 },
    #[error("NaN encountered after {0} sweeps")]
    NaN(usize),
    #[error("solver did not converge in {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("active-set iteration failed: {0}")]
    ActiveSet(String),
    #[error("frequency window too short: {0} rows")]
    WindowTooShort(usize),
    #[error("invalid bracket: {0}")]
    InvalidBracket(String),
    #[error("too few free-boundary points: {0}")]
    TooFewPoints(usize),
    #[error("operation rejected: {0}")]
    Rejected(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed grid file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
