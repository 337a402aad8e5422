use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input, mismatched sizes, unknown names.
    Input,
    /// A fit, factorization or linear solve broke down.
    Numerical,
    /// The input violates a mathematical precondition (|mu| >= 1, bad angle, ...).
    Precondition,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("degenerate point cloud: points {first} and {second} coincide")]
    DegenerateCloud { first: usize, second: usize },
    #[error("empty neighborhood around {center:?} (radius {radius})")]
    EmptyNeighborhood { center: Vec<f64>, radius: f64 },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("singular MLS fit at {point:?} (condition estimate {condition:e})")]
    SingularFit { point: Vec<f64>, condition: f64 },
    #[error("degenerate jacobian: dz f vanishes")]
    DegenerateJacobian,
    #[error("degenerate composition: |mu_f * conj(mu_g)| = 1")]
    DegenerateComposition,
    #[error("not quasi-conformal: |mu| = {modulus} >= 1")]
    NotQuasiConformal { modulus: f64 },
    #[error("degenerate neighborhood: {0}")]
    DegenerateNeighborhood(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("interface mismatch: {0}")]
    Interface(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("local frame failed at point {index}: {reason}")]
    Frame { index: usize, reason: String },
    #[error("boundary detection failed: {0}")]
    BoundaryDetection(String),
    #[error("unknown builtin instance `{name}` (valid: {})", valid.join(", "))]
    Catalog {
        name: String,
        valid: Vec<&'static str>,
    },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidCloud(_)
            | Error::DegenerateCloud { .. }
            | Error::Interface(_)
            | Error::Catalog { .. }
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::SingularFit { .. }
            | Error::Factorization(_)
            | Error::Solver(_)
            | Error::Frame { .. }
            | Error::BoundaryDetection(_)
            | Error::DegenerateNeighborhood(_)
            | Error::EmptyNeighborhood { .. } => ErrorClass::Numerical,
            Error::Domain(_)
            | Error::Parameter(_)
            | Error::DegenerateJacobian
            | Error::DegenerateComposition
            | Error::NotQuasiConformal { .. } => ErrorClass::Precondition,
        }
    }
}
