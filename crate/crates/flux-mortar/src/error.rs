//! Crate-wide error type.

/// Errors produced by geometry construction, assembly, and solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid decomposition or grid description.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// Invalid run parameter (resolution, tolerance, conductivity, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Lookup of an interface that is not incident to the subdomain.
    #[error("interface {interface} is not incident to subdomain {subdomain}")]
    NotIncident { subdomain: usize, interface: usize },

    /// A point outside the queried interface segment.
    #[error("arclength {s} outside interface range [{s0}, {s1}]")]
    OutOfRange { s: f64, s0: f64, s1: f64 },

    /// Local pressure system could not be factorized.
    #[error("singular local system on subdomain {subdomain}: {detail}")]
    SingularLocal { subdomain: usize, detail: String },

    /// The mortar space is too rich for the neighboring trace spaces.
    #[error("mortar condition violated on interface {interface} (singular projection system)")]
    MortarCondition { interface: usize },

    /// Coarse operator lost rank (inf-sup failure on the multiplier space).
    #[error("coarse operator is rank deficient over the interior subdomains")]
    CoarseRankDeficient,

    /// Interface CG ran out of iterations.
    #[error("interface CG did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    CgNoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// Monolithic direct solve produced an unusable factorization.
    #[error("monolithic saddle system is singular or severely ill-conditioned: {diagnostic}")]
    MonolithicSingular { diagnostic: String },

    /// Dense factorization failure reported by the linear algebra backend.
    #[error("dense factorization failed: {0}")]
    Dense(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    /// File IO wrapped with path context.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
