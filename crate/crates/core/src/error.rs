//! Error type shared by all simulator modules.

use thiserror::Error;

/// Errors produced by state construction, optical elements, measurements and
/// the station Monte Carlo.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A mode name appears more than once in a spec or a tensor product.
    #[error("duplicate mode name `{0}`")]
    DuplicateMode(String),

    /// A mode name was looked up but is not part of the spec.
    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    /// An occupation number exceeds the cutoff of its mode.
    #[error("occupation {occ} exceeds cutoff {cutoff} on mode `{mode}`")]
    CutoffExceeded { mode: String, occ: u32, cutoff: u32 },

    /// An occupation tuple has the wrong number of entries for the spec.
    #[error("occupation tuple has {got} entries, spec has {expected} modes")]
    OccupationLength { got: usize, expected: usize },

    /// Two states were combined that live on different mode specs.
    #[error("mode specs differ: {0}")]
    SpecMismatch(String),

    /// An operator matrix does not match the dimension of its target modes.
    #[error("operator dimension {got} does not match target subspace dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    /// The requested Poisson tail bound cannot be met at the given cutoff.
    #[error("tail bound {tail_bound} unachievable at cutoff {cutoff}; requires cutoff >= {required}")]
    TailBoundUnachievable { tail_bound: f64, cutoff: u32, required: u32 },

    /// A projector state is not normalized.
    #[error("projector state has norm^2 = {norm_sqr}, expected 1")]
    NonUnitProjector { norm_sqr: f64 },

    /// Beam splitter inputs must share a photon-number cutoff.
    #[error("beam splitter inputs `{a}` (cutoff {ca}) and `{b}` (cutoff {cb}) have unequal cutoffs")]
    UnequalCutoffs { a: String, b: String, ca: u32, cb: u32 },

    /// A mode was not assigned to an arm before propagation.
    #[error("mode `{0}` not assigned to an arm")]
    UnassignedMode(String),

    /// Relative-phase analyzers are undefined in the zero-photon manifold,
    /// which holds a single state and carries no phase information.
    #[error("manifold n = 0 has a single state and no relative-phase analyzer")]
    EmptyManifold,

    /// The compiled-measurement target must satisfy 0 < m <= n.
    #[error("target occupation m = {m} outside 0 < m <= n = {n}")]
    TargetOutOfRange { m: u32, n: u32 },

    /// The analyzer manifold range exceeds the coherent-mode cutoff.
    #[error("n_max = {n_max} exceeds coherent-mode cutoff {cutoff}")]
    ManifoldBeyondCutoff { n_max: u32, cutoff: u32 },

    /// The relative-phase scheme needs a coherent amplitude.
    #[error("relative-phase mode requires a coherent amplitude (alpha^2)")]
    MissingAlpha,

    /// Trial summaries need at least one record.
    #[error("no trial records to summarize")]
    NoRecords,

    /// A quantity that must be strictly positive was not.
    #[error("{what} must be positive, got {got}")]
    NotPositive { what: &'static str, got: f64 },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
