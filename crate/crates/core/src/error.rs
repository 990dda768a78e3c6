//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]; variants carry enough context
//! to identify the offending input without holding references into it.

use thiserror::Error;

/// Errors produced by grid construction, field algebra, solvers and audits.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid dimension outside the supported range 1..=3.
    #[error("unsupported dimension {0}: must be 1, 2 or 3")]
    UnsupportedDimension(usize),

    /// Cells per axis must be even and at least 4 (spectral symmetry needs an
    /// even count; fewer than 4 cells cannot carry a signed wavenumber).
    #[error("invalid cell count {0}: must be even and >= 4")]
    InvalidCellCount(usize),

    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {context} (dim {lhs_dim}x{lhs_cells} vs dim {rhs_dim}x{rhs_cells})")]
    GridMismatch {
        context: &'static str,
        lhs_dim: usize,
        lhs_cells: usize,
        rhs_dim: usize,
        rhs_cells: usize,
    },

    /// A field value is NaN or infinite where a finite value is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Laplacian inversion requires a mean-free right-hand side.
    #[error("cannot invert Laplacian: input mean {mean:e} exceeds {tol:e} relative to the field scale")]
    NonZeroMean { mean: f64, tol: f64 },

    /// A kernel sampled on the torus must be finite and symmetric.
    #[error("kernel unusable on the torus: {0}")]
    SingularOnTorus(String),

    /// The friction response never reaches 1, so no cruise speed exists.
    #[error("no cruise speed: friction response does not cross 1 on (0, {searched_up_to:e}]")]
    NoCruiseSpeed { searched_up_to: f64 },

    /// A density dropped below the admissible floor during time stepping.
    #[error("negative density {value:e} in cell {cell} at t = {time}")]
    NegativeDensity { value: f64, cell: usize, time: f64 },

    /// Time stepping produced a NaN state.
    #[error("NaN state detected at t = {time} in {context}")]
    NanState { context: &'static str, time: f64 },

    /// An iteration failed to converge within its budget.
    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// No admissible decay scale keeps the audited density above its floor.
    #[error("no admissible decay scale in [{min:e}, 1]: potential too large relative to the density floor")]
    NoAdmissibleScale { min: f64 },

    /// The kinetic-energy density must stay strictly positive for an audit.
    #[error("non-positive kinetic energy density {min:e} at slice {slice}")]
    NonPositiveEnergy { min: f64, slice: usize },

    /// Inputs fail a documented precondition not covered by a variant above.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Snapshot or report I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A snapshot file is malformed or inconsistent with its header.
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for constructing a [`Error::GridMismatch`] from two grids.
    pub(crate) fn grid_mismatch(
        context: &'static str,
        lhs: crate::torus::TorusGrid,
        rhs: crate::torus::TorusGrid,
    ) -> Self {
        Error::GridMismatch {
            context,
            lhs_dim: lhs.dim(),
            lhs_cells: lhs.cells_per_axis(),
            rhs_dim: rhs.dim(),
            rhs_cells: rhs.cells_per_axis(),
        }
    }
}
