//! Numerical laboratory for compressible Euler flows driven by non-local
//! attraction-repulsion, velocity alignment, and speed-regulating friction.
//!
//! The crate provides, in dependency order:
//!
//! * [`torus`] — cell-centered fields on `[-1, 1)^N` with Fourier-diagonal
//!   calculus (gradients, Poisson solves, Helmholtz splitting, periodic
//!   convolution) and binary snapshot I/O;
//! * [`constitutive`] — pressure laws, interaction and communication kernels,
//!   and the friction response with its cruise speed;
//! * [`particles`] — the interacting swarm ODE system, flock relaxation, and
//!   particle-to-grid deposition;
//! * [`hydro`] — a conservative finite-volume solver for the forced Euler
//!   system, plus a high-resolution primitive-variable reference integrator;
//! * [`energy`] — the energy ledger: budget terms, dissipation rates, and the
//!   integrated balance residual with its dissipativity verdict;
//! * [`relative_energy`] — the weak-strong stability machinery: relative
//!   energy, its remainder, essential/residual splitting, coercivity and
//!   Gronwall fits, and the Poisson-coupled variant;
//! * [`subsolution`] — construction and audit of subsolution candidates for
//!   the convex-integration route, including the pointwise spectral-bound
//!   inequality and admissible-profile searches.
//!
//! All state is explicit; nothing global. Deterministic given identical
//! inputs and seeds: parallel loops only ever write disjoint outputs and all
//! reductions are sequential compensated sums.

pub mod constitutive;
pub mod energy;
pub mod error;
pub mod hydro;
pub mod particles;
pub mod relative_energy;
pub mod subsolution;
pub mod torus;

pub use error::{Error, Result};
pub use torus::{
    inner_product, sym_component_count, sym_component_index, vector_inner_product, ScalarField,
    SymTensorField, TorusGrid, VectorField,
};
