//! Gaussian concentration toolkit for translation-invariant binary
//! probabilistic cellular automata (PCA).
//!
//! A PCA on `{-1, +1}^{Z^d}` is described by the Fourier coefficients `r_A`
//! of its local bias `h_x(eta) = sum_A r_A prod_{y in A} eta_{x+y}`; given the
//! configuration `eta`, every site independently becomes `+1` with probability
//! `(1 + h_x(eta)) / 2`.
//!
//! The crate is split along the same lines as the workflow:
//!
//! * [`rule`]: coefficients, validation, the oscillation-spreading kernel
//!   `psi`, the contraction coefficient `kappa` and the built-in models.
//! * [`localfn`]: local observables, their oscillation vectors and the exact
//!   action of the transition operator.
//! * [`constants`]: the concentration-constant ledger (`C_n`, `C_inf`, the
//!   space-time matrix and relaxation bounds).
//! * [`engine`]: bit-packed synchronous simulation on finite tori with
//!   counter-based randomness.
//! * [`exact`]: brute-force oracles on tiny tori.
//! * [`verify`]: certification of concentration, tail and relaxation
//!   inequalities against exact and Monte Carlo measures.
//! * [`io`]: JSON file formats.

pub mod constants;
pub mod engine;
pub mod exact;
pub mod io;
pub mod lattice;
pub mod localfn;
pub mod rule;
pub mod verify;
mod walsh;

pub use constants::{ConstantLedger, RelaxationBound, SpaceTimeMatrix};
pub use engine::{Ensemble, InitialLaw, SeedSpec, Simulator, Torus, TorusConfig};
pub use exact::{ExactDistribution, OscNorm};
pub use lattice::{OffsetSet, Site};
pub use localfn::{LocalFunction, OscillationVector, SpaceTimeFunction};
pub use rule::{Builtin, FourierRule, Kernel, ProbTable, ValidationReport};

/// Errors surfaced by any module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Rule(#[from] rule::RuleError),
    #[error(transparent)]
    LocalFn(#[from] localfn::LocalFnError),
    #[error(transparent)]
    Constants(#[from] constants::ConstantsError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Exact(#[from] exact::ExactError),
    #[error(transparent)]
    Verify(#[from] verify::VerifyError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

impl Error {
    /// True when the failure comes from a configured size or iteration cap
    /// rather than from invalid input.
    pub fn is_resource_limit(&self) -> bool {
        match self {
            Error::Rule(e) => e.is_resource_limit(),
            Error::LocalFn(e) => e.is_resource_limit(),
            Error::Engine(e) => e.is_resource_limit(),
            Error::Exact(e) => e.is_resource_limit(),
            Error::Verify(e) => e.is_resource_limit(),
            Error::Constants(constants::ConstantsError::NoConvergence { .. }) => true,
            Error::Constants(constants::ConstantsError::Rule(e)) => e.is_resource_limit(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
