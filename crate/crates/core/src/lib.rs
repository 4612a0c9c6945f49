//! Exact computation over products of prime-field vector spaces: Fourier
//! transforms and mixed convolutions, uniformity and box norms, multiaffine
//! maps and varieties, bias and ranks, Freiman (multi-)homomorphisms,
//! arrangements, and discrete derivatives, together with the brute-force
//! oracles used to verify them on small instances.
//!
//! All field arithmetic is exact (residues as small integers); complex
//! values only enter through characters and are compared against a 1e-9
//! tolerance. Every stochastic operation takes an explicit 64-bit seed and
//! derives its randomness from a SplitMix64 stream, so results are
//! reproducible run to run.

pub mod freiman;
pub mod harmonic;
pub mod multiaffine;
pub mod polynomial;
pub mod rng;
pub mod space;

pub use space::{Coset, FpVector, LinearMapFp, PrimeModulus, ProductSpace};

/// Global comparison tolerance for complex/real quantities.
pub const TOLERANCE: f64 = 1e-9;

/// Tolerance for identities that are exact up to a handful of rounding steps
/// (character multiplicativity, pointwise products).
pub const TIGHT_TOLERANCE: f64 = 1e-12;

/// Default enumeration budget: dense operations refuse to run when the
/// number of elementary steps would exceed this.
pub const DEFAULT_BUDGET: u64 = 1 << 24;

/// Errors shared by all modules.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("{0} is not prime (need a prime 2 <= p <= 251)")]
    NotPrime(u64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operands live on different spaces")]
    SpaceMismatch,
    #[error("direction {dir} out of range for a {k}-fold product")]
    BadDirection { dir: usize, k: usize },
    #[error("enumeration budget exceeded: need {needed} steps, budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("input must be bounded by 1 in modulus (sup |f| = {0})")]
    Unbounded(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}

/// Checks a work estimate against a budget, erroring out instead of starting
/// an enumeration that cannot finish.
pub(crate) fn check_budget(needed: u64, budget: u64) -> Result<()> {
    if needed > budget {
        Err(Error::BudgetExceeded { needed, budget })
    } else {
        Ok(())
    }
}

/// `base^exp` with overflow reported as a budget failure against `budget`.
pub(crate) fn checked_pow(base: u64, exp: u32, budget: u64) -> Result<u64> {
    base.checked_pow(exp)
        .ok_or(Error::BudgetExceeded {
            needed: u64::MAX,
            budget,
        })
        .and_then(|n| {
            check_budget(n, budget)?;
            Ok(n)
        })
}
