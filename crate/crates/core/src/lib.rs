//! Exact symbolic workbench for formal generic submanifolds of complex space.
//!
//! Everything is computed over the Gaussian rationals with a global
//! truncation cap `D`: submanifolds are truncated defining series, their CR
//! invariants (finite type, Hörmander numbers, finite and holomorphic
//! nondegeneracy) are decided by exact linear algebra, and the reflection /
//! jet-parametrization machinery is verified coefficientwise on concrete
//! mappings.

pub mod error;
pub mod scalar;
pub mod series;
pub mod linalg;
pub mod solve;
pub mod manifold;
pub mod vfields;
pub mod nondegen;
pub mod segre;
pub mod mapping;
pub mod reflection;
pub mod parametrize;
pub mod gallery;

pub use error::CrError;
pub use scalar::GaussianRational;
pub use series::{Exponent, TruncatedSeries};
