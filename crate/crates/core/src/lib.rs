//! Diagonal realization under majorization in the finite-matrix model of a
//! II₁ factor.
//!
//! Given a target diagonal `A` and an operator `T`, [`thompson::general_solve`]
//! decides whether `A ≺_w T` and, when it does, builds unitaries `U`, `V` with
//! `diag(UTV) = A` up to a reported truncation error.
//!
//! ```
//! use majorant::{thompson, DiagonalElement, FactorElement, Strategy, DEFAULT_TOL};
//!
//! let t = FactorElement::from_real_diagonal(&[4.0, 2.0, 1.0, 1.0]).unwrap();
//! let a = DiagonalElement::from_real(&[1.0, 1.0, 1.0, 1.0]).unwrap();
//! let r = thompson::general_solve(&a, &t, Strategy::Partition, DEFAULT_TOL).unwrap();
//! assert!(r.diag_residual <= r.truncation_error + 1e-9);
//! ```

pub mod error;
pub mod io;
pub mod matrix_model;
pub mod oracle;
pub mod profile;
pub mod schur_horn;
pub mod thompson;

pub use error::{Error, Result};
pub use matrix_model::{DiagonalElement, FactorElement, SpectralResolution, C64};
pub use profile::{BorelCellSet, MajorizationReport, StepProfile};
pub use thompson::{RealizationResult, StageKind, StageTrace, Strategy};

/// Default absolute tolerance for every predicate.
pub const DEFAULT_TOL: f64 = 1e-9;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/matrix-model.md")]
    mod matrix_model {}
    #[doc = include_str!("../../../book/src/schur-horn.md")]
    mod schur_horn {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
