//! Blind ptychography with multigrid majorization-minimization.
//!
//! The crate reconstructs a complex object and probe from far-field
//! diffraction intensities. It provides the eMAGPIE solver, the ePIE and
//! rPIE baselines, a synthetic experiment pipeline, and reconstruction
//! quality metrics.
//!
//! ```
//! use emagpie::field::{fft2, ifft2, ComplexField};
//!
//! let x = ComplexField::ones(4, 4);
//! let back = ifft2(&fft2(&x).unwrap()).unwrap();
//! assert!((back.norm() - x.norm()).abs() < 1e-12);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod multigrid;
pub mod pie;
pub mod runner;
pub mod simulate;
pub mod surrogate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/surrogate.md")]
    mod surrogate {}
    #[doc = include_str!("../../../book/src/multigrid.md")]
    mod multigrid {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
