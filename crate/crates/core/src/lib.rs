//! Reference priors and integrated likelihoods for the length scale of
//! isotropic Gaussian-process kriging, with quadrature of the marginal
//! posterior and numerical checks of its tail behaviour.
//!
//! The guide lives in `book/`; its snippets run as doctests.

pub mod asymptotics;
pub mod basis;
pub mod cli;
pub mod bessel;
pub mod dense;
pub mod design;
pub mod error;
pub mod kernel;
pub mod likelihood;
pub mod io;
pub mod model;
pub mod posterior;
pub mod prior;
pub mod real;
pub mod spectral;
pub mod suite;

pub use error::{Error, Result};

// the book snippets run under `cargo test --doc`
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/prior.md")]
    struct Prior;
    #[doc = include_str!("../../../book/src/posterior.md")]
    struct Posterior;
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    struct Diagnostics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
