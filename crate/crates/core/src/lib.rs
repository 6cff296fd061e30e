//! Exact-score diffusion on point masses and Gaussians: noise schedules,
//! posteriors, reverse dynamics, fixed-point trees, conditional-entropy rates
//! and a twenty-questions game. The guide in `book/` walks through each
//! module.

pub mod discretegame;
pub mod dynamics;
pub mod error;
pub mod fixedpoints;
pub mod infotheory;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod score;

pub use error::{Error, Result};

/// Shortest decimal string that parses back to the same `f64`; switches to
/// exponent notation for very large or small magnitudes. Every CSV writer
/// uses it so outputs are reproducible bit for bit.
pub fn float(v: f64) -> String {
    format!("{v:?}")
}

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/score.md")]
    mod score {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/fixedpoints.md")]
    mod fixedpoints {}
    #[doc = include_str!("../../../book/src/infotheory.md")]
    mod infotheory {}
    #[doc = include_str!("../../../book/src/discretegame.md")]
    mod discretegame {}
}
