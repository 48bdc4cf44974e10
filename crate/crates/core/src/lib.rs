//! Spectral computing toolkit for two-dimensional incompressible flow.
//!
//! The crate couples a pseudo-spectral Navier-Stokes solver with a space-time
//! Fourier neural operator and refines the operator's predictions by
//! minimizing a negative Sobolev norm of the PDE residual.

pub mod autodiff;
pub mod backend;
pub mod error;
pub mod fft;
pub mod grid;
pub mod norms;
pub mod timestep;
pub mod train;
pub mod datagen;
pub mod io;
pub mod model;
pub mod residual;
pub mod config;
pub mod cli;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/finetune.md")]
    mod finetune {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
