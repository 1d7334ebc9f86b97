//! MGNM: a multimodal graph recommender with dynamic de-redundancy.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: matrices, a CSR sparse type and a reverse-mode tape.
//! * [`graph`]: the user-item interaction graph and the per-user split.
//! * [`local`] and [`global`]: the two propagation branches.
//! * [`losses`]: BPR, the DDR correlation penalty and the weighted total.
//! * [`model`]: parameters and the full forward pass.
//! * [`trainer`], [`eval`]: optimization and full-ranking evaluation.
//! * [`io`], [`config`], [`synth`], [`dataset`], [`cli`]: files and commands.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod global;
pub mod graph;
pub mod io;
pub mod local;
pub mod losses;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/local.md")]
    mod local {}
    #[doc = include_str!("../../../book/src/global.md")]
    mod global {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
