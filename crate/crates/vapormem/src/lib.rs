//! Caesium vapour physics: optical pumping under radiation trapping, a 1-D
//! Raman memory solver with four-wave-mixing gain, Voigt spectroscopy fitting
//! and Fourier-domain diffusion analysis.
//!
//! Units follow one convention throughout: frequencies and linewidths are
//! ordinary (not angular) frequencies in GHz, times in ns unless a field name
//! says otherwise, temperatures in K, lengths in cm for cells.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atoms;
pub mod constants;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod lsq;
pub mod memory;
pub mod pumping;
pub mod spectrofit;
pub mod voigt;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/atoms.md")]
pub mod book_atoms {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pumping.md")]
pub mod book_pumping {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/memory.md")]
pub mod book_memory {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/spectroscopy.md")]
pub mod book_spectroscopy {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/diffusion.md")]
pub mod book_diffusion {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/files.md")]
pub mod book_files {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
