//! Desk-scale simulation of a directional-emission photonic-crystal cavity
//! single-photon source.
//!
//! The pipeline runs from a parametric cavity design ([`geometry`]) through a
//! 2D FDTD resonance solver ([`fdtd`]), a Fourier-optics far-field and
//! collection model ([`farfield`]), the Purcell emission model ([`purcell`])
//! and a Monte-Carlo Hanbury-Brown–Twiss simulator ([`photonstats`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod farfield;
pub mod fdtd;
pub mod geometry;
pub mod grid;
pub mod photonstats;
pub mod purcell;
pub mod study;
pub mod units;

pub use grid::Map2;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
