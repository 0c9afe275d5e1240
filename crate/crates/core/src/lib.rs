//! Explicit Dirichlet probability paths on the probability simplex and a
//! non-Markovian denoising sampler built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! - [`simplex`]: simplex points, Gamma/Dirichlet sampling and densities,
//!   categorical distributions and the marginal mixture prior.
//! - [`paths`]: noise schedules, the Dirichlet path and the linear
//!   interpolant (kept for comparison only).
//! - [`voronoi`]: closed-form and Monte-Carlo Voronoi probabilities and
//!   schedule calibration curves.
//! - [`posterior`]: the denoiser abstraction, the exact enumeration
//!   posterior, a dense MLP, a small message-passing network, training and
//!   checkpoints.
//! - [`sampling`]: denoising and corrector kernels, the full sampling loop
//!   and classifier / classifier-free guidance.
//! - [`graph`]: toy graph generators, simplex encoding, statistics and MMD.
//!
//! Monte-Carlo heavy loops go through [`par`], which runs on rayon when the
//! `parallel` feature is enabled and falls back to a plain loop otherwise.
//! Both paths produce bit-identical results for a fixed seed.

pub mod error;
pub mod graph;
pub mod io;
pub mod par;
pub mod paths;
pub mod posterior;
pub mod sampling;
pub mod simplex;
pub mod toy;
pub mod voronoi;

pub use error::{Error, Result};
pub use par::{Execution, SimRng};
