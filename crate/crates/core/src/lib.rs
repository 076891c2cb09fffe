//! Tail chains of heavy-tailed Markov chains.
//!
//! The crate samples forward, backward and back-and-forth tail chains,
//! computes adjoint measures exactly on atomic laws, and checks the resulting
//! identities against conditioned simulations of concrete recurrences.
//!
//! Modules, bottom-up:
//!
//! * [`measures`]: polar decomposition, Pareto radii, atomic and spectral measures.
//! * [`admissible`]: admissibility and the adjoint involution on atomic measures.
//! * [`diagnostics`]: energy distance, permutation tests, confidence intervals.
//! * [`engine`]: simulation of `X_t = Φ(X_{t-1}, ε_t)` and extreme windows.
//! * [`models`]: Kesten orthogonal recurrences and heavy-tailed AR(1).
//! * [`chain`]: tail kernels, back-and-forth tail chains, time-change checks.

pub mod admissible;
pub mod chain;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod measures;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub use measures::{Atom, AtomMeasure, SpectralMeasure, TailIndex, UnitVector};
pub use rng::Stream;
