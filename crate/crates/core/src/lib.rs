//! Finite-difference simulator and analysis toolkit for the
//! alpha-regularized harmonic map flow from a flat 2-torus into a round
//! sphere: time stepping, energy/monotonicity diagnostics, bubble-tree
//! decomposition, and the annulus surgery constructions.

pub mod bubbletree;
pub mod diagnostics;
pub mod flow;
pub mod geometry;
pub mod runner;
