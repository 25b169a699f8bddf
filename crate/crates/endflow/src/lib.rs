//! Measure transport on 1D and 2D model manifolds with finitely many ends.
//!
//! The library works with discretized densities (volume forms) and sampled
//! diffeomorphisms on seven model domains: interval, circle, rectangle, torus,
//! line, half line, and cylinder. Noncompact domains are truncated to a window
//! [-T, T]; behavior beyond the window is carried by analytic tail models on
//! fields and by collar-shift end behavior on maps.
//!
//! Main capabilities, bottom to top:
//! - regions, end sets, and exhaustions by nested slabs (`domain`)
//! - masses, the transfer functional J, pushforwards (`fields`)
//! - volume-form equalization by flow along a primitive (`moser`)
//! - end charges of diffeomorphisms (`ends`)
//! - engulfing mass transfer, component balancing, and the two top-level
//!   pipelines: volume-form matching and end-charge realization (`transfer`)

pub mod domain;
pub mod ends;
mod err;
pub mod fields;
pub mod io;
pub mod moser;
pub mod report;
pub mod transfer;
pub mod util;
pub mod verify;

pub use err::{Error, ErrorClass, Result};
