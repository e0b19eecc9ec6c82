//! Joint estimation of dense optical flow and reconstruction of missing
//! regions in image sequences.
//!
//! The library couples a TV-regularized spatial term, a flow-line
//! brightness/gradient constancy term, and a robust flow regularizer into
//! one energy, minimized by explicit gradient descent interleaved with
//! coarse-to-fine motion estimation. See [`multires::run_pipeline`] for the
//! end-to-end entry point, [`flow::solve_flow`] for motion estimation at a
//! single resolution, and [`solver::inpaint_level`] for the image descent.

pub mod degrade;
pub mod energy;
pub mod error;
pub mod flow;
pub mod grid;
mod halfpoint;
pub mod metrics;
pub mod multires;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
