//! Interaction probabilistic movement primitives with phase estimation and
//! dynamic observation windows.
//!
//! A [`promp::PrompModel`] holds a Gaussian over the stacked basis weights of
//! all human and robot degrees of freedom. Given a stream of human-only
//! samples, the [`pipeline`] slices it into observation windows; for each
//! window it estimates the temporal scaling factor ([`phase`]), picks the most
//! likely task ([`recognition`]), conditions that task's model on the window
//! and blends the resulting robot prediction into the one being executed
//! ([`blending`]). [`metrics`] scores the outcome and [`synthgen`] produces
//! reproducible demonstration sets for the evaluation harness.

pub mod basis;
pub mod blending;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod phase;
pub mod pipeline;
pub mod promp;
pub mod recognition;
pub mod synthgen;

pub use error::{Error, Result};
