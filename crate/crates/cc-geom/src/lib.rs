//! Multi-parameter Carnot-Caratheodory geometry, numerically.
//!
//! Graded vector-field systems, scaling charts built from flows, the
//! structure equation for the pulled-back frame, ball volumes and
//! distances, control diagnostics and averaging operators.

pub mod balls;
pub mod chart;
pub mod control;
pub mod error;
pub mod examples;
pub mod flows;
pub mod linalg;
pub mod minors;
pub mod operators;
pub mod quadrature;
pub mod rng;
pub mod scaling;
pub mod system;

pub use error::{GeomError, Result};
