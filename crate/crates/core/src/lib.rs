//! Digital twin of a highway bridge span.
//!
//! Vision detections are turned into traffic densities, propagated through a
//! macroscopic traffic model, converted into a stress proxy and then into
//! fatigue damage and a reliability index, with weather acting as a
//! deterioration multiplier. A random forest maps per-window features to
//! fatigue increments and a Monte Carlo layer propagates input uncertainty.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod export;
pub mod fatigue;
pub mod ingestion;
pub mod ml;
pub mod montecarlo;
pub mod numfmt;
pub mod pipeline;
pub mod reliability;
pub mod seeding;
pub mod traffic;
