//! Composite-field pose detection, tracking and evaluation.
//!
//! The crate covers the full loop around a (hypothetical) field-predicting
//! network without ever running one: ground-truth poses are encoded into
//! CIF/CAF/TCAF field tensors, field tensors are decoded back into scored
//! pose instances with a greedy frontier algorithm, poses are associated
//! across frames through temporal fields, and results are evaluated with
//! OKS-based average precision and CLEAR-MOT metrics. Encode→decode round
//! trips make every stage testable end to end.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fields;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tracker;

pub use error::{Error, Result};
