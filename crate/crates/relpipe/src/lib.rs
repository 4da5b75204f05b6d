//! Human-centric visual relationship prediction, downstream of the neural
//! networks: object labels are clustered into pseudo-label groups by their
//! relation-frequency distributions, each human-object candidate pair is
//! described by box geometry, its object's group, and robust masked depth
//! statistics, and every pair is routed to either a frequency-based or a
//! gradient-boosted relation predictor. Predictions are scored with
//! IoU-thresholded relation accuracy.
//!
//! Instance masks, boxes, class labels, and depth maps are inputs; no neural
//! inference happens here.

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod eval;
pub mod features;
pub mod par;
pub mod pipeline;
pub mod predict;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
