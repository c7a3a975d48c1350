//! Character segmentation of text-line images framed as binary semantic
//! segmentation over columns.
//!
//! A fully convolutional network maps a `1 × H × W` binarized text line to
//! `W` probabilities that a column is a character margin. Post-processing
//! turns those into character segments, which are scored against ground
//! truth with a coverage-threshold matching metric. Training data is
//! synthesized from a procedural glyph atlas with simulated disturbance.

pub mod config;
pub mod error;
pub mod evalmetric;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod raster;
pub mod segment;
pub mod segmenter;
pub mod synth;
pub mod trainloop;

pub use error::{Error, Result};
pub use segment::Segment;
