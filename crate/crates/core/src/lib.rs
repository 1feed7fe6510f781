//! Monocular driving-behavior analysis.
//!
//! The crate is organised bottom-up:
//!
//! - [`imagekit`]: float image buffers, color conversion, convolution,
//!   steerable filters, pyramids and Netpbm I/O.
//! - [`flow`]: robust (Charbonnier) coarse-to-fine dense optical flow.
//! - [`geometry`]: pinhole projection, ground-plane back-projection,
//!   inverse perspective mapping and distance estimation.
//! - [`lanes`]: bird's-eye-view lane detection with RANSAC parabola fitting.
//! - [`detection`]: HOG rigid-template scoring, JSONL detection ingestion
//!   and greedy IoU tracking.
//! - [`behavior`]: feature fusion and the rule-based rash-driving verdict.
//! - [`pipeline`]: the frame-sequence driver behind the `rashcam` binary.

pub mod behavior;
pub mod detection;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod imagekit;
pub mod config;
pub mod kv;
pub mod lanes;
pub mod overlay;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
