//! Evaluation toolkit for deep-ensemble hand segmentation under in- and
//! out-of-distribution test conditions.
//!
//! The pipeline: K learner probability maps are averaged into one map
//! ([`fusion`]), thresholded into a hand mask, and scored with IoU and
//! predictive entropy ([`metrics`]). Each test image carries condition tags
//! that a training profile maps to ID or OOD ([`taxonomy`]). The
//! [`harness`] runs manifests end to end and groups the results into
//! per-condition reports.
//!
//! Around that core: [`ingest`] turns annotation exports and raw frames into
//! masks and balanced manifests, [`synth`] generates seeded scenes with a
//! scalar reference implementation of every metric, and [`render`] draws
//! entropy heatmaps and error overlays. [`cli`] wires it all to the `handuq`
//! binary.

pub mod cli;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod par;
pub mod raster;
pub mod render;
mod rng;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
