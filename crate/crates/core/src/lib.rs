//! Segmentation of mobile users by installed-app profile, with per-cluster
//! advert interaction indices and cohort association rules.
//!
//! The pipeline runs [`ingest`] → [`features`] → [`clustering`] →
//! [`metrics`] / [`mining`]. [`synth`] generates populations with planted
//! structure for testing all of them.

pub mod clustering;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod mining;
pub mod synth;
pub(crate) mod util;
