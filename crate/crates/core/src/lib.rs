//! Caption-pool dataset enhancement.
//!
//! Every image of an annotation file is captioned by a pool of multimodal
//! model endpoints; each generated caption is sheared to a token budget and
//! its first complete clause, and the raw plus generated captions are merged
//! into an enhanced dataset. Corpus diagnostics live in [`stats`].

pub mod config;
pub mod dataset;
pub mod fixture;
pub mod gateway;
pub mod image;
pub mod orchestrator;
pub mod shear;
pub mod stats;
