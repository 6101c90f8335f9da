//! Human-object interaction post-processing toolkit: part-level spatial
//! encoding, a small interactiveness/action scoring head, exclusive-object
//! regrouping, and role mAP evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod formats;
pub mod geometry;
pub mod head;
pub mod pipeline;
pub mod regroup;
pub mod scenes;
pub mod spatial;
pub mod visualize;

pub use error::{Error, Result};
