//! Indoor scene recognition from object features and object relations.
//!
//! The pipeline turns a backbone feature map and a segmentation score map
//! into per-object feature vectors ([`ofam`]), relates objects to each other
//! with cascaded object attention blocks ([`oam`]), collapses the object axis
//! with a strip depthwise + pointwise convolution ([`gram`]) and classifies
//! the resulting scene vector ([`classifier`]). Everything runs on the small
//! reverse-mode core in [`numcore`]. [`costmodel`] gives closed-form
//! parameter and FLOP counts for every layer variant, and [`dataio`] handles
//! the binary tensor container and the synthetic co-occurrence benchmark.

pub mod classifier;
pub mod cli;
pub mod costmodel;
pub mod dataio;
mod error;
pub mod gram;
pub mod numcore;
pub mod oam;
pub mod ofam;

pub use error::{OtsError, Result};
