//! Object pose and size estimation from RGB-D crops with a spherical CNN
//! and two decoders.
//!
//! A segmented RGB-D crop is converted into spherical signals, encoded by two
//! streams of zonal spherical convolutions joined by fusion modules, and
//! decoded twice: explicitly into `(R, t, s)` and implicitly into canonical
//! point coordinates, from which a pose follows by similarity alignment. At
//! test time the encoder can be refined so that the two decoders agree.

pub mod error;
pub mod cli;
pub mod geometry;
pub mod metrics;
mod linalg;
pub mod model;
pub mod nn;
pub mod sphere;
pub mod synthdata;

pub use error::{Error, Result};
