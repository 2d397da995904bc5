//! Image memory with perturbed encoding and nearest-neighbor recall.
//!
//! Images are perturbed ([`perturb`]), projected into a latent space
//! ([`encoder`]) and stored in an exact k-d tree ([`store`]). Recall compares
//! an unperturbed encoding against memory; [`tasks`] builds the forced-choice
//! and repeat-detection protocols on top of that distance, and
//! [`experiment`] wires everything into reproducible runs with JSON reports.

pub mod error;
pub mod raster;
pub mod perturb;
pub mod encoder;
pub mod store;
pub mod dataset;
pub mod tasks;
pub mod analysis;
pub mod experiment;

pub use error::{Error, Result};
