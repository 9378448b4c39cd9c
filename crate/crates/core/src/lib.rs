//! Channel-separable and star-shaped adversarial generators for two-channel
//! cell images, their training objectives, and evaluation by classifier
//! two-sample tests and latent reconstruction.

pub mod c2st;
pub mod data;
pub mod error;
pub mod latent;
pub mod models;
pub mod objectives;
pub mod render;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
