//! Training-free guided diffusion sampling with geometric-moment features.
//!
//! The crate is organised bottom-up:
//!
//! * [`moments`] – moment bases, raw and central moments and their adjoints.
//! * [`schedule`], [`sampler`] – noise schedules, forward noising, DDPM/DDIM steps.
//! * [`score`] – noise-prediction models: closed-form Gaussian mixtures, the
//!   empirical-data denoiser and a small trainable MLP.
//! * [`features`], [`deep`] – feature extractors used as guidance signals.
//! * [`guidance`] – classifier and feature guidance with per-step recurrence.
//! * [`metrics`] – fidelity and diversity scores.
//! * [`pgm`], [`checkpoint`] – file formats.
//! * [`verify`] – self-check suites.

pub mod checkpoint;
pub mod deep;
pub mod error;
pub mod features;
pub mod guidance;
pub mod image;
pub mod metrics;
pub mod moments;
pub mod pgm;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod verify;

pub use error::{Error, Result};
pub use image::Image;
pub use rng::NoiseRng;
