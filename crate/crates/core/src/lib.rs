//! Online multi-speaker localization and tracking with a small microphone array.
//!
//! The processing chain runs frame by frame: an STFT front end, direct-path relative
//! transfer function estimation per bin, a mixture-weight localizer over a fixed grid of
//! azimuths, and a variational tracker that turns localization peaks into persistent,
//! identity-carrying tracks.

pub mod angle;
pub mod audio;
pub mod config;
pub mod dprtf;
pub mod error;
pub mod eval;
pub mod io;
pub mod localizer;
pub mod pipeline;
pub mod runner;
pub mod simulator;
pub mod steering;
pub mod stft;
pub mod tracker;

pub use error::{Error, Result};
