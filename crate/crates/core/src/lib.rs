//! Directly modulated decoy-state BB84 transmitter.
//!
//! Interference model of the gain-switched source, encoding and waveform
//! scheduling, a detector-level link simulator, decoy-state key rates and
//! statistical checks of the random-pulse leakage.

pub mod cli;
pub mod config;
pub mod decoy;
pub mod encoding;
pub mod error;
pub mod linksim;
pub mod photonics;
pub mod rng;
pub mod secprops;

pub use config::RunConfig;
pub use encoding::{Basis, Bit, EncodingSymbol, IntensityClass, PhasePair, WaveformSchedule};
pub use error::{Error, Result};
pub use linksim::{DecoyIntensities, LinkParams};
pub use photonics::{CoherentAmplitude, Phase};
