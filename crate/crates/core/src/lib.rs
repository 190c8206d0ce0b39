//! Core algorithms for dual-sniffer WiFi CSI robot activity recognition.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std` (an allocator is required). File formats, the
//! training driver and the command line live in the `robofi` companion crate.
//!
//! Pipeline overview:
//!
//! 1. [`capture`] decodes raw `RFSC` capture streams into packets.
//! 2. [`align`] merges the two sniffer streams onto a common timestamp grid.
//! 3. [`preprocess`] prunes pilot/null subcarriers, extracts amplitudes,
//!    decimates, normalizes and cuts windows into square patches.
//! 4. [`models`] holds the single-stream ViT encoder and the dual-stream
//!    classifier, built on the reverse-mode engine in [`autodiff`].
//! 5. [`train`] has the optimizer, early stopping, splits and metrics.
//! 6. [`synth`] generates labelled synthetic captures from arm trajectories.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod align;
pub mod autodiff;
pub mod capture;
pub mod models;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod train;
pub mod types;

pub use types::{
    ActivityLabel, AmplitudeWindow, ComplexValue, CsiMatrix, Location, Sample, SampleMeta,
    SnifferId, Source, Velocity, Violation, NUM_CLASSES,
};
