//! Camera image-formation simulation and detection-evaluation toolkit.
//!
//! `camforge-core` models the path from spectral scene irradiance to the
//! digital images a machine-vision camera produces, and provides the
//! evaluation machinery needed to study how camera design choices affect
//! object-detection datasets:
//!
//! * [`scene_io`] — scene irradiance maps, bounding-box labels, and dataset
//!   manifests with lossless on-disk round trips.
//! * [`sensor`] — optics blur, pixel binning, photon-to-electron exposure
//!   with shot/read noise, and ADC quantization, plus presets for a common
//!   automotive sensor at several pixel pitches.
//! * [`exposure`] — auto-exposure metering policies (global,
//!   center-weighted, exposure bracketing) and HDR frame combination.
//! * [`isp`] — minimal post-processing: normalization, bilinear CFA
//!   demosaicing, fixed and adaptive gamma, and dark-level census.
//! * [`variants`] — single-axis dataset variant generation with matched
//!   randomness and label bookkeeping.
//! * [`eval`] — IoU matching, average precision, distance-binned AP, and
//!   cross-dataset generalization matrices.
//! * [`kid`] — kernel inception distance between feature sets with a
//!   block-averaged unbiased MMD^2 estimator.
//!
//! Everything is deterministic: per-pixel noise is drawn from a counter-based
//! generator keyed by `(seed, pixel index)`, so results are bit-identical
//! regardless of thread count. The `parallel` feature (on by default) runs
//! the hot loops on rayon; without it the same code runs sequentially.

#![warn(missing_docs)]

pub mod error;
pub mod eval;
pub mod exposure;
pub mod isp;
pub mod kid;
mod parallel;
pub mod pfm;
pub mod rng;
pub mod scene_io;
pub mod sensor;
pub mod variants;

pub use error::{Error, Result};
pub use scene_io::{BoundingBox, DatasetManifest, LabelSet, SceneIrradiance};
pub use sensor::{ElectronImage, RawFrame, SensorConfig};
