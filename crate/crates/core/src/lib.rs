//! Person identification from activity videos.
//!
//! A student video network learns an identity (biometric) feature and an
//! appearance feature from RGB clips. A frozen teacher trained only on binary
//! silhouettes supplies appearance-free soft targets, and an elastically
//! distorted copy of each clip acts as a hard negative for the biometric
//! feature while remaining a positive for the appearance feature. A jointly
//! trained activity head provides an activity prior at retrieval time.
//!
//! Modules follow the pipeline: [`datapipe`] → [`augmentation`] → [`model`]
//! and [`losses`] → [`train`] → [`evaluation`] → [`reporting`], with
//! [`synth`] providing a procedurally rendered world where identity,
//! appearance and activity are controlled independently.

pub mod augmentation;
pub mod checkpoint;
pub mod clip;
pub mod datapipe;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod reporting;
pub mod synth;
pub mod train;

pub use clip::VideoClip;
pub use error::{Error, Result};
