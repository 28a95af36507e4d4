//! Evaluation toolkit for monocular-to-stereo video conversion.
//!
//! Reads and writes frame sequences and disparity maps, synthesizes views by
//! forward warping, and scores a generated right view for image quality,
//! stereo fidelity, geometric consistency and temporal stability. Also holds a
//! numerical implementation of row-constrained cross-attention.

pub mod attention;
pub mod error;
pub mod flow;
pub mod harness;
pub mod matching;
pub mod media;
pub mod plane;
pub mod quality;
pub mod stereo;
pub mod warp;

pub use error::{Degeneracy, Error, Result};
pub use media::{DisparityMap, EvaluationReport, Frame, StereoClip, VideoClip};
