//! Frames, clips, disparity maps and evaluation reports, plus their on-disk
//! formats: numbered 8-bit PNG sequences, single-channel PFM and JSON.

mod clip;
mod disparity;
mod frame;
mod report;

pub use clip::{
    load_clip, load_disparity_dir, load_frame, save_clip, save_disparity_dir, save_frame,
    save_mask_dir, StereoClip, VideoClip,
};
pub use disparity::DisparityMap;
pub(crate) use frame::check_same_shape;
pub use frame::Frame;
pub use report::{load_report, save_report, EvaluationReport, MatchCounts, MetricSeries};
