//! The black-box protocol: given a ground-truth stereo clip and a candidate
//! right view, compute every metric and collect them in one report. Also the
//! degradation sweeps and the synthetic scene generator used to exercise it.

mod sweep;
mod synth;

pub use sweep::{
    degrade, sensitivity_sweep, write_curves_csv, CurveRow, DegradationKind, DegradationSpec,
    DegradedInputs,
};
pub use synth::{
    make_synthetic_scene, simulate_prediction, DisparityProfile, SyntheticScene, SCENE_MOTION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{temporal_error, FlowConfig};
use crate::matching::{
    detect_keypoints, match_epipolar, matchability_error, MatchConfig, MatchSet,
};
use crate::media::{
    DisparityMap, EvaluationReport, Frame, MatchCounts, MetricSeries, StereoClip, VideoClip,
};
use crate::quality::{clip_metric, ClipMetric, PatchPsnrConfig, PSNR_CAP};
use crate::stereo::{disparity_error, SgmConfig};

/// Global 3D information handed to the method under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalInfo {
    /// Median ground-truth disparity, for methods conditioned on a scalar.
    MedianDisparity { delta: f64 },
    /// Affine mapping from relative depth to disparity, for warping methods.
    ScaleShift { scale: f64, shift: f64 },
}

impl GlobalInfo {
    /// Lower median of the valid disparities pooled over all maps.
    pub fn median_of(maps: &[DisparityMap]) -> Result<GlobalInfo> {
        let mut all: Vec<f32> = maps.iter().flat_map(|m| m.valid_values()).collect();
        if all.is_empty() {
            return Err(Error::EmptyValidSet(
                "no valid ground-truth disparity".into(),
            ));
        }
        all.sort_by(f32::total_cmp);
        let delta = all[(all.len() - 1) / 2] as f64;
        Ok(GlobalInfo::MedianDisparity { delta })
    }
}

/// Settings of every metric in a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub psnr_cap: f64,
    pub patch: PatchPsnrConfig,
    pub matching: MatchConfig,
    pub sgm: SgmConfig,
    pub flow: FlowConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            psnr_cap: PSNR_CAP,
            patch: PatchPsnrConfig::default(),
            matching: MatchConfig::default(),
            sgm: SgmConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// Inputs of one evaluation: the ground-truth pair, the candidate right view,
/// and per-frame ground-truth disparity (may be empty, which fails only the
/// disparity error).
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub input: StereoClip,
    pub candidate: VideoClip,
    pub gt_disparity: Vec<DisparityMap>,
    pub global_3d_info: Option<GlobalInfo>,
    pub config: ProtocolConfig,
}

impl ProtocolRun {
    /// Checks that the candidate matches the input in length and frame size.
    pub fn new(
        input: StereoClip,
        candidate: VideoClip,
        gt_disparity: Vec<DisparityMap>,
        config: ProtocolConfig,
    ) -> Result<Self> {
        if candidate.len() != input.len() || candidate.dims() != input.left.dims() {
            return Err(Error::ShapeMismatch(format!(
                "candidate has {} frames of {:?}, input has {} frames of {:?}",
                candidate.len(),
                candidate.dims(),
                input.len(),
                input.left.dims()
            )));
        }
        Ok(ProtocolRun {
            input,
            candidate,
            gt_disparity,
            global_3d_info: None,
            config,
        })
    }

    pub fn with_global_info(mut self, info: GlobalInfo) -> Self {
        self.global_3d_info = Some(info);
        self
    }
}

fn series(f: impl FnOnce() -> Result<MetricSeries>) -> MetricSeries {
    f().unwrap_or_else(MetricSeries::failed)
}

fn score_series(metric: ClipMetric, a: &VideoClip, b: &VideoClip) -> MetricSeries {
    series(|| {
        let s = clip_metric(metric, a, b)?;
        Ok(MetricSeries {
            value: Some(s.aggregate),
            per_frame: s.per_frame.into_iter().map(Some).collect(),
            per_frame_mse: s.per_frame_mse,
            ..Default::default()
        })
    })
}

/// Match sets of the left view against the ground-truth and candidate right
/// views, both from the same left keypoints.
pub(crate) fn frame_match_counts(
    left: &Frame,
    gt: &Frame,
    cand: &Frame,
    cfg: &MatchConfig,
) -> Result<MatchCounts> {
    let kps = detect_keypoints(left, cfg.max_keypoints, cfg.nms_radius);
    let m_gt = match_epipolar(&kps, left, gt, cfg)?;
    let m_pred: MatchSet = if gt == cand {
        m_gt.clone()
    } else {
        match_epipolar(&kps, left, cand, cfg)?
    };
    let b = matchability_error(&m_gt, &m_pred);
    Ok(MatchCounts {
        tp: b.n_tp as u64,
        fp: b.n_fp as u64,
        fn_: b.n_fn as u64,
    })
}

/// `(FP + FN) / (TP + FP + FN)`, 0 when nothing matched in either view.
pub fn counts_error(c: &MatchCounts) -> f64 {
    let d = c.tp + c.fp + c.fn_;
    if d == 0 {
        0.0
    } else {
        (c.fp + c.fn_) as f64 / d as f64
    }
}

/// Per-frame match counts over a clip; the error aggregate is the mean of per-frame errors.
pub(crate) fn clip_match_counts(
    left: &VideoClip,
    gt: &VideoClip,
    cand: &VideoClip,
    cfg: &MatchConfig,
) -> Result<Vec<MatchCounts>> {
    if left.len() != cand.len() || gt.len() != cand.len() {
        return Err(Error::ShapeMismatch("clips differ in length".into()));
    }
    left.frames()
        .iter()
        .zip(gt.frames())
        .zip(cand.frames())
        .map(|((l, g), c)| frame_match_counts(l, g, c, cfg))
        .collect()
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs every metric; a metric that fails is recorded with its error and the
/// rest of the report is still produced.
pub fn run_protocol(run: &ProtocolRun) -> EvaluationReport {
    let cfg = &run.config;
    let left = &run.input.left;
    let gt = &run.input.right;
    let cand = &run.candidate;

    let psnr = score_series(ClipMetric::Psnr { cap: cfg.psnr_cap }, gt, cand);
    let ssim = score_series(ClipMetric::Ssim, gt, cand);
    let p_psnr = score_series(ClipMetric::PatchPsnr(cfg.patch), left, cand);

    let (match_error, per_frame_match_counts) =
        match clip_match_counts(left, gt, cand, &cfg.matching) {
            Ok(counts) => {
                let errors: Vec<f64> = counts.iter().map(counts_error).collect();
                let s = MetricSeries {
                    value: Some(mean(&errors)),
                    per_frame: errors.into_iter().map(Some).collect(),
                    ..Default::default()
                };
                (s, counts)
            }
            Err(e) => (MetricSeries::failed(e), Vec::new()),
        };
    let match_counts = (!per_frame_match_counts.is_empty()).then(|| {
        per_frame_match_counts
            .iter()
            .fold(MatchCounts::default(), |a, b| a + *b)
    });

    let disp_err = series(|| {
        if run.gt_disparity.is_empty() {
            return Err(Error::InvalidArgument(
                "no ground-truth disparity supplied".into(),
            ));
        }
        let pair = StereoClip::new(left.clone(), cand.clone())?;
        let r = disparity_error(&pair, &run.gt_disparity, &cfg.sgm)?;
        Ok(MetricSeries {
            error: r
                .value
                .is_none()
                .then(|| "every frame excluded: too few jointly valid pixels".to_string()),
            value: r.value,
            per_frame: r.per_frame,
            excluded_frames: r.excluded,
            ..Default::default()
        })
    });

    let temp_err = series(|| {
        let r = temporal_error(gt, cand, &cfg.flow)?;
        Ok(MetricSeries {
            value: Some(r.value),
            per_frame: r.per_pair.into_iter().map(Some).collect(),
            per_frame_pixels: Some(r.per_pair_pixels),
            ..Default::default()
        })
    });

    EvaluationReport {
        frames: cand.len(),
        psnr,
        ssim,
        p_psnr,
        match_error,
        match_counts,
        per_frame_match_counts,
        disp_err,
        temp_err,
        global_3d_info: run.global_3d_info.clone(),
        config: cfg.clone(),
    }
}
