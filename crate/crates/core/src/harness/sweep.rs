use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{clip_match_counts, counts_error, mean, ProtocolRun};
use crate::error::{Error, Result};
use crate::media::{Frame, VideoClip};
use crate::quality::{clip_metric, ClipMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    HorizontalShift,
    GaussianBlur,
}

impl FromStr for DegradationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" | "horizontal_shift" => Ok(DegradationKind::HorizontalShift),
            "blur" | "gaussian_blur" => Ok(DegradationKind::GaussianBlur),
            _ => Err(Error::InvalidArgument(format!("unknown degradation {s:?}"))),
        }
    }
}

/// A degradation and the levels to apply it at: pixels for shifts, sigma for blur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub levels: Vec<f64>,
}

impl DegradationSpec {
    /// Level 0 is allowed for both kinds and means no degradation.
    pub fn new(kind: DegradationKind, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("no degradation levels".into()));
        }
        for &l in &levels {
            let ok = match kind {
                DegradationKind::HorizontalShift => l >= 0.0 && l.fract() == 0.0,
                DegradationKind::GaussianBlur => l >= 0.0 && l.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "invalid {kind:?} level {l}"
                )));
            }
        }
        Ok(DegradationSpec { kind, levels })
    }
}

/// One point of a sensitivity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub level: f64,
    pub metric: String,
    pub value: f64,
}

/// The clips a degraded comparison is computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedInputs {
    pub left: VideoClip,
    pub gt_right: VideoClip,
    pub candidate: VideoClip,
}

/// Moves content `k` columns to the right; the vacated columns are zero.
fn shift_right(f: &Frame, k: usize) -> Frame {
    Frame::from_fn(f.height(), f.width(), |u, v| {
        if u >= k {
            f.pixel(u - k, v)
        } else {
            [0.0; 3]
        }
    })
}

fn blur(f: &Frame, sigma: f32) -> Result<Frame> {
    Frame::from_channels(&f.channels().map(|c| c.gaussian_blur(sigma)))
}

/// Applies one degradation level to the candidate.
///
/// A shift by `k` moves the candidate right and then crops all three clips to
/// columns `[k, W)`, so the vacated columns never enter a metric. Blur uses a
/// Gaussian truncated at `3 sigma` and leaves the other clips untouched.
pub fn degrade(run: &ProtocolRun, kind: DegradationKind, level: f64) -> Result<DegradedInputs> {
    let left = &run.input.left;
    let gt = &run.input.right;
    let cand = &run.candidate;
    match kind {
        DegradationKind::HorizontalShift => {
            let k = level as usize;
            let w = cand.dims().1;
            if k >= w {
                return Err(Error::InvalidArgument(format!(
                    "shift {k} is not below the width {w}"
                )));
            }
            let crop = |c: &VideoClip| c.map_frames(|f| f.crop_columns(k, w));
            Ok(DegradedInputs {
                left: crop(left)?,
                gt_right: crop(gt)?,
                candidate: cand.map_frames(|f| shift_right(f, k).crop_columns(k, w))?,
            })
        }
        DegradationKind::GaussianBlur => {
            let frames = cand
                .frames()
                .iter()
                .map(|f| blur(f, level as f32))
                .collect::<Result<Vec<_>>>()?;
            Ok(DegradedInputs {
                left: left.clone(),
                gt_right: gt.clone(),
                candidate: VideoClip::new(frames)?.with_fps(cand.fps),
            })
        }
    }
}

pub const CURVE_METRICS: [&str; 4] = ["psnr", "p_psnr", "ssim", "match_error"];

/// Recomputes PSNR, P-PSNR, SSIM and the matchability error at each level.
pub fn sensitivity_sweep(run: &ProtocolRun, spec: &DegradationSpec) -> Result<Vec<CurveRow>> {
    let cfg = &run.config;
    let mut rows = Vec::with_capacity(spec.levels.len() * CURVE_METRICS.len());
    for &level in &spec.levels {
        let d = degrade(run, spec.kind, level)?;
        let psnr = clip_metric(
            ClipMetric::Psnr { cap: cfg.psnr_cap },
            &d.gt_right,
            &d.candidate,
        )?;
        let p_psnr = clip_metric(ClipMetric::PatchPsnr(cfg.patch), &d.left, &d.candidate)?;
        let ssim = clip_metric(ClipMetric::Ssim, &d.gt_right, &d.candidate)?;
        let counts = clip_match_counts(&d.left, &d.gt_right, &d.candidate, &cfg.matching)?;
        let errors: Vec<f64> = counts.iter().map(counts_error).collect();
        let values = [
            psnr.aggregate,
            p_psnr.aggregate,
            ssim.aggregate,
            mean(&errors),
        ];
        for (metric, value) in CURVE_METRICS.iter().zip(values) {
            rows.push(CurveRow {
                level,
                metric: metric.to_string(),
                value,
            });
        }
    }
    Ok(rows)
}

/// Writes `level,metric,value` rows with a header.
pub fn write_curves_csv(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{make_synthetic_scene, run_protocol, ProtocolConfig};

    fn run() -> ProtocolRun {
        let s = make_synthetic_scene(5, 96, 96, 1, &"two_plane:0,6".parse().unwrap()).unwrap();
        ProtocolRun::new(
            s.stereo.clone(),
            s.stereo.right.clone(),
            s.disparity,
            ProtocolConfig::default(),
        )
        .unwrap()
    }

    fn value(rows: &[CurveRow], level: f64, metric: &str) -> f64 {
        rows.iter()
            .find(|r| r.level == level && r.metric == metric)
            .unwrap()
            .value
    }

    #[test]
    fn level_zero_is_identity_for_both_kinds() {
        let run = run();
        for kind in [
            DegradationKind::HorizontalShift,
            DegradationKind::GaussianBlur,
        ] {
            let d = degrade(&run, kind, 0.0).unwrap();
            assert_eq!(d.candidate, run.candidate);
            assert_eq!(d.left, run.input.left);
        }
        let base = run_protocol(&run);
        let rows = sensitivity_sweep(
            &run,
            &DegradationSpec::new(DegradationKind::HorizontalShift, vec![0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(value(&rows, 0.0, "psnr"), base.psnr.value.unwrap());
        assert_eq!(value(&rows, 0.0, "p_psnr"), base.p_psnr.value.unwrap());
        assert_eq!(value(&rows, 0.0, "ssim"), base.ssim.value.unwrap());
        assert_eq!(
            value(&rows, 0.0, "match_error"),
            base.match_error.value.unwrap()
        );
    }

    #[test]
    fn shift_crops_all_views() {
        let run = run();
        let d = degrade(&run, DegradationKind::HorizontalShift, 5.0).unwrap();
        assert_eq!(d.candidate.dims(), (96, 91));
        assert_eq!(d.left.dims(), (96, 91));
        // candidate column j now holds original column j
        let c = &run.candidate.frames()[0];
        assert_eq!(d.candidate.frames()[0].pixel(0, 3), c.pixel(0, 3));
        assert_eq!(d.gt_right.frames()[0].pixel(0, 3), c.pixel(5, 3));
        assert!(degrade(&run, DegradationKind::HorizontalShift, 96.0).is_err());
    }

    #[test]
    fn spec_validation_and_parsing() {
        use DegradationKind::*;
        assert!(DegradationSpec::new(HorizontalShift, vec![]).is_err());
        assert!(DegradationSpec::new(HorizontalShift, vec![1.5]).is_err());
        assert!(DegradationSpec::new(GaussianBlur, vec![-1.0]).is_err());
        assert_eq!("shift".parse::<DegradationKind>().unwrap(), HorizontalShift);
        assert_eq!("blur".parse::<DegradationKind>().unwrap(), GaussianBlur);
    }

    #[test]
    fn blur_lowers_psnr_and_csv_roundtrip() {
        let run = run();
        let spec =
            DegradationSpec::new(DegradationKind::GaussianBlur, vec![0.0, 1.0, 2.0]).unwrap();
        let rows = sensitivity_sweep(&run, &spec).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(value(&rows, 1.0, "psnr") > value(&rows, 2.0, "psnr"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_curves_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("level,metric,value\n0.0,psnr,100.0\n"));
        let back: Vec<CurveRow> = csv::Reader::from_path(&p)
            .unwrap()
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(back, rows);
    }
}
