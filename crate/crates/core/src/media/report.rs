use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{GlobalInfo, ProtocolConfig};

/// One metric over a clip: the aggregate, its per-frame inputs, and any failure note.
///
/// `value` is `None` when the metric could not be computed; `error` then says why.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries {
    pub value: Option<f64>,
    pub per_frame: Vec<Option<f64>>,
    /// Per-frame mean squared error, for the PSNR-style metrics pooled in MSE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame_mse: Option<Vec<f64>>,
    /// Per-frame pixel counts, for metrics pooled over pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame_pixels: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_frames: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricSeries {
    pub fn failed(error: impl ToString) -> Self {
        MetricSeries {
            error: Some(error.to_string()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Everything one protocol run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: usize,
    pub psnr: MetricSeries,
    pub ssim: MetricSeries,
    pub p_psnr: MetricSeries,
    pub match_error: MetricSeries,
    /// Counts summed over frames.
    pub match_counts: Option<MatchCounts>,
    pub per_frame_match_counts: Vec<MatchCounts>,
    pub disp_err: MetricSeries,
    pub temp_err: MetricSeries,
    pub global_3d_info: Option<GlobalInfo>,
    pub config: ProtocolConfig,
}

impl EvaluationReport {
    /// `(metric name, error)` for every metric that failed.
    pub fn failures(&self) -> Vec<(&'static str, &str)> {
        [
            ("psnr", &self.psnr),
            ("ssim", &self.ssim),
            ("p_psnr", &self.p_psnr),
            ("match_error", &self.match_error),
            ("disp_err", &self.disp_err),
            ("temp_err", &self.temp_err),
        ]
        .into_iter()
        .filter_map(|(name, s)| s.error.as_deref().map(|e| (name, e)))
        .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn save_report(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvaluationReport {
        EvaluationReport {
            frames: 16,
            psnr: MetricSeries {
                value: Some(26.1),
                per_frame: (0..16).map(|i| Some(20.0 + i as f64 / 3.0)).collect(),
                per_frame_mse: Some((0..16).map(|i| 0.01 / (i as f64 + 1.0)).collect()),
                ..Default::default()
            },
            ssim: MetricSeries::default(),
            p_psnr: MetricSeries::default(),
            match_error: MetricSeries::failed("no keypoints"),
            match_counts: Some(MatchCounts {
                tp: 3,
                fp: 1,
                fn_: 2,
            }),
            per_frame_match_counts: vec![],
            disp_err: MetricSeries {
                value: Some(0.1 + 0.2),
                per_frame: vec![Some(0.1 + 0.2), None],
                excluded_frames: vec![1],
                ..Default::default()
            },
            temp_err: MetricSeries::default(),
            global_3d_info: Some(GlobalInfo::MedianDisparity { delta: 4.5 }),
            config: ProtocolConfig::default(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let r = report();
        save_report(&r, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("26.1"));
        assert!(text.contains("\"fn\": 2"));
        let back = load_report(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            back.disp_err.value.unwrap().to_bits(),
            (0.1f64 + 0.2).to_bits()
        );
        let per_frame = serde_json::from_str::<serde_json::Value>(&text).unwrap()["psnr"]
            ["per_frame"]
            .as_array()
            .unwrap()
            .len();
        assert_eq!(per_frame, 16);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = report();
        assert!(matches!(
            save_report(&r, "/nonexistent-dir/sub/report.json"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn failures_lists_failed_metrics() {
        assert_eq!(report().failures(), vec![("match_error", "no keypoints")]);
    }
}
