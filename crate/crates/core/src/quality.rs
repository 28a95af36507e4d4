//! Full-reference quality metrics (PSNR, SSIM) and the epipolar patch-wise
//! PSNR used to judge left/right photometric consistency.
//!
//! Metrics operate on RGB samples in `[0, 1]` directly, averaging over channels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{check_same_shape, Frame, VideoClip};

/// dB value reported when two signals are identical.
pub const PSNR_CAP: f64 = 100.0;

/// Anything made of `[0, 1]` samples that PSNR can be taken over.
pub trait Samples {
    /// `(frames, height, width)`.
    fn extent(&self) -> (usize, usize, usize);
    fn sample_slices(&self) -> Vec<&[f32]>;
}

impl Samples for Frame {
    fn extent(&self) -> (usize, usize, usize) {
        (1, self.height(), self.width())
    }
    fn sample_slices(&self) -> Vec<&[f32]> {
        vec![self.data()]
    }
}

impl Samples for VideoClip {
    fn extent(&self) -> (usize, usize, usize) {
        let (h, w) = self.dims();
        (self.len(), h, w)
    }
    fn sample_slices(&self) -> Vec<&[f32]> {
        self.frames().iter().map(|f| f.data()).collect()
    }
}

/// Mean squared error over every sample.
pub fn mse<T: Samples + ?Sized>(a: &T, b: &T) -> Result<f64> {
    if a.extent() != b.extent() {
        return Err(Error::ShapeMismatch(format!(
            "mse: {:?} vs {:?}",
            a.extent(),
            b.extent()
        )));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (x, y) in a.sample_slices().into_iter().zip(b.sample_slices()) {
        sum += x
            .iter()
            .zip(y)
            .map(|(p, q)| {
                let d = (*p - *q) as f64;
                d * d
            })
            .sum::<f64>();
        n += x.len();
    }
    Ok(sum / n.max(1) as f64)
}

/// `10 log10(1 / mse)` for unit-peak signals, capped at `cap`.
pub fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        cap
    } else {
        (10.0 * (1.0 / mse).log10()).min(cap)
    }
}

pub fn psnr<T: Samples + ?Sized>(a: &T, b: &T, cap: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, cap))
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Separable "valid" filtering: only positions where the whole kernel fits.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for v in 0..h {
        let row = &data[v * w..(v + 1) * w];
        for u in 0..ow {
            tmp[v * ow + u] = k.iter().zip(&row[u..u + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (v, dst) in out.chunks_exact_mut(ow).enumerate() {
        for (i, kv) in k.iter().enumerate() {
            for (o, t) in dst.iter_mut().zip(&tmp[(v + i) * ow..(v + i + 1) * ow]) {
                *o += kv * t;
            }
        }
    }
    (out, oh, ow)
}

/// Windowed SSIM with an 11x11 Gaussian window (sigma 1.5) and
/// `C1 = 0.01^2`, `C2 = 0.03^2`, averaged over channels and all windows
/// lying fully inside the image.
/// 11-tap Gaussian in double precision, normalized to unit sum.
fn ssim_kernel() -> Vec<f64> {
    let sigma = SSIM_SIGMA;
    let k: Vec<f64> = (-5..=5i32)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|x| x / sum).collect()
}

pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same_shape(a, b, "ssim")?;
    let k = ssim_kernel();
    let (h, w) = a.dims();
    if h < k.len() || w < k.len() {
        return Err(Error::TooSmall(format!(
            "ssim needs at least {0}x{0}, got {w}x{h}",
            k.len()
        )));
    }
    let total: f64 = (0..Frame::CHANNELS)
        .into_par_iter()
        .map(|c| {
            let x: Vec<f64> = a
                .data()
                .iter()
                .skip(c)
                .step_by(3)
                .map(|v| *v as f64)
                .collect();
            let y: Vec<f64> = b
                .data()
                .iter()
                .skip(c)
                .step_by(3)
                .map(|v| *v as f64)
                .collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            let (mx, _, _) = filter_valid(&x, h, w, &k);
            let (my, _, _) = filter_valid(&y, h, w, &k);
            let (sxx, _, _) = filter_valid(&xx, h, w, &k);
            let (syy, _, _) = filter_valid(&yy, h, w, &k);
            let (sxy, _, _) = filter_valid(&xy, h, w, &k);
            let n = mx.len();
            let mut acc = 0.0;
            for i in 0..n {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cxy = sxy[i] - ux * uy;
                acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            }
            acc / n as f64
        })
        .sum();
    Ok(total / Frame::CHANNELS as f64)
}

/// Tiling and search parameters for [`patch_psnr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPsnrConfig {
    pub patch: usize,
    pub stride: usize,
    /// Horizontal search radius in pixels along the row.
    pub search_range: usize,
    pub psnr_cap: f64,
}

impl Default for PatchPsnrConfig {
    fn default() -> Self {
        PatchPsnrConfig {
            patch: 16,
            stride: 16,
            search_range: 32,
            psnr_cap: PSNR_CAP,
        }
    }
}

impl PatchPsnrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 || !self.psnr_cap.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad patch psnr config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Best-match MSE of every left patch, in tiling order.
///
/// Each `patch x patch` block of `left` is compared against blocks of
/// `right` on the same rows, shifted horizontally by at most
/// `search_range`. Offsets that push the block out of the image are skipped.
/// The lowest SSD wins; ties go to the smaller `|offset|`, then the negative one.
pub fn patch_best_mses(left: &Frame, right: &Frame, cfg: &PatchPsnrConfig) -> Result<Vec<f64>> {
    check_same_shape(left, right, "patch_psnr")?;
    cfg.validate()?;
    let (h, w) = left.dims();
    let p = cfg.patch;
    if h < p || w < p {
        return Err(Error::TooSmall(format!("patch {p} exceeds {w}x{h} image")));
    }
    let tops: Vec<usize> = (0..=h - p).step_by(cfg.stride).collect();
    let lefts: Vec<usize> = (0..=w - p).step_by(cfg.stride).collect();
    let range = cfg.search_range as isize;
    let mut offsets: Vec<isize> = (-range..=range).collect();
    offsets.sort_by_key(|o| (o.abs(), *o));

    let per_row: Vec<Vec<f64>> = tops
        .par_iter()
        .map(|&v0| {
            lefts
                .iter()
                .map(|&u0| {
                    let mut best = f64::INFINITY;
                    for &o in &offsets {
                        let t = u0 as isize + o;
                        if t < 0 || t as usize + p > w {
                            continue;
                        }
                        let t = t as usize;
                        let mut ssd = 0.0f64;
                        for v in v0..v0 + p {
                            let a = &left.row(v)[u0 * 3..(u0 + p) * 3];
                            let b = &right.row(v)[t * 3..(t + p) * 3];
                            ssd += a
                                .iter()
                                .zip(b)
                                .map(|(x, y)| {
                                    let d = (x - y) as f64;
                                    d * d
                                })
                                .sum::<f64>();
                            if ssd >= best {
                                break;
                            }
                        }
                        if ssd < best {
                            best = ssd;
                        }
                    }
                    best / (p * p * 3) as f64
                })
                .collect()
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

/// Mean of the per-patch best MSEs.
pub fn patch_mse(left: &Frame, right: &Frame, cfg: &PatchPsnrConfig) -> Result<f64> {
    let mses = patch_best_mses(left, right, cfg)?;
    Ok(mses.iter().sum::<f64>() / mses.len() as f64)
}

/// Patch-wise PSNR: one PSNR from the mean best-match MSE over all patches.
pub fn patch_psnr(left: &Frame, right: &Frame, cfg: &PatchPsnrConfig) -> Result<f64> {
    Ok(psnr_from_mse(patch_mse(left, right, cfg)?, cfg.psnr_cap))
}

/// A per-frame metric applied along two clips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipMetric {
    Psnr { cap: f64 },
    Ssim,
    PatchPsnr(PatchPsnrConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub per_frame: Vec<f64>,
    /// Present for the PSNR-style metrics.
    pub per_frame_mse: Option<Vec<f64>>,
    pub aggregate: f64,
}

/// Applies `metric` frame by frame. SSIM aggregates as the arithmetic mean;
/// the PSNR-style metrics average per-frame MSE first and convert once.
pub fn clip_metric(metric: ClipMetric, a: &VideoClip, b: &VideoClip) -> Result<ClipScore> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "clips have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(&Frame, &Frame)> = a.frames().iter().zip(b.frames()).collect();
    let n = pairs.len() as f64;
    match metric {
        ClipMetric::Ssim => {
            let per_frame = pairs
                .iter()
                .map(|(x, y)| ssim(x, y))
                .collect::<Result<Vec<_>>>()?;
            let aggregate = per_frame.iter().sum::<f64>() / n;
            Ok(ClipScore {
                per_frame,
                per_frame_mse: None,
                aggregate,
            })
        }
        ClipMetric::Psnr { cap } | ClipMetric::PatchPsnr(PatchPsnrConfig { psnr_cap: cap, .. }) => {
            let mses = pairs
                .iter()
                .map(|(x, y)| match metric {
                    ClipMetric::PatchPsnr(cfg) => patch_mse(x, y, &cfg),
                    _ => mse(*x, *y),
                })
                .collect::<Result<Vec<_>>>()?;
            let per_frame = mses.iter().map(|m| psnr_from_mse(*m, cap)).collect();
            let aggregate = psnr_from_mse(mses.iter().sum::<f64>() / n, cap);
            Ok(ClipScore {
                per_frame,
                per_frame_mse: Some(mses),
                aggregate,
            })
        }
    }
}
