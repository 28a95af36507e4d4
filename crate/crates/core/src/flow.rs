//! Coarse-to-fine block-matching optical flow and the temporal end-point error.
//!
//! Intensities are quantized to 12 bits before matching so that every SSD
//! is an exact integer; the result is then independent of summation order.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{check_same_shape, DisparityMap, Frame, VideoClip};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Pyramid depth; 1 means full resolution only.
    pub levels: usize,
    /// Odd matching window side.
    pub block: usize,
    /// Search radius around the prediction at each level, in pixels.
    pub radius: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 3,
            block: 9,
            radius: 4,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.block % 2 == 0 {
            return Err(Error::InvalidArgument(format!("bad flow config {self:?}")));
        }
        Ok(())
    }
}

/// Per-pixel integer motion `(du, dv)` from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub vectors: Vec<[f32; 2]>,
    /// Pixels whose matching window (at either end) left the image.
    pub border: Vec<bool>,
}

impl FlowField {
    pub fn get(&self, u: usize, v: usize) -> [f32; 2] {
        self.vectors[v * self.width + u]
    }

    /// Writes `du` and `dv` as two single-channel PFMs; border pixels are stored as +inf.
    pub fn save_pfm_pair(
        &self,
        du_path: impl AsRef<Path>,
        dv_path: impl AsRef<Path>,
    ) -> Result<()> {
        for (c, path) in [(0, du_path.as_ref()), (1, dv_path.as_ref())] {
            let values = self.vectors.iter().map(|x| x[c]).collect();
            let valid = self.border.iter().map(|b| !b).collect();
            DisparityMap::new(self.height, self.width, values, valid)?.save_pfm(path)?;
        }
        Ok(())
    }
}

const QUANT: f32 = 4095.0;

fn quantize(p: &Plane) -> Vec<i32> {
    p.data()
        .iter()
        .map(|x| (x * QUANT).round() as i32)
        .collect()
}

/// A level's images as exact integers.
pub(crate) struct LevelImages {
    pub h: usize,
    pub w: usize,
    pub g0: Vec<i32>,
    pub g1: Vec<i32>,
}

#[cfg(test)]
impl LevelImages {
    fn at(img: &[i32], w: usize, h: usize, u: isize, v: isize) -> i64 {
        let u = u.clamp(0, w as isize - 1) as usize;
        let v = v.clamp(0, h as isize - 1) as usize;
        img[v * w + u] as i64
    }
}

/// Candidate ordering: lower SSD, then smaller offset magnitude, then `(dv, du)`.
#[inline]
pub(crate) fn candidate_key(ssd: i64, o: [i32; 2]) -> (i64, i32, i32, i32) {
    (ssd, o[0] * o[0] + o[1] * o[1], o[1], o[0])
}

const TILE: usize = 32;

/// Exhaustive search of `prior(p) + o`, `o` in `[-radius, radius]^2`, for every pixel.
///
/// Pixels of a tile sharing a prior are scored together with box sums over
/// the tile, which gives the same integers as direct summation.
fn search_level(
    img: &LevelImages,
    prior: &[[i32; 2]],
    block: usize,
    radius: usize,
) -> Vec<[i32; 2]> {
    let (h, w) = (img.h, img.w);
    let rb = (block / 2) as isize;
    let r = radius as i32;
    let tiles: Vec<(usize, usize)> = (0..h)
        .step_by(TILE)
        .flat_map(|ty| (0..w).step_by(TILE).map(move |tx| (tx, ty)))
        .collect();
    let results: Vec<Vec<(usize, [i32; 2])>> = tiles
        .par_iter()
        .map(|&(tx, ty)| {
            let mut groups: BTreeMap<[i32; 2], Vec<(usize, usize)>> = BTreeMap::new();
            for v in ty..(ty + TILE).min(h) {
                for u in tx..(tx + TILE).min(w) {
                    groups.entry(prior[v * w + u]).or_default().push((u, v));
                }
            }
            let mut out = Vec::new();
            for (p, pixels) in groups {
                let x0 = pixels.iter().map(|q| q.0).min().unwrap() as isize - rb;
                let x1 = pixels.iter().map(|q| q.0).max().unwrap() as isize + rb;
                let y0 = pixels.iter().map(|q| q.1).min().unwrap() as isize - rb;
                let y1 = pixels.iter().map(|q| q.1).max().unwrap() as isize + rb;
                let (rw, rh) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
                let iw = rw + 1;
                let mut integral = vec![0i64; (rh + 1) * iw];
                let mut sq = vec![0i32; rw];
                let mut best: Vec<((i64, i32, i32, i32), [i32; 2])> =
                    vec![((i64::MAX, 0, 0, 0), p); pixels.len()];
                for ov in -r..=r {
                    for ou in -r..=r {
                        let d = [p[0] + ou, p[1] + ov];
                        for y in 0..rh {
                            let yy = y0 + y as isize;
                            let ra = yy.clamp(0, h as isize - 1) as usize * w;
                            let rb1 = (yy + d[1] as isize).clamp(0, h as isize - 1) as usize * w;
                            let xb = x0 + d[0] as isize;
                            let fits = |x: isize| x >= 0 && x + rw as isize <= w as isize;
                            if fits(x0) && fits(xb) {
                                let a = &img.g0[ra + x0 as usize..ra + x0 as usize + rw];
                                let b = &img.g1[rb1 + xb as usize..rb1 + xb as usize + rw];
                                for ((s, p), q) in sq.iter_mut().zip(a).zip(b) {
                                    *s = (p - q) * (p - q);
                                }
                            } else {
                                for (x, s) in sq.iter_mut().enumerate() {
                                    let p = img.g0
                                        [ra + (x0 + x as isize).clamp(0, w as isize - 1) as usize];
                                    let q = img.g1
                                        [rb1 + (xb + x as isize).clamp(0, w as isize - 1) as usize];
                                    *s = (p - q) * (p - q);
                                }
                            }
                            let mut row = 0i64;
                            let (above, here) = integral.split_at_mut((y + 1) * iw);
                            let above = &above[y * iw..];
                            for x in 0..rw {
                                row += sq[x] as i64;
                                here[x + 1] = above[x + 1] + row;
                            }
                        }
                        for (i, &(u, v)) in pixels.iter().enumerate() {
                            // window [u - rb, u + rb] in region coordinates
                            let lx = (u as isize - rb - x0) as usize;
                            let ly = (v as isize - rb - y0) as usize;
                            let (hx, hy) = (lx + block, ly + block);
                            let s = integral[hy * iw + hx]
                                - integral[ly * iw + hx]
                                - integral[hy * iw + lx]
                                + integral[ly * iw + lx];
                            let key = candidate_key(s, [ou, ov]);
                            if key < best[i].0 {
                                best[i] = (key, d);
                            }
                        }
                    }
                }
                out.extend(
                    pixels
                        .iter()
                        .zip(best)
                        .map(|(&(u, v), (_, d))| (v * w + u, d)),
                );
            }
            out
        })
        .collect();
    let mut est = vec![[0i32; 2]; h * w];
    for (i, d) in results.into_iter().flatten() {
        est[i] = d;
    }
    est
}

/// Gray pyramids of both frames, finest first.
pub(crate) fn pyramids(f0: &Frame, f1: &Frame, levels: usize) -> Vec<LevelImages> {
    let mut p0 = f0.to_gray();
    let mut p1 = f1.to_gray();
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        if l > 0 {
            p0 = p0.pyr_down();
            p1 = p1.pyr_down();
        }
        out.push(LevelImages {
            h: p0.height(),
            w: p0.width(),
            g0: quantize(&p0),
            g1: quantize(&p1),
        });
    }
    out
}

/// Prior for a level: the coarser estimate at `(u/2, v/2)`, doubled.
pub(crate) fn upsample_prior(
    coarse: &[[i32; 2]],
    cw: usize,
    ch: usize,
    w: usize,
    h: usize,
) -> Vec<[i32; 2]> {
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let c = coarse[(v / 2).min(ch - 1) * cw + (u / 2).min(cw - 1)];
            out.push([2 * c[0], 2 * c[1]]);
        }
    }
    out
}

/// Coarse-to-fine block matching from `f0` to `f1`.
///
/// Pyramids use 5-tap binomial smoothing and 2x decimation. At each level
/// every pixel searches `+-radius` around the doubled coarser estimate.
pub fn optical_flow(f0: &Frame, f1: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    check_same_shape(f0, f1, "optical_flow")?;
    cfg.validate()?;
    let (h, w) = f0.dims();
    let min_side = (1usize << (cfg.levels - 1)) * cfg.block;
    if h < min_side || w < min_side {
        return Err(Error::TooSmall(format!(
            "{w}x{h} frame needs at least {min_side} pixels per side for {} levels",
            cfg.levels
        )));
    }
    let levels = pyramids(f0, f1, cfg.levels);
    let mut est: Vec<[i32; 2]> = Vec::new();
    let mut dims = (0, 0);
    for img in levels.iter().rev() {
        let prior = if est.is_empty() {
            vec![[0, 0]; img.h * img.w]
        } else {
            upsample_prior(&est, dims.1, dims.0, img.w, img.h)
        };
        est = search_level(img, &prior, cfg.block, cfg.radius);
        dims = (img.h, img.w);
    }
    let rb = (cfg.block / 2) as isize;
    let inside = |u: isize, v: isize| {
        u - rb >= 0 && v - rb >= 0 && u + rb < w as isize && v + rb < h as isize
    };
    let mut border = Vec::with_capacity(h * w);
    for v in 0..h as isize {
        for u in 0..w as isize {
            let d = est[v as usize * w + u as usize];
            border.push(!inside(u, v) || !inside(u + d[0] as isize, v + d[1] as isize));
        }
    }
    Ok(FlowField {
        height: h,
        width: w,
        vectors: est.iter().map(|d| [d[0] as f32, d[1] as f32]).collect(),
        border,
    })
}

/// Sum of `||a - b||_2` and the number of pixels flagged border in neither field.
pub fn endpoint_error(a: &FlowField, b: &FlowField) -> Result<(f64, u64)> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::ShapeMismatch("flow fields differ in size".into()));
    }
    let mut sum = 0.0f64;
    let mut n = 0u64;
    for i in 0..a.vectors.len() {
        if a.border[i] || b.border[i] {
            continue;
        }
        let du = (a.vectors[i][0] - b.vectors[i][0]) as f64;
        let dv = (a.vectors[i][1] - b.vectors[i][1]) as f64;
        sum += (du * du + dv * dv).sqrt();
        n += 1;
    }
    Ok((sum, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalErrorReport {
    /// Mean EPE over all counted pixels of all frame pairs.
    pub value: f64,
    /// Mean EPE of each consecutive pair.
    pub per_pair: Vec<f64>,
    pub per_pair_pixels: Vec<u64>,
}

/// End-point error between the motion of the ground-truth and predicted clips.
///
/// When a predicted frame pair is bit-identical to the ground-truth pair its
/// flow is reused rather than recomputed.
pub fn temporal_error(
    gt: &VideoClip,
    pred: &VideoClip,
    cfg: &FlowConfig,
) -> Result<TemporalErrorReport> {
    if gt.len() != pred.len() || gt.dims() != pred.dims() {
        return Err(Error::ShapeMismatch(format!(
            "clips {}x{:?} vs {}x{:?}",
            gt.len(),
            gt.dims(),
            pred.len(),
            pred.dims()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::InvalidArgument(
            "temporal error needs at least two frames".into(),
        ));
    }
    let g = gt.frames();
    let p = pred.frames();
    let pairs: Vec<(f64, u64)> = (0..g.len() - 1)
        .map(|t| {
            let fg = optical_flow(&g[t], &g[t + 1], cfg)?;
            let (sum, n) = if g[t] == p[t] && g[t + 1] == p[t + 1] {
                endpoint_error(&fg, &fg)?
            } else {
                endpoint_error(&fg, &optical_flow(&p[t], &p[t + 1], cfg)?)?
            };
            Ok((sum, n))
        })
        .collect::<Result<_>>()?;
    let total: u64 = pairs.iter().map(|x| x.1).sum();
    if total == 0 {
        return Err(Error::EmptyValidSet(
            "every flow pixel touches the border".into(),
        ));
    }
    Ok(TemporalErrorReport {
        value: pairs.iter().map(|x| x.0).sum::<f64>() / total as f64,
        per_pair: pairs
            .iter()
            .map(|(s, n)| if *n == 0 { 0.0 } else { s / *n as f64 })
            .collect(),
        per_pair_pixels: pairs.iter().map(|x| x.1).collect(),
    })
}
