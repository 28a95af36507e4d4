//! Dense disparity by block-SAD semi-global matching, least-squares
//! disparity alignment, and the aligned disparity error.

use serde::{Deserialize, Serialize};

use crate::error::{Degeneracy, Error, Result};
use crate::media::{check_same_shape, DisparityMap, Frame, StereoClip};

/// Semi-global matching parameters.
///
/// `p1` and `p2` are per window pixel on the 8-bit intensity scale; they are
/// multiplied by `block * block` internally to match the summed SAD cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgmConfig {
    pub block: usize,
    pub d_min: i32,
    pub d_max: i32,
    pub p1: u32,
    pub p2: u32,
    /// 4 (horizontal and vertical) or 8 (plus diagonals).
    pub paths: usize,
    pub lr_tol: u32,
}

impl Default for SgmConfig {
    fn default() -> Self {
        SgmConfig {
            block: 7,
            d_min: -16,
            d_max: 96,
            p1: 8,
            p2: 96,
            paths: 4,
            lr_tol: 1,
        }
    }
}

impl SgmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_min >= self.d_max {
            return Err(Error::InvalidArgument(format!(
                "d_min {} must be below d_max {}",
                self.d_min, self.d_max
            )));
        }
        if self.p1 > self.p2 {
            return Err(Error::InvalidArgument(format!(
                "p1 {} exceeds p2 {}",
                self.p1, self.p2
            )));
        }
        if self.block % 2 == 0 || self.block > 15 {
            return Err(Error::InvalidArgument(format!(
                "block {} must be odd and at most 15",
                self.block
            )));
        }
        if self.paths != 4 && self.paths != 8 {
            return Err(Error::InvalidArgument(format!(
                "paths must be 4 or 8, got {}",
                self.paths
            )));
        }
        Ok(())
    }

    fn directions(&self) -> &'static [(isize, isize)] {
        const DIRS: [(isize, isize); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (-1, 1),
            (1, -1),
            (-1, -1),
        ];
        &DIRS[..self.paths]
    }
}

fn quantized_gray(f: &Frame) -> Vec<i32> {
    f.to_gray()
        .data()
        .iter()
        .map(|g| (g * 255.0).round() as i32)
        .collect()
}

/// Cost volume laid out `[(v * w + u) * n_disp + k]`, disparity `d_min + k`.
struct CostVolume {
    h: usize,
    w: usize,
    n_disp: usize,
    data: Vec<u32>,
}

/// SAD over a `block x block` window for every pixel and disparity.
///
/// Samples outside either image are replicated from the nearest edge, so a
/// flat pair yields identical costs at every disparity. Rows are streamed:
/// per-row horizontal window sums feed a running vertical sum.
fn sad_volume(left: &[i32], right: &[i32], h: usize, w: usize, cfg: &SgmConfig) -> CostVolume {
    let nd = (cfg.d_max - cfg.d_min + 1) as usize;
    let r = (cfg.block / 2) as isize;
    let pw = w + 2 * r as usize;
    let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
    // right samples for x - d_min - k, indexed so that k runs forward
    let hi = w as isize + r - 1 - cfg.d_min as isize;
    let lo = -r - cfg.d_max as isize;
    let span = (hi - lo + 1) as usize;

    let horizontal = |y: isize| -> Vec<u32> {
        let row = clamp(y, h) * w;
        let rrev: Vec<i32> = (0..span)
            .map(|m| right[row + clamp(hi - m as isize, w)])
            .collect();
        let mut diff = vec![0u32; pw * nd];
        for x in 0..pw {
            let xl = x as isize - r;
            let l = left[row + clamp(xl, w)];
            let base = (hi - xl + cfg.d_min as isize) as usize;
            for (dst, rv) in diff[x * nd..(x + 1) * nd]
                .iter_mut()
                .zip(&rrev[base..base + nd])
            {
                *dst = (l - rv).unsigned_abs();
            }
        }
        let b = cfg.block;
        let mut out = vec![0u32; w * nd];
        let mut acc = vec![0u32; nd];
        for x in 0..b {
            for (a, d) in acc.iter_mut().zip(&diff[x * nd..(x + 1) * nd]) {
                *a += d;
            }
        }
        out[..nd].copy_from_slice(&acc);
        for u in 1..w {
            let (add, sub) = (
                &diff[(u + b - 1) * nd..(u + b) * nd],
                &diff[(u - 1) * nd..u * nd],
            );
            for ((a, p), m) in acc.iter_mut().zip(add).zip(sub) {
                *a = *a + p - m;
            }
            out[u * nd..(u + 1) * nd].copy_from_slice(&acc);
        }
        out
    };

    let mut data = vec![0u32; h * w * nd];
    let mut window: std::collections::VecDeque<Vec<u32>> = (-r..=r).map(horizontal).collect();
    let mut vsum = vec![0u32; w * nd];
    for hrow in &window {
        for (a, x) in vsum.iter_mut().zip(hrow) {
            *a += x;
        }
    }
    for v in 0..h {
        data[v * w * nd..(v + 1) * w * nd].copy_from_slice(&vsum);
        if v + 1 < h {
            let next = horizontal(v as isize + 1 + r);
            let old = window.pop_front().unwrap();
            for ((a, n), o) in vsum.iter_mut().zip(&next).zip(&old) {
                *a = *a + n - o;
            }
            window.push_back(next);
        }
    }
    CostVolume {
        h,
        w,
        n_disp: nd,
        data,
    }
}

/// Path-wise aggregation `L(p,d) = C(p,d) + min(L(p-r,d), L(p-r,d±1) + P1,
/// min_k L(p-r,k) + P2) - min_k L(p-r,k)`, summed over all directions.
///
/// Directions moving down or sideways share a top-down sweep, the rest a
/// bottom-up one, so each row of the volume is visited twice in total.
fn aggregate(cost: &CostVolume, cfg: &SgmConfig) -> Vec<u32> {
    let (h, w, nd) = (cost.h, cost.w, cost.n_disp);
    let area = (cfg.block * cfg.block) as u32;
    let (p1, p2) = (cfg.p1 * area, cfg.p2 * area);
    let mut total = vec![0u32; h * w * nd];
    let (down, up): (Vec<(isize, isize)>, Vec<(isize, isize)>) =
        cfg.directions().iter().partition(|d| d.1 >= 0);
    for (dirs, rows) in [
        (down, (0..h).collect::<Vec<_>>()),
        (up, (0..h).rev().collect()),
    ] {
        let mut paths: Vec<PathRows> = dirs.iter().map(|&d| PathRows::new(d, w, nd)).collect();
        for (ri, &v) in rows.iter().enumerate() {
            let c_row = &cost.data[v * w * nd..(v + 1) * w * nd];
            let t_row = &mut total[v * w * nd..(v + 1) * w * nd];
            for path in &mut paths {
                path.advance(c_row, ri > 0, p1, p2);
                for (acc, l) in t_row.iter_mut().zip(&path.cur) {
                    *acc = acc.wrapping_add(*l);
                }
            }
        }
    }
    total
}

/// Running state of one aggregation direction: the last two rows of `L`
/// and their per-pixel minima.
struct PathRows {
    dx: isize,
    dy: isize,
    w: usize,
    nd: usize,
    prev: Vec<u32>,
    cur: Vec<u32>,
    prev_min: Vec<u32>,
    cur_min: Vec<u32>,
}

impl PathRows {
    fn new((dx, dy): (isize, isize), w: usize, nd: usize) -> Self {
        PathRows {
            dx,
            dy,
            w,
            nd,
            prev: vec![0; w * nd],
            cur: vec![0; w * nd],
            prev_min: vec![0; w],
            cur_min: vec![0; w],
        }
    }

    /// Computes the next row of `L` from the cost row `c_row`.
    fn advance(&mut self, c_row: &[u32], has_prev_row: bool, p1: u32, p2: u32) {
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.prev_min, &mut self.cur_min);
        let (w, nd, dx, dy) = (self.w, self.nd, self.dx, self.dy);
        for i in 0..w {
            let u = if dx < 0 { w - 1 - i } else { i };
            let c = &c_row[u * nd..(u + 1) * nd];
            let pu = u as isize - dx;
            let has_prev = pu >= 0 && (pu as usize) < w && (dy == 0 || has_prev_row);
            let m = if !has_prev {
                self.cur[u * nd..(u + 1) * nd].copy_from_slice(c);
                *c.iter().min().unwrap()
            } else {
                let pu = pu as usize;
                let (src, src_min, dst): (&[u32], u32, &mut [u32]) = if dy == 0 {
                    // predecessor lives in the row being written
                    let (src, dst) = disjoint(&mut self.cur, pu, u, nd);
                    (src, self.cur_min[pu], dst)
                } else {
                    (
                        &self.prev[pu * nd..(pu + 1) * nd],
                        self.prev_min[pu],
                        &mut self.cur[u * nd..(u + 1) * nd],
                    )
                };
                path_step(src, c, dst, p1, src_min + p2, src_min)
            };
            self.cur_min[u] = m;
        }
    }
}

/// One recurrence step for all disparities; returns the minimum of `dst`.
///
/// Every candidate is at least `src_min`, so the wrapping operations are exact.
#[inline]
fn path_step(src: &[u32], c: &[u32], dst: &mut [u32], p1: u32, jump: u32, src_min: u32) -> u32 {
    let nd = src.len();
    let (c, dst) = (&c[..nd], &mut dst[..nd]);
    let step = |cost: u32, best: u32| cost.wrapping_add(best.min(jump).wrapping_sub(src_min));
    if nd == 1 {
        dst[0] = step(c[0], src[0]);
        return dst[0];
    }
    dst[0] = step(c[0], src[0].min(src[1].wrapping_add(p1)));
    dst[nd - 1] = step(c[nd - 1], src[nd - 1].min(src[nd - 2].wrapping_add(p1)));
    for k in 1..nd - 1 {
        let near = src[k - 1].min(src[k + 1]).wrapping_add(p1);
        dst[k] = step(c[k], src[k].min(near));
    }
    dst.iter().copied().fold(u32::MAX, u32::min)
}

/// Shared slice `src` and mutable slice `dst` of two distinct `nd`-sized cells.
fn disjoint(buf: &mut [u32], src: usize, dst: usize, nd: usize) -> (&[u32], &mut [u32]) {
    if src < dst {
        let (a, b) = buf.split_at_mut(dst * nd);
        (&a[src * nd..(src + 1) * nd], &mut b[..nd])
    } else {
        let (a, b) = buf.split_at_mut(src * nd);
        (&b[..nd], &mut a[dst * nd..(dst + 1) * nd])
    }
}

/// Semi-global matching on a rectified pair.
///
/// Pixels are invalid where the matching window leaves either image or where
/// the left-right check fails. Ties in the left winner-take-all go to the
/// smallest disparity and in the right one to the largest, so ambiguous
/// pixels (all disparities tied) fail the consistency check.
pub fn estimate_disparity(left: &Frame, right: &Frame, cfg: &SgmConfig) -> Result<DisparityMap> {
    check_same_shape(left, right, "estimate_disparity")?;
    cfg.validate()?;
    let (h, w) = left.dims();
    if cfg.d_max as i64 >= w as i64 || (-cfg.d_min) as i64 >= w as i64 {
        return Err(Error::InvalidArgument(format!(
            "disparity range [{}, {}] does not fit width {w}",
            cfg.d_min, cfg.d_max
        )));
    }
    if h < cfg.block || w < cfg.block {
        return Err(Error::TooSmall(format!(
            "{w}x{h} is smaller than block {}",
            cfg.block
        )));
    }
    let cost = sad_volume(&quantized_gray(left), &quantized_gray(right), h, w, cfg);
    let agg = aggregate(&cost, cfg);
    let nd = cost.n_disp;

    let mut disp_left = vec![0usize; h * w];
    for (i, s) in agg.chunks_exact(nd).enumerate() {
        let mut best = 0;
        for k in 1..nd {
            if s[k] < s[best] {
                best = k;
            }
        }
        disp_left[i] = best;
    }
    // right pixel x sees left pixel x + d; scanning u then k visits each x
    // in increasing k, so `<=` hands ties to the largest disparity
    let mut disp_right = vec![usize::MAX; h * w];
    let mut best_right = vec![u32::MAX; w];
    for v in 0..h {
        best_right.fill(u32::MAX);
        let right_row = &mut disp_right[v * w..(v + 1) * w];
        for u in 0..w {
            let s = &agg[(v * w + u) * nd..(v * w + u + 1) * nd];
            for (k, &cost) in s.iter().enumerate() {
                let x = u as isize - cfg.d_min as isize - k as isize;
                if x < 0 || x >= w as isize {
                    continue;
                }
                let x = x as usize;
                if cost <= best_right[x] {
                    best_right[x] = cost;
                    right_row[x] = k;
                }
            }
        }
    }

    let r = (cfg.block / 2) as isize;
    Ok(DisparityMap::from_fn(h, w, |u, v| {
        let (ui, vi) = (u as isize, v as isize);
        if ui < r || vi < r || ui + r >= w as isize || vi + r >= h as isize {
            return None;
        }
        let k = disp_left[v * w + u];
        let d = cfg.d_min as isize + k as isize;
        let ur = ui - d;
        if ur - r < 0 || ur + r >= w as isize {
            return None;
        }
        let kr = disp_right[v * w + ur as usize];
        if kr == usize::MAX || k.abs_diff(kr) as u32 > cfg.lr_tol {
            return None;
        }
        Some(d as f32)
    }))
}

/// Gain/offset fit of a predicted disparity to ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub a: f64,
    pub b: f64,
    /// Mean absolute error of `a * pred + b` against ground truth.
    pub mae: f64,
    /// Number of jointly valid pixels used.
    pub count: usize,
}

fn joint_pairs(pred: &DisparityMap, gt: &DisparityMap) -> Result<Vec<(f64, f64)>> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "disparity maps {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(pred
        .values()
        .iter()
        .zip(pred.valid_mask())
        .zip(gt.values().iter().zip(gt.valid_mask()))
        .filter_map(|((p, pv), (g, gv))| (*pv && *gv).then_some((*p as f64, *g as f64)))
        .collect())
}

fn fit(pairs: &[(f64, f64)]) -> Result<AlignmentResult> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::DegenerateAlignment(Degeneracy::TooFewPoints(n)));
    }
    let nf = n as f64;
    let mp = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mg = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut spp, mut spg, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for (p, g) in pairs {
        spp += (p - mp) * (p - mp);
        spg += (p - mp) * (g - mg);
        scale += p * p;
    }
    if spp <= 1e-12 * (scale + 1.0) {
        return Err(Error::DegenerateAlignment(Degeneracy::ConstantPrediction));
    }
    let a = spg / spp;
    let b = mg - a * mp;
    let mae = pairs
        .iter()
        .map(|(p, g)| (a * p + b - g).abs())
        .sum::<f64>()
        / nf;
    Ok(AlignmentResult {
        a,
        b,
        mae,
        count: n,
    })
}

/// Closed-form `argmin_{a,b} sum (a * pred + b - gt)^2` over jointly valid pixels.
pub fn align_lsq(pred: &DisparityMap, gt: &DisparityMap) -> Result<AlignmentResult> {
    fit(&joint_pairs(pred, gt)?)
}

/// Frames whose jointly valid fraction is below this are excluded from the disparity error.
pub const MIN_JOINT_VALID_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityErrorReport {
    /// Mean of per-frame MAEs over included frames; `None` if every frame was excluded.
    pub value: Option<f64>,
    pub per_frame: Vec<Option<f64>>,
    pub alignments: Vec<Option<AlignmentResult>>,
    pub excluded: Vec<usize>,
}

/// Aligns each estimate to its ground truth and averages the per-frame MAEs.
///
/// A constant estimate cannot be fitted with a gain, so it falls back to the
/// best constant (`a = 0`, `b = mean(gt)`). Frames with fewer than two or
/// under 1% jointly valid pixels are excluded and listed.
pub fn disparity_error_from_estimates(
    estimates: &[DisparityMap],
    gt: &[DisparityMap],
) -> Result<DisparityErrorReport> {
    if estimates.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates vs {} ground-truth maps",
            estimates.len(),
            gt.len()
        )));
    }
    let mut per_frame = Vec::with_capacity(gt.len());
    let mut alignments = Vec::with_capacity(gt.len());
    let mut excluded = Vec::new();
    for (i, (e, g)) in estimates.iter().zip(gt).enumerate() {
        let pairs = joint_pairs(e, g)?;
        let min_count =
            ((MIN_JOINT_VALID_FRACTION * (g.height() * g.width()) as f64).ceil() as usize).max(2);
        let result = if pairs.len() < min_count {
            None
        } else {
            match fit(&pairs) {
                Ok(r) => Some(r),
                Err(Error::DegenerateAlignment(Degeneracy::ConstantPrediction)) => {
                    let n = pairs.len() as f64;
                    let mg = pairs.iter().map(|p| p.1).sum::<f64>() / n;
                    let mae = pairs.iter().map(|p| (p.1 - mg).abs()).sum::<f64>() / n;
                    Some(AlignmentResult {
                        a: 0.0,
                        b: mg,
                        mae,
                        count: pairs.len(),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        if result.is_none() {
            excluded.push(i);
        }
        per_frame.push(result.map(|r| r.mae));
        alignments.push(result);
    }
    let included: Vec<f64> = per_frame.iter().flatten().copied().collect();
    let value =
        (!included.is_empty()).then(|| included.iter().sum::<f64>() / included.len() as f64);
    Ok(DisparityErrorReport {
        value,
        per_frame,
        alignments,
        excluded,
    })
}

/// Estimates disparity on every (left, generated right) pair and scores it
/// against ground truth after alignment.
pub fn disparity_error(
    stereo: &StereoClip,
    gt: &[DisparityMap],
    cfg: &SgmConfig,
) -> Result<DisparityErrorReport> {
    if stereo.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames vs {} ground-truth maps",
            stereo.len(),
            gt.len()
        )));
    }
    let estimates = stereo
        .left
        .frames()
        .iter()
        .zip(stereo.right.frames())
        .map(|(l, r)| estimate_disparity(l, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    disparity_error_from_estimates(&estimates, gt)
}
