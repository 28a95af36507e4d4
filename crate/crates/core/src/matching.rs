//! Keypoint detection, binary descriptors, epipolar matching and the
//! matchability error.
//!
//! Keypoints are detected once on the left view. A keypoint belongs to the
//! match set of a right view when its descriptor finds a distinctive partner
//! within a narrow band around the same row. Two match sets built from the
//! same left keypoints can then be compared as plain sets.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::media::{check_same_shape, Frame};
use crate::plane::Plane;

/// Seed of the descriptor sampling pattern. Changing it changes every match set.
pub const DESCRIPTOR_SEED: u64 = 0x5EED_B71E_F00D_0256;
/// Side of the square descriptor window.
pub const DESCRIPTOR_WINDOW: usize = 31;
pub const DESCRIPTOR_BITS: usize = 256;
const HALF_WINDOW: isize = (DESCRIPTOR_WINDOW / 2) as isize;
/// Keypoints are kept this far from the border so their descriptor window fits.
pub const KEYPOINT_BORDER: usize = DESCRIPTOR_WINDOW / 2 + 1;

const HARRIS_K: f32 = 0.04;
/// Responses at or below this are not corners. Flat images respond with exactly 0.
const HARRIS_MIN_RESPONSE: f32 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: usize,
    pub v: usize,
    pub score: f32,
}

/// Harris corner response with Sobel gradients and a 5-tap binomial window.
pub fn harris_response(gray: &Plane) -> Plane {
    let (gx, gy) = gray.sobel();
    let (h, w) = gray.dims();
    let xx = Plane::new(h, w, gx.data().iter().map(|x| x * x).collect());
    let yy = Plane::new(h, w, gy.data().iter().map(|y| y * y).collect());
    let xy = Plane::new(
        h,
        w,
        gx.data()
            .iter()
            .zip(gy.data())
            .map(|(x, y)| x * y)
            .collect(),
    );
    let (sxx, syy, sxy) = (
        xx.convolve_separable(&crate::plane::BINOMIAL5),
        yy.convolve_separable(&crate::plane::BINOMIAL5),
        xy.convolve_separable(&crate::plane::BINOMIAL5),
    );
    Plane::from_fn(h, w, |u, v| {
        let (a, b, c) = (sxx.get(u, v), syy.get(u, v), sxy.get(u, v));
        let tr = a + b;
        a * b - c * c - HARRIS_K * tr * tr
    })
}

/// Total order used for ranking: higher score first, then smaller `(v, u)`.
fn ranks_before(a: (f32, usize, usize), b: (f32, usize, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Harris corners with non-maximum suppression over a `(2r+1)^2` window,
/// strongest `max_count` kept, ordered by score (desc) then `(v, u)`.
///
/// Only pixels at least [`KEYPOINT_BORDER`] away from every edge are considered.
pub fn detect_keypoints(img: &Frame, max_count: usize, nms_radius: usize) -> Vec<Keypoint> {
    let response = harris_response(&img.to_gray());
    let (h, w) = response.dims();
    if h <= 2 * KEYPOINT_BORDER || w <= 2 * KEYPOINT_BORDER {
        return Vec::new();
    }
    let r = nms_radius as isize;
    let rows: Vec<Vec<Keypoint>> = (KEYPOINT_BORDER..h - KEYPOINT_BORDER)
        .into_par_iter()
        .map(|v| {
            let mut found = Vec::new();
            for u in KEYPOINT_BORDER..w - KEYPOINT_BORDER {
                let s = response.get(u, v);
                if s <= HARRIS_MIN_RESPONSE {
                    continue;
                }
                let me = (s, v, u);
                let mut is_max = true;
                'nms: for dv in -r..=r {
                    for du in -r..=r {
                        let (nu, nv) = (u as isize + du, v as isize + dv);
                        if (du == 0 && dv == 0)
                            || nu < 0
                            || nv < 0
                            || nu >= w as isize
                            || nv >= h as isize
                        {
                            continue;
                        }
                        let other = (
                            response.get(nu as usize, nv as usize),
                            nv as usize,
                            nu as usize,
                        );
                        if ranks_before(other, me) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    found.push(Keypoint { u, v, score: s });
                }
            }
            found
        })
        .collect();
    let mut kps: Vec<Keypoint> = rows.into_iter().flatten().collect();
    kps.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.v, a.u).cmp(&(b.v, b.u)))
    });
    kps.truncate(max_count);
    kps
}

/// 256 point pairs `(du1, dv1, du2, dv2)` inside the 31x31 window, drawn
/// from an isotropic Gaussian (sigma = window/5) with [`DESCRIPTOR_SEED`].
pub fn descriptor_pattern() -> &'static [[i8; 4]; DESCRIPTOR_BITS] {
    static PATTERN: OnceLock<[[i8; 4]; DESCRIPTOR_BITS]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(DESCRIPTOR_SEED);
        let normal = Normal::new(0.0f64, DESCRIPTOR_WINDOW as f64 / 5.0).unwrap();
        let mut draw =
            || (normal.sample(&mut rng).round() as isize).clamp(-HALF_WINDOW, HALF_WINDOW) as i8;
        let mut out = [[0i8; 4]; DESCRIPTOR_BITS];
        for pair in out.iter_mut() {
            loop {
                let p = [draw(), draw(), draw(), draw()];
                if (p[0], p[1]) != (p[2], p[3]) {
                    *pair = p;
                    break;
                }
            }
        }
        out
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// The plane descriptors are sampled from: luma with 3x3 binomial smoothing.
pub fn descriptor_plane(img: &Frame) -> Plane {
    img.to_gray().convolve_separable(&[0.25, 0.5, 0.25])
}

/// Pattern pairs as linear offsets into a plane of the given width.
fn linear_pattern(width: usize) -> Vec<(isize, isize)> {
    let w = width as isize;
    descriptor_pattern()
        .iter()
        .map(|p| {
            (
                p[1] as isize * w + p[0] as isize,
                p[3] as isize * w + p[2] as isize,
            )
        })
        .collect()
}

#[inline]
fn describe_linear(data: &[f32], center: usize, pattern: &[(isize, isize)]) -> Descriptor {
    let c = center as isize;
    let mut bits = [0u64; 4];
    for (i, &(a, b)) in pattern.iter().enumerate() {
        if data[(c + a) as usize] < data[(c + b) as usize] {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    Descriptor(bits)
}

/// Descriptors of every pixel of row `v` whose window fits horizontally; the
/// row itself must fit vertically.
fn describe_row(
    data: &[f32],
    w: usize,
    v: usize,
    pattern: &[(isize, isize)],
) -> Vec<Option<Descriptor>> {
    let half = HALF_WINDOW as usize;
    let mut out = vec![None; w];
    if w <= 2 * half {
        return out;
    }
    let (u0, n) = (half, w - 2 * half);
    let start = (v * w + u0) as isize;
    let mut words = vec![vec![0u64; n]; 4];
    for (i, &(a, b)) in pattern.iter().enumerate() {
        let sa = &data[(start + a) as usize..(start + a) as usize + n];
        let sb = &data[(start + b) as usize..(start + b) as usize + n];
        let bit = i % 64;
        for ((word, x), y) in words[i / 64].iter_mut().zip(sa).zip(sb) {
            *word |= ((x < y) as u64) << bit;
        }
    }
    for j in 0..n {
        out[u0 + j] = Some(Descriptor([
            words[0][j],
            words[1][j],
            words[2][j],
            words[3][j],
        ]));
    }
    out
}

fn window_fits(h: usize, w: usize, u: usize, v: usize) -> bool {
    let (ui, vi) = (u as isize, v as isize);
    ui >= HALF_WINDOW
        && vi >= HALF_WINDOW
        && ui + HALF_WINDOW < w as isize
        && vi + HALF_WINDOW < h as isize
}

/// Descriptor at `(u, v)`, or `None` when the window leaves the image.
pub fn describe(plane: &Plane, u: usize, v: usize) -> Option<Descriptor> {
    let (h, w) = plane.dims();
    window_fits(h, w, u, v).then(|| describe_linear(plane.data(), v * w + u, &linear_pattern(w)))
}

/// Matching parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Allowed vertical deviation from the keypoint row, in pixels.
    pub v_tol: usize,
    /// Lowe ratio: best distance must be below `ratio * second best`.
    pub ratio: f64,
    /// Horizontal search half-width in pixels.
    pub d_max: usize,
    /// Best distance must also be below this many bits (out of 256).
    pub max_hamming: u32,
    pub max_keypoints: usize,
    pub nms_radius: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            v_tol: 2,
            ratio: 0.8,
            d_max: 64,
            max_hamming: 64,
            max_keypoints: 1000,
            nms_radius: 4,
        }
    }
}

/// Left keypoints, keyed by `(u, v)`, that found an epipolar-consistent match.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchSet {
    pub members: BTreeSet<(usize, usize)>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.members.contains(&(u, v))
    }
}

impl FromIterator<(usize, usize)> for MatchSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        MatchSet {
            members: iter.into_iter().collect(),
        }
    }
}

/// Right-view descriptors for every pixel some keypoint may be compared against.
struct DenseDescriptors {
    width: usize,
    v0: usize,
    rows: Vec<Vec<Option<Descriptor>>>,
}

impl DenseDescriptors {
    fn new(plane: &Plane, kps: &[Keypoint], v0: usize, v1: usize, cfg: &MatchConfig) -> Self {
        let (h, w) = plane.dims();
        let mut needed = vec![false; v1 - v0];
        for kp in kps {
            let lo = kp.v.saturating_sub(cfg.v_tol).max(v0);
            let hi = (kp.v + cfg.v_tol + 1).min(v1);
            needed[lo - v0..hi - v0].fill(true);
        }
        let pattern = linear_pattern(w);
        let rows = (v0..v1)
            .into_par_iter()
            .map(|v| {
                if needed[v - v0] && window_fits(h, w, HALF_WINDOW as usize, v) {
                    describe_row(plane.data(), w, v, &pattern)
                } else {
                    vec![None; w]
                }
            })
            .collect();
        DenseDescriptors { width: w, v0, rows }
    }

    fn get(&self, u: usize, v: usize) -> Option<&Descriptor> {
        if v < self.v0 || u >= self.width {
            return None;
        }
        self.rows.get(v - self.v0)?.get(u)?.as_ref()
    }
}

/// Builds the match set of `kps` (detected on `left`) against `right`.
///
/// Candidates are every right pixel with `|dv| <= v_tol` and horizontal
/// displacement in `[-d_max, d_max]`. A keypoint is accepted when its best
/// Hamming distance is below `max_hamming` and below `ratio` times the
/// second-best candidate distance.
pub fn match_epipolar(
    kps: &[Keypoint],
    left: &Frame,
    right: &Frame,
    cfg: &MatchConfig,
) -> Result<MatchSet> {
    check_same_shape(left, right, "match_epipolar")?;
    if kps.is_empty() {
        return Ok(MatchSet::default());
    }
    let lp = descriptor_plane(left);
    let rp = descriptor_plane(right);
    let (h, w) = left.dims();
    let v_lo = kps
        .iter()
        .map(|k| k.v)
        .min()
        .unwrap()
        .saturating_sub(cfg.v_tol);
    let v_hi = (kps.iter().map(|k| k.v).max().unwrap() + cfg.v_tol + 1).min(h);
    let dense = DenseDescriptors::new(&rp, kps, v_lo, v_hi, cfg);

    let accepted: Vec<(usize, usize)> = kps
        .par_iter()
        .filter_map(|kp| {
            let d = describe(&lp, kp.u, kp.v)?;
            let mut best = u32::MAX;
            let mut second = u32::MAX;
            let v0 = kp.v.saturating_sub(cfg.v_tol);
            let v1 = (kp.v + cfg.v_tol).min(h - 1);
            let u0 = kp.u.saturating_sub(cfg.d_max);
            let u1 = (kp.u + cfg.d_max).min(w - 1);
            for v in v0..=v1 {
                for u in u0..=u1 {
                    if let Some(c) = dense.get(u, v) {
                        let dist = d.hamming(c);
                        if dist < best {
                            second = best;
                            best = dist;
                        } else if dist < second {
                            second = dist;
                        }
                    }
                }
            }
            let distinctive = (best as f64) < cfg.ratio * second as f64;
            (best < cfg.max_hamming && distinctive).then_some((kp.u, kp.v))
        })
        .collect();
    Ok(accepted.into_iter().collect())
}

/// TP/FP/FN decomposition of the matchability error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchabilityBreakdown {
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    /// `(FP + FN) / (TP + FP + FN)`; 0 when both sets are empty.
    pub error: f64,
    /// Both sets were empty.
    pub degenerate: bool,
}

/// One minus the Jaccard index of the two match sets.
pub fn matchability_error(m_gt: &MatchSet, m_pred: &MatchSet) -> MatchabilityBreakdown {
    let n_tp = m_gt.members.intersection(&m_pred.members).count();
    let n_fp = m_pred.len() - n_tp;
    let n_fn = m_gt.len() - n_tp;
    let denom = n_tp + n_fp + n_fn;
    MatchabilityBreakdown {
        n_tp,
        n_fp,
        n_fn,
        error: if denom == 0 {
            0.0
        } else {
            (n_fp + n_fn) as f64 / denom as f64
        },
        degenerate: denom == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStatus {
    Tp,
    Fp,
    Fn,
}

/// Per-keypoint status, sorted by `(u, v)`.
pub fn classify_matches(m_gt: &MatchSet, m_pred: &MatchSet) -> Vec<(usize, usize, MatchStatus)> {
    m_gt.members
        .union(&m_pred.members)
        .map(|&(u, v)| {
            let status = match (
                m_gt.members.contains(&(u, v)),
                m_pred.members.contains(&(u, v)),
            ) {
                (true, true) => MatchStatus::Tp,
                (false, true) => MatchStatus::Fp,
                _ => MatchStatus::Fn,
            };
            (u, v, status)
        })
        .collect()
}

/// Writes `u,v,status` rows for visualization.
pub fn write_match_csv(
    path: impl AsRef<std::path::Path>,
    rows: &[(usize, usize, MatchStatus)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["u", "v", "status"])?;
    for (u, v, s) in rows {
        let s = match s {
            MatchStatus::Tp => "tp",
            MatchStatus::Fp => "fp",
            MatchStatus::Fn => "fn",
        };
        w.write_record([u.to_string(), v.to_string(), s.to_string()])?;
    }
    w.flush()
        .map_err(|e| crate::error::Error::io(path.as_ref(), e))
}
