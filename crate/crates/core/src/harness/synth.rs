use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::media::{DisparityMap, Frame, StereoClip, VideoClip};
use crate::stereo::SgmConfig;
use crate::warp::forward_warp;

/// Horizontal camera motion between consecutive frames, in pixels.
pub const SCENE_MOTION: usize = 2;

/// Octave block sizes of the texture and their amplitudes.
const OCTAVES: [(usize, f32); 6] = [(1, 1.0), (2, 1.0), (4, 1.0), (8, 1.0), (16, 1.0), (32, 1.0)];

/// Ground-truth disparity layout of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisparityProfile {
    /// `constant:D`
    Constant(i32),
    /// `two_plane:BG,FG`: a centered square of side `min(H, W) / 2` at `FG` over `BG`.
    TwoPlane { background: i32, foreground: i32 },
}

impl FromStr for DisparityProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad disparity profile {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<i32> = args
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, nums.as_slice()) {
            ("constant", [d]) => Ok(DisparityProfile::Constant(*d)),
            ("two_plane", [bg, fg]) => Ok(DisparityProfile::TwoPlane {
                background: *bg,
                foreground: *fg,
            }),
            _ => Err(bad()),
        }
    }
}

impl DisparityProfile {
    fn background(&self) -> i32 {
        match *self {
            DisparityProfile::Constant(d) => d,
            DisparityProfile::TwoPlane { background, .. } => background,
        }
    }

    fn extremes(&self) -> (i32, i32) {
        match *self {
            DisparityProfile::Constant(d) => (d, d),
            DisparityProfile::TwoPlane {
                background,
                foreground,
            } => (background.min(foreground), background.max(foreground)),
        }
    }

    pub fn map(&self, height: usize, width: usize) -> DisparityMap {
        match *self {
            DisparityProfile::Constant(d) => DisparityMap::constant(height, width, d as f32),
            DisparityProfile::TwoPlane {
                background,
                foreground,
            } => {
                let side = height.min(width) / 2;
                let (u0, v0) = ((width - side) / 2, (height - side) / 2);
                DisparityMap::from_fn(height, width, |u, v| {
                    let inside = (u0..u0 + side).contains(&u) && (v0..v0 + side).contains(&v);
                    Some(if inside { foreground } else { background } as f32)
                })
            }
        }
    }
}

/// A generated stereo clip with its per-frame ground-truth disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub stereo: StereoClip,
    pub disparity: Vec<DisparityMap>,
}

/// Sum of blocky random octaves in RGB, each octave with a random grid phase.
struct Texture {
    width: usize,
    octaves: Vec<(usize, usize, usize, f32, Vec<[f32; 3]>)>,
    norm: f32,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Self {
        let octaves = OCTAVES
            .iter()
            .map(|&(s, amp)| {
                let phase = rng.gen_range(0..s);
                let cols = (width + phase) / s + 1;
                let rows = height / s + 1;
                let cells = (0..rows * cols)
                    .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                    .collect();
                (s, phase, cols, amp, cells)
            })
            .collect();
        Texture {
            width,
            octaves,
            norm: OCTAVES.iter().map(|o| o.1).sum(),
        }
    }

    fn at(&self, u: usize, v: usize) -> [f32; 3] {
        debug_assert!(u < self.width);
        let mut px = [0.0f32; 3];
        for (s, phase, cols, amp, cells) in &self.octaves {
            let c = cells[(v / s) * cols + (u + phase) / s];
            for k in 0..3 {
                px[k] += amp * c[k];
            }
        }
        px.map(|x| x / self.norm)
    }
}

/// A random-texture stereo clip over a piecewise-planar disparity field.
///
/// Background and foreground carry independent textures. The left view of
/// frame `t` samples them through a window moved by `t * SCENE_MOTION`
/// pixels. The right view is the left forward-warped with the ground-truth
/// disparity; disoccluded and out-of-view pixels are filled with the
/// background texture seen at the background disparity.
pub fn make_synthetic_scene(
    seed: u64,
    width: usize,
    height: usize,
    n_frames: usize,
    profile: &DisparityProfile,
) -> Result<SyntheticScene> {
    if width == 0 || height == 0 || n_frames == 0 {
        return Err(Error::InvalidArgument(
            "scene needs positive size and frame count".into(),
        ));
    }
    let limits = SgmConfig::default();
    let (lo, hi) = profile.extremes();
    if lo < limits.d_min || hi > limits.d_max {
        return Err(Error::InvalidArgument(format!(
            "profile {profile:?} outside [{}, {}]",
            limits.d_min, limits.d_max
        )));
    }
    let pad = (-limits.d_min) as usize;
    let canvas_w = pad + width + hi.max(0) as usize + SCENE_MOTION * (n_frames - 1) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::new(&mut rng, height, canvas_w);
    let foreground = Texture::new(&mut rng, height, canvas_w);
    let gt = profile.map(height, width);
    let bg = profile.background();
    let layer = |u: usize, v: usize| {
        if gt.get(u, v) == Some(bg as f32) {
            &background
        } else {
            &foreground
        }
    };

    let mut left = Vec::with_capacity(n_frames);
    let mut right = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let origin = pad + SCENE_MOTION * t;
        let l = Frame::from_fn(height, width, |u, v| layer(u, v).at(origin + u, v));
        let warp = forward_warp(&l, &gt, 1.0)?;
        let r = Frame::from_fn(height, width, |u, v| {
            if warp.valid[v * width + u] {
                warp.image.pixel(u, v)
            } else {
                background.at((origin as i64 + u as i64 + bg as i64) as usize, v)
            }
        });
        left.push(l);
        right.push(r);
    }
    Ok(SyntheticScene {
        stereo: StereoClip::new(VideoClip::new(left)?, VideoClip::new(right)?)?,
        disparity: vec![gt; n_frames],
    })
}

/// A stand-in for a conversion method's output on `scene`.
///
/// Each left frame is forward-warped with the ground-truth disparity. Holes
/// take the nearest warped pixel to their right (or to their left at the
/// right border), then zero-mean Gaussian noise of `noise_sigma` is added
/// and the result clamped to `[0, 1]`.
pub fn simulate_prediction(
    scene: &SyntheticScene,
    noise_sigma: f32,
    seed: u64,
) -> Result<VideoClip> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma {noise_sigma} must be finite and >= 0"
        )));
    }
    let noise = Normal::new(0.0f32, noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = &scene.stereo.left;
    let mut frames = Vec::with_capacity(left.len());
    for (l, gt) in left.frames().iter().zip(&scene.disparity) {
        let (h, w) = (l.height(), l.width());
        let warp = forward_warp(l, gt, 1.0)?;
        let mut filled: Vec<Option<[f32; 3]>> = vec![None; h * w];
        for v in 0..h {
            let row = &mut filled[v * w..(v + 1) * w];
            let mut next = None;
            for u in (0..w).rev() {
                if warp.valid[v * w + u] {
                    next = Some(warp.image.pixel(u, v));
                }
                row[u] = next;
            }
            let mut prev = None;
            for px in row.iter_mut() {
                match px {
                    Some(p) => prev = Some(*p),
                    None => *px = prev,
                }
            }
        }
        let data = filled
            .iter()
            .flat_map(|px| px.unwrap_or([0.0; 3]))
            .map(|x| (x + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        frames.push(Frame::new(h, w, data)?);
    }
    Ok(VideoClip::new(frames)?.with_fps(left.fps))
}
