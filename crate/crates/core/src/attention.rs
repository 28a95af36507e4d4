//! Row-constrained cross-attention between decoder features and guidance features.
//!
//! On a rectified pair a pixel's correspondences lie on its own image row, so
//! each query attends only to the keys of that row. Storage for the attention
//! matrix drops from `(H W)^2` to `H W^2` entries.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::media::Frame;
use crate::plane::Plane;

pub const DEFAULT_HEAD_DIM: usize = 64;

/// `H x W x C` features, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} features need {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Standard-normal features from a seed.
    pub fn random(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0f32, 1.0).unwrap();
        FeatureMap {
            height,
            width,
            channels,
            data: (0..height * width * channels)
                .map(|_| n.sample(&mut rng))
                .collect(),
        }
    }

    /// Stacks planes of equal size as channels.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
        let (h, w) = first.dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::ShapeMismatch("channel planes differ in size".into()));
        }
        let c = planes.len();
        let mut data = vec![0.0; h * w * c];
        for (k, p) in planes.iter().enumerate() {
            for (i, x) in p.data().iter().enumerate() {
                data[i * c + k] = *x;
            }
        }
        FeatureMap::new(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Feature vector at `(u, v)`.
    pub fn at(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// All features of row `v`, `W x C`.
    pub fn row(&self, v: usize) -> &[f32] {
        let n = self.width * self.channels;
        &self.data[v * n..(v + 1) * n]
    }

    /// Channel `k` as a plane.
    pub fn channel(&self, k: usize) -> Plane {
        Plane::from_fn(self.height, self.width, |u, v| self.at(u, v)[k])
    }
}

/// Projections of a single attention head.
///
/// `w_q`, `w_k`, `w_v` are `C x d` and `w_out` is `d x C`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    channels: usize,
    head_dim: usize,
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub w_v: Vec<f32>,
    pub w_out: Vec<f32>,
}

const WEIGHTS_MAGIC: &[u8; 4] = b"EPAW";
const WEIGHTS_VERSION: u32 = 1;

impl AttentionWeights {
    pub fn new(
        channels: usize,
        head_dim: usize,
        w_q: Vec<f32>,
        w_k: Vec<f32>,
        w_v: Vec<f32>,
        w_out: Vec<f32>,
    ) -> Result<Self> {
        if head_dim == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "channels and head dimension must be positive".into(),
            ));
        }
        let n = channels * head_dim;
        for (name, m) in [
            ("w_q", &w_q),
            ("w_k", &w_k),
            ("w_v", &w_v),
            ("w_out", &w_out),
        ] {
            if m.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} values, expected {n}",
                    m.len()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} contains non-finite values"
                )));
            }
        }
        Ok(AttentionWeights {
            channels,
            head_dim,
            w_q,
            w_k,
            w_v,
            w_out,
        })
    }

    /// Gaussian weights with variance `1 / C`.
    pub fn random(channels: usize, head_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0f32, 1.0 / (channels.max(1) as f32).sqrt()).unwrap();
        let mut m = || {
            (0..channels * head_dim)
                .map(|_| n.sample(&mut rng))
                .collect::<Vec<_>>()
        };
        let (q, k, v, o) = (m(), m(), m(), m());
        AttentionWeights::new(channels, head_dim, q, k, v, o)
    }

    /// Random projections with a zero output layer, so the block starts as the identity.
    pub fn zero_output(channels: usize, head_dim: usize, seed: u64) -> Result<Self> {
        let mut w = AttentionWeights::random(channels, head_dim, seed)?;
        w.w_out.iter_mut().for_each(|x| *x = 0.0);
        Ok(w)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Binary layout: `EPAW`, then little-endian `u32` version, `C`, `d`,
    /// then `w_q`, `w_k`, `w_v`, `w_out` as row-major little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.w_q.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        for x in [WEIGHTS_VERSION, self.channels as u32, self.head_dim as u32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_out] {
            for x in m {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("attention weights: {m}"));
        let mut magic = [0u8; 4];
        bytes
            .read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            bytes
                .read_exact(&mut b)
                .map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        let (version, c, d) = (word()?, word()? as usize, word()? as usize);
        if version != WEIGHTS_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = c * d;
        if bytes.len() != 16 * n {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                16 * n,
                bytes.len()
            )));
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let mut take = || floats.by_ref().take(n).collect::<Vec<_>>();
        let (q, k, v, o) = (take(), take(), take(), take());
        AttentionWeights::new(c, d, q, k, v, o)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        AttentionWeights::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `rows x C` times `C x d`.
fn project(x: &[f32], m: &[f32], c: usize, d: usize) -> Vec<f32> {
    let rows = x.len() / c;
    let mut out = vec![0.0f32; rows * d];
    for r in 0..rows {
        let o = &mut out[r * d..(r + 1) * d];
        for (k, xv) in x[r * c..(r + 1) * c].iter().enumerate() {
            for (oj, mj) in o.iter_mut().zip(&m[k * d..(k + 1) * d]) {
                *oj += xv * mj;
            }
        }
    }
    out
}

/// In-place softmax with the maximum subtracted first.
fn softmax(x: &mut [f32]) {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    x.iter_mut().for_each(|v| *v /= sum);
}

fn check_inputs(h: &FeatureMap, g: &FeatureMap, w: &AttentionWeights) -> Result<()> {
    if h.dims() != g.dims() {
        return Err(Error::ShapeMismatch(format!(
            "decoder features {:?} vs guidance {:?}",
            h.dims(),
            g.dims()
        )));
    }
    if w.channels != h.channels {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {} channels, features have {}",
            w.channels, h.channels
        )));
    }
    Ok(())
}

/// Attention probabilities of every query of row `v` over the keys of the same row, `W x W`.
pub fn row_attention_weights(
    h: &FeatureMap,
    g: &FeatureMap,
    w: &AttentionWeights,
    v: usize,
) -> Result<Vec<f32>> {
    check_inputs(h, g, w)?;
    let (c, d, width) = (h.channels, w.head_dim, h.width);
    let q = project(h.row(v), &w.w_q, c, d);
    let k = project(g.row(v), &w.w_k, c, d);
    let scale = 1.0 / (d as f32).sqrt();
    let mut a = vec![0.0f32; width * width];
    for i in 0..width {
        let logits = &mut a[i * width..(i + 1) * width];
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(&q[i * d..(i + 1) * d], &k[j * d..(j + 1) * d]) * scale;
        }
        softmax(logits);
    }
    Ok(a)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Residual row attention: `h + softmax(Q K_row^T / sqrt(d)) V_row W_out`.
///
/// Queries come from `h`, keys and values from the same row of `g`. Rows are
/// processed in parallel.
pub fn epipolar_attention(
    h: &FeatureMap,
    g: &FeatureMap,
    w: &AttentionWeights,
) -> Result<FeatureMap> {
    check_inputs(h, g, w)?;
    let (height, width, c) = h.dims();
    let d = w.head_dim;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = h.data.clone();
    out.par_chunks_mut(width * c)
        .enumerate()
        .for_each(|(v, out_row)| {
            let q = project(h.row(v), &w.w_q, c, d);
            let k = project(g.row(v), &w.w_k, c, d);
            let val = project(g.row(v), &w.w_v, c, d);
            let mut logits = vec![0.0f32; width];
            let mut alpha = vec![0.0f32; d];
            for i in 0..width {
                let qi = &q[i * d..(i + 1) * d];
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = dot(qi, &k[j * d..(j + 1) * d]) * scale;
                }
                softmax(&mut logits);
                alpha.iter_mut().for_each(|a| *a = 0.0);
                for (j, p) in logits.iter().enumerate() {
                    for (a, x) in alpha.iter_mut().zip(&val[j * d..(j + 1) * d]) {
                        *a += p * x;
                    }
                }
                let o = &mut out_row[i * c..(i + 1) * c];
                for (a, wrow) in alpha.iter().zip(w.w_out.chunks_exact(c)) {
                    for (ok, wk) in o.iter_mut().zip(wrow) {
                        *ok += a * wk;
                    }
                }
            }
        });
    debug_assert_eq!(out.len(), height * width * c);
    FeatureMap::new(height, width, c, out)
}

/// Reference attention over all `H W` keys with cross-row pairs masked out.
///
/// Each query scans every key, so cost is `O((H W)^2 d)`; useful only for
/// checking and timing comparisons on small maps.
pub fn masked_full_attention(
    h: &FeatureMap,
    g: &FeatureMap,
    w: &AttentionWeights,
) -> Result<FeatureMap> {
    check_inputs(h, g, w)?;
    let (height, width, c) = h.dims();
    let d = w.head_dim;
    let n = height * width;
    let scale = 1.0 / (d as f32).sqrt();
    let q = project(&h.data, &w.w_q, c, d);
    let k = project(&g.data, &w.w_k, c, d);
    let val = project(&g.data, &w.w_v, c, d);
    let mut out = h.data.clone();
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        let row = i / width;
        let mut logits: Vec<f32> = (0..n)
            .map(|j| {
                if j / width == row {
                    dot(&q[i * d..(i + 1) * d], &k[j * d..(j + 1) * d]) * scale
                } else {
                    f32::NEG_INFINITY
                }
            })
            .collect();
        softmax(&mut logits);
        let mut alpha = vec![0.0f32; d];
        for (j, p) in logits.iter().enumerate() {
            if *p != 0.0 {
                for (a, x) in alpha.iter_mut().zip(&val[j * d..(j + 1) * d]) {
                    *a += p * x;
                }
            }
        }
        for (a, wrow) in alpha.iter().zip(w.w_out.chunks_exact(c)) {
            for (ok, wk) in o.iter_mut().zip(wrow) {
                *ok += a * wk;
            }
        }
    });
    FeatureMap::new(height, width, c, out)
}

/// Guidance features of one view at several scales, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePyramid {
    pub levels: Vec<FeatureMap>,
}

/// Hand-crafted stand-in for a learned guidance extractor.
///
/// Level 0 is full resolution and each further level halves both sides.
/// Channel 0 is intensity, channel 1 gradient magnitude, and channel `k >= 2`
/// intensity blurred with a Gaussian of sigma `2^(k-2)`.
pub fn guided_pyramid_stub(
    frame: &Frame,
    levels: usize,
    channels: usize,
) -> Result<GuidancePyramid> {
    if levels == 0 || channels == 0 {
        return Err(Error::InvalidArgument(
            "levels and channels must be positive".into(),
        ));
    }
    let (h, w) = frame.dims();
    let f = 1usize << (levels - 1).min(usize::BITS as usize - 1);
    if levels > usize::BITS as usize || h % f != 0 || w % f != 0 || h < f || w < f {
        return Err(Error::TooSmall(format!(
            "{w}x{h} frame cannot be halved {} times",
            levels - 1
        )));
    }
    let mut gray = frame.to_gray();
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        if l > 0 {
            gray = gray.pyr_down();
        }
        let mut planes = Vec::with_capacity(channels);
        planes.push(gray.clone());
        if channels > 1 {
            let (gx, gy) = gray.sobel();
            let mag = gx
                .data()
                .iter()
                .zip(gy.data())
                .map(|(a, b)| (a * a + b * b).sqrt())
                .collect();
            planes.push(Plane::new(gray.height(), gray.width(), mag));
        }
        for k in 2..channels {
            planes.push(gray.gaussian_blur(2f32.powi(k as i32 - 2)));
        }
        out.push(FeatureMap::from_planes(&planes)?);
    }
    Ok(GuidancePyramid { levels: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Epipolar,
    Full,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epipolar" => Ok(AttentionMode::Epipolar),
            "full" => Ok(AttentionMode::Full),
            _ => Err(Error::InvalidArgument(format!(
                "unknown attention mode {s:?}"
            ))),
        }
    }
}

/// Bytes occupied by the attention matrix alone.
pub fn attention_memory_model(
    height: u64,
    width: u64,
    bytes_per_element: u64,
    mode: AttentionMode,
) -> u128 {
    let (h, w, b) = (height as u128, width as u128, bytes_per_element as u128);
    match mode {
        AttentionMode::Epipolar => h * w * w * b,
        AttentionMode::Full => (h * w) * (h * w) * b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Materializes Q, K, V for every pixel and a full `HW x HW` logit
    /// matrix, masks cross-row pairs to -inf, and applies f64 softmax.
    fn dense_oracle(h: &FeatureMap, g: &FeatureMap, w: &AttentionWeights) -> Vec<f64> {
        let (hh, ww, c) = h.dims();
        let d = w.head_dim();
        let n = hh * ww;
        let mat = |x: &[f32], m: &[f32]| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            (0..c)
                                .map(|k| x[i * c + k] as f64 * m[k * d + j] as f64)
                                .sum()
                        })
                        .collect()
                })
                .collect()
        };
        let q = mat(h.data(), &w.w_q);
        let k = mat(g.data(), &w.w_k);
        let v = mat(g.data(), &w.w_v);
        let mut logits = vec![vec![f64::NEG_INFINITY; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i / ww == j / ww {
                    logits[i][j] =
                        q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
                }
            }
        }
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let m = logits[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits[i].iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let alpha: Vec<f64> = (0..d)
                .map(|t| (0..n).map(|j| e[j] / s * v[j][t]).sum())
                .collect();
            for ch in 0..c {
                let r: f64 = (0..d).map(|t| alpha[t] * w.w_out[t * c + ch] as f64).sum();
                out[i * c + ch] = h.data()[i * c + ch] as f64 + r;
            }
        }
        out
    }

    fn max_diff(a: &[f32], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (*x as f64 - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matches_dense_oracle_on_fixed_case() {
        let h = FeatureMap::random(4, 6, 8, 1);
        let g = FeatureMap::random(4, 6, 8, 2);
        let w = AttentionWeights::random(8, 4, 3).unwrap();
        let out = epipolar_attention(&h, &g, &w).unwrap();
        assert!(max_diff(out.data(), &dense_oracle(&h, &g, &w)) <= 1e-5);
        let full = masked_full_attention(&h, &g, &w).unwrap();
        assert!(max_diff(full.data(), &dense_oracle(&h, &g, &w)) <= 1e-5);
    }

    #[test]
    fn zero_output_is_identity() {
        let h = FeatureMap::random(5, 7, 3, 4);
        let g = FeatureMap::random(5, 7, 3, 5);
        let w = AttentionWeights::zero_output(3, 8, 6).unwrap();
        assert_eq!(epipolar_attention(&h, &g, &w).unwrap(), h);
    }

    #[test]
    fn single_column_closed_form() {
        let h = FeatureMap::random(3, 1, 4, 7);
        let g = FeatureMap::random(3, 1, 4, 8);
        let w = AttentionWeights::random(4, 2, 9).unwrap();
        let out = epipolar_attention(&h, &g, &w).unwrap();
        for v in 0..3 {
            let gv = project(g.at(0, v), &w.w_v, 4, 2);
            for ch in 0..4 {
                let expect = h.at(0, v)[ch] + gv[0] * w.w_out[ch] + gv[1] * w.w_out[4 + ch];
                assert!((out.at(0, v)[ch] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut h = FeatureMap::random(2, 5, 4, 10);
        h.data_mut().iter_mut().for_each(|x| *x *= 1e3);
        let g = h.clone();
        let w = AttentionWeights::random(4, 4, 11).unwrap();
        let out = epipolar_attention(&h, &g, &w).unwrap();
        assert!(out.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shape_errors() {
        let h = FeatureMap::random(2, 3, 4, 0);
        let g = FeatureMap::random(2, 4, 4, 0);
        let w = AttentionWeights::random(4, 2, 0).unwrap();
        assert!(epipolar_attention(&h, &g, &w).is_err());
        let w5 = AttentionWeights::random(5, 2, 0).unwrap();
        assert!(epipolar_attention(&h, &h, &w5).is_err());
        assert!(AttentionWeights::random(4, 0, 0).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn weights_roundtrip_file() {
        let w = AttentionWeights::random(6, 3, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        w.save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EPAW");
        assert_eq!(bytes.len(), 16 + 4 * 4 * 18);
        assert_eq!(AttentionWeights::load(&p).unwrap(), w);
        assert!(AttentionWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(AttentionWeights::from_bytes(&bad).is_err());
    }

    #[test]
    fn memory_model_values() {
        use AttentionMode::*;
        assert_eq!(attention_memory_model(512, 512, 2, Epipolar), 268_435_456);
        assert_eq!(attention_memory_model(512, 512, 2, Epipolar), 256 << 20);
        assert_eq!(attention_memory_model(512, 512, 2, Full), 137_438_953_472);
        assert_eq!(attention_memory_model(512, 512, 2, Full), 128u128 << 30);
        assert_eq!(attention_memory_model(1, 1, 2, Epipolar), 2);
        assert_eq!(attention_memory_model(1, 1, 2, Full), 2);
        assert_eq!("full".parse::<AttentionMode>().unwrap(), Full);
        assert!("dense".parse::<AttentionMode>().is_err());
    }

    #[test]
    fn pyramid_shapes_and_purity() {
        let f = Frame::from_fn(512, 512, |u, v| [((u * 7 + v * 3) % 17) as f32 / 16.0; 3]);
        let p = guided_pyramid_stub(&f, 3, 4).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|m| m.dims()).collect();
        assert_eq!(dims, vec![(512, 512, 4), (256, 256, 4), (128, 128, 4)]);
        assert_eq!(guided_pyramid_stub(&f, 3, 4).unwrap(), p);
        assert!(guided_pyramid_stub(&Frame::zeros(6, 6), 3, 2).is_err());
        assert!(guided_pyramid_stub(&f, 0, 2).is_err());
    }

    #[test]
    fn constant_frame_has_zero_gradient_channel() {
        let f = Frame::from_fn(32, 32, |_, _| [0.4; 3]);
        let p = guided_pyramid_stub(&f, 4, 3).unwrap();
        for level in &p.levels {
            assert!(level.channel(1).data().iter().all(|x| *x == 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn oracle_equivalence(hh in 1usize..=6, ww in 1usize..=8, c in 1usize..=8, d in 1usize..=8, seed in any::<u64>()) {
            let h = FeatureMap::random(hh, ww, c, seed);
            let g = FeatureMap::random(hh, ww, c, seed ^ 1);
            let w = AttentionWeights::random(c, d, seed ^ 2).unwrap();
            let out = epipolar_attention(&h, &g, &w).unwrap();
            prop_assert!(max_diff(out.data(), &dense_oracle(&h, &g, &w)) <= 1e-5);
        }

        #[test]
        fn zero_output_identity_any_shape(hh in 1usize..=16, ww in 1usize..=16, c in 1usize..=8, seed in any::<u64>()) {
            let h = FeatureMap::random(hh, ww, c, seed);
            let g = FeatureMap::random(hh, ww, c, seed ^ 7);
            let w = AttentionWeights::zero_output(c, 4, seed ^ 9).unwrap();
            let out = epipolar_attention(&h, &g, &w).unwrap();
            let m = out.data().iter().zip(h.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            prop_assert!(m <= 1e-6);
        }

        #[test]
        fn rows_do_not_interact(hh in 2usize..=6, ww in 1usize..=8, seed in any::<u64>(), row in 0usize..6) {
            let row = row % hh;
            let h = FeatureMap::random(hh, ww, 4, seed);
            let g = FeatureMap::random(hh, ww, 4, seed ^ 3);
            let w = AttentionWeights::random(4, 4, seed ^ 5).unwrap();
            let mut g2 = g.clone();
            let other = (row + 1) % hh;
            for x in &mut g2.data_mut()[other * ww * 4..(other + 1) * ww * 4] {
                *x += 1.5;
            }
            let a = epipolar_attention(&h, &g, &w).unwrap();
            let b = epipolar_attention(&h, &g2, &w).unwrap();
            prop_assert_eq!(&a.data()[row * ww * 4..(row + 1) * ww * 4], &b.data()[row * ww * 4..(row + 1) * ww * 4]);
        }

        #[test]
        fn softmax_rows_sum_to_one(ww in 1usize..=12, seed in any::<u64>()) {
            let h = FeatureMap::random(2, ww, 3, seed);
            let g = FeatureMap::random(2, ww, 3, seed ^ 4);
            let w = AttentionWeights::random(3, 5, seed ^ 8).unwrap();
            let a = row_attention_weights(&h, &g, &w, 1).unwrap();
            for r in a.chunks(ww) {
                prop_assert!((r.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            }
        }

        #[test]
        fn memory_scaling(h in 1u64..=4096, w in 1u64..=4096, b in 1u64..=8) {
            use AttentionMode::*;
            prop_assert_eq!(attention_memory_model(h, 2 * w, b, Epipolar), 4 * attention_memory_model(h, w, b, Epipolar));
            prop_assert_eq!(attention_memory_model(h, 2 * w, b, Full), 4 * attention_memory_model(h, w, b, Full));
            prop_assert_eq!(attention_memory_model(2 * h, 2 * w, b, Full), 16 * attention_memory_model(h, w, b, Full));
        }
    }
}
