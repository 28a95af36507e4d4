//! Disparity statistics, forward warping (DIBR splatting) and anaglyph rendering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::media::{check_same_shape, DisparityMap, Frame};

/// Positive scale factors applied to a disparity map to synthesize new baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    factors: Vec<f64>,
}

impl ScaleSet {
    /// Baseline scales used for synthetic stereo augmentation.
    pub const AUGMENTATION: [f64; 10] = [0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.25, 1.5, 2.0, 3.0];

    pub fn new(factors: Vec<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("empty scale set".into()));
        }
        if let Some(bad) = factors.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "scale factor {bad} must be > 0"
            )));
        }
        Ok(ScaleSet { factors })
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet {
            factors: Self::AUGMENTATION.to_vec(),
        }
    }
}

fn sorted_valid(d: &DisparityMap) -> Result<Vec<f32>> {
    let mut vals: Vec<f32> = d.valid_values().collect();
    if vals.is_empty() {
        return Err(Error::EmptyValidSet(
            "disparity map has no valid pixels".into(),
        ));
    }
    vals.sort_by(f32::total_cmp);
    Ok(vals)
}

/// Nearest-rank percentile over valid pixels: the value at sorted index
/// `ceil(p/100 * n) - 1` (clamped to 0).
pub fn percentile_disparity(d: &DisparityMap, p: f64) -> Result<f32> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let vals = sorted_valid(d)?;
    let rank = (p / 100.0 * vals.len() as f64).ceil() as usize;
    Ok(vals[rank.saturating_sub(1)])
}

/// Median of the valid disparities; the lower median for even counts.
pub fn median_disparity(d: &DisparityMap) -> Result<f32> {
    percentile_disparity(d, 50.0)
}

pub fn mean_disparity(d: &DisparityMap) -> Result<f64> {
    let n = d.valid_count();
    if n == 0 {
        return Err(Error::EmptyValidSet(
            "disparity map has no valid pixels".into(),
        ));
    }
    Ok(d.valid_values().map(f64::from).sum::<f64>() / n as f64)
}

pub fn max_disparity(d: &DisparityMap) -> Result<f32> {
    percentile_disparity(d, 100.0)
}

/// A forward-warped view and the mask of pixels that received a splat.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: Frame,
    pub valid: Vec<bool>,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|x| **x).count()
    }
}

/// Splats each left pixel `(u, v)` with valid disparity to column
/// `u - round(s * d)`. When several sources land on one target the larger
/// scaled disparity (the nearer surface) wins; on exact ties the leftmost
/// source is kept. Targets nobody reaches are filled with 0 and marked invalid.
///
/// `s = 0` is the identity with a full mask, whatever the disparity holds.
pub fn forward_warp(left: &Frame, d: &DisparityMap, s: f64) -> Result<WarpResult> {
    if d.dims() != left.dims() {
        return Err(Error::ShapeMismatch(format!(
            "disparity {:?} vs frame {:?}",
            d.dims(),
            left.dims()
        )));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale {s} must be finite and >= 0"
        )));
    }
    let (h, w) = left.dims();
    if s == 0.0 {
        return Ok(WarpResult {
            image: left.clone(),
            valid: vec![true; h * w],
        });
    }

    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut depth = vec![f64::NEG_INFINITY; w];
            let mut src: Vec<Option<usize>> = vec![None; w];
            for u in 0..w {
                let Some(disp) = d.get(u, v) else { continue };
                let shift = s * disp as f64;
                let target = u as f64 - shift.round();
                if target < 0.0 || target >= w as f64 {
                    continue;
                }
                let t = target as usize;
                if shift > depth[t] {
                    depth[t] = shift;
                    src[t] = Some(u);
                }
            }
            let row = left.row(v);
            let mut out = vec![0.0f32; w * Frame::CHANNELS];
            let mut valid = vec![false; w];
            for (t, s) in src.iter().enumerate() {
                if let Some(u) = s {
                    out[t * 3..t * 3 + 3].copy_from_slice(&row[u * 3..u * 3 + 3]);
                    valid[t] = true;
                }
            }
            (out, valid)
        })
        .collect();

    let mut data = Vec::with_capacity(h * w * 3);
    let mut valid = Vec::with_capacity(h * w);
    for (r, m) in rows {
        data.extend(r);
        valid.extend(m);
    }
    Ok(WarpResult {
        image: Frame::new(h, w, data)?,
        valid,
    })
}

/// Mean absolute difference over valid pixels and all channels.
pub fn masked_l1(a: &Frame, b: &Frame, valid: &[bool]) -> Result<f64> {
    check_same_shape(a, b, "masked_l1")?;
    if valid.len() != a.height() * a.width() {
        return Err(Error::ShapeMismatch("mask size differs from frame".into()));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, ok) in valid.iter().enumerate() {
        if !*ok {
            continue;
        }
        for c in 0..3 {
            sum += (a.data()[i * 3 + c] - b.data()[i * 3 + c]).abs() as f64;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyValidSet("masked_l1 mask is empty".into()));
    }
    Ok(sum / n as f64)
}

/// A synthetic training pair: the view warped with `s * d` and the matching
/// conditioning scalar `s * median(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub scale: f64,
    pub warp: WarpResult,
    pub conditioning: f64,
}

pub fn make_augmented_pair(left: &Frame, d: &DisparityMap, s: f64) -> Result<AugmentedPair> {
    let warp = forward_warp(left, d, s)?;
    let conditioning = if s == 0.0 {
        0.0
    } else {
        s * median_disparity(d)? as f64
    };
    Ok(AugmentedPair {
        scale: s,
        warp,
        conditioning,
    })
}

/// One augmented pair per scale in `scales`.
pub fn augment(left: &Frame, d: &DisparityMap, scales: &ScaleSet) -> Result<Vec<AugmentedPair>> {
    scales
        .factors()
        .iter()
        .map(|s| make_augmented_pair(left, d, *s))
        .collect()
}

/// Red from the left view, green and blue from the right view.
pub fn anaglyph(left: &Frame, right: &Frame) -> Result<Frame> {
    check_same_shape(left, right, "anaglyph")?;
    let data = left
        .data()
        .chunks_exact(3)
        .zip(right.data().chunks_exact(3))
        .flat_map(|(l, r)| [l[0], r[1], r[2]])
        .collect();
    Frame::new(left.height(), left.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |u, v| {
            let x = ((u * 7919 + v * 104729) % 251) as f32 / 250.0;
            [x, 1.0 - x, (x * 3.0) % 1.0]
        })
    }

    fn map_of(values: &[f32]) -> DisparityMap {
        DisparityMap::from_values(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_disparity(&DisparityMap::constant(3, 3, 7.0)).unwrap(),
            7.0
        );
        assert_eq!(
            median_disparity(&map_of(&[1.0, 2.0, 3.0, 100.0])).unwrap(),
            2.0
        );
        let half = DisparityMap::from_fn(4, 4, |u, _| Some(if u < 2 { 0.0 } else { 10.0 }));
        assert_eq!(median_disparity(&half).unwrap(), 0.0);
        let empty = DisparityMap::from_fn(2, 2, |_, _| None);
        assert!(matches!(
            median_disparity(&empty),
            Err(Error::EmptyValidSet(_))
        ));
    }

    #[test]
    fn median_ignores_invalid_pixels() {
        let d = DisparityMap::from_values(1, 4, vec![f32::NAN, 5.0, f32::INFINITY, 1.0]).unwrap();
        assert_eq!(median_disparity(&d).unwrap(), 1.0);
    }

    #[test]
    fn percentile_extremes() {
        let d = map_of(&[3.0, 1.0, 2.0]);
        assert_eq!(percentile_disparity(&d, 100.0).unwrap(), 3.0);
        assert_eq!(percentile_disparity(&d, 0.0).unwrap(), 1.0);
        assert!(percentile_disparity(&d, 101.0).is_err());
        assert!(percentile_disparity(&d, -1.0).is_err());
        assert_eq!(max_disparity(&d).unwrap(), 3.0);
        assert!((mean_disparity(&d).unwrap() - 2.0).abs() < 1e-12);
    }

    /// Lower median computed by explicit enumeration of sorted values.
    fn lower_median_oracle(vals: &[f32]) -> f32 {
        let mut v = vals.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[(v.len() - 1) / 2]
    }

    #[test]
    fn percentile_50_matches_median_on_random_maps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let vals: Vec<f32> = (0..n)
                .map(|_| rng.gen_range(-20.0..60.0f32).round())
                .collect();
            let d = map_of(&vals);
            let m = median_disparity(&d).unwrap();
            assert_eq!(percentile_disparity(&d, 50.0).unwrap(), m);
            assert_eq!(m, lower_median_oracle(&vals));
        }
    }

    #[test]
    fn zero_scale_is_identity() {
        let f = texture(5, 9);
        let d = DisparityMap::from_fn(5, 9, |u, _| (u % 3 != 0).then_some(u as f32));
        let w = forward_warp(&f, &d, 0.0).unwrap();
        assert_eq!(w.image, f);
        assert!(w.valid.iter().all(|x| *x));
    }

    #[test]
    fn uniform_disparity_translates_left() {
        let f = texture(4, 16);
        let w = forward_warp(&f, &DisparityMap::constant(4, 16, 3.0), 1.0).unwrap();
        for v in 0..4 {
            for u in 0..16 {
                if u < 13 {
                    assert!(w.valid[v * 16 + u]);
                    assert_eq!(w.image.pixel(u, v), f.pixel(u + 3, v));
                } else {
                    assert!(!w.valid[v * 16 + u]);
                    assert_eq!(w.image.pixel(u, v), [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn negative_disparity_shifts_right() {
        let f = texture(1, 8);
        let w = forward_warp(&f, &DisparityMap::constant(1, 8, -2.0), 1.0).unwrap();
        assert!(!w.valid[0] && !w.valid[1]);
        assert_eq!(w.image.pixel(5, 0), f.pixel(3, 0));
    }

    /// Brute-force splat: list every (target, scaled disparity, source) and pick the max
    /// per target with an explicit z-order.
    fn splat_oracle(f: &Frame, d: &[f32], s: f64) -> Vec<Option<[f32; 3]>> {
        let w = f.width();
        let mut cands: Vec<(usize, f64, usize)> = Vec::new();
        for (u, disp) in d.iter().enumerate() {
            let shift = s * *disp as f64;
            let t = u as i64 - shift.round() as i64;
            if (0..w as i64).contains(&t) {
                cands.push((t as usize, shift, u));
            }
        }
        (0..w)
            .map(|t| {
                cands
                    .iter()
                    .filter(|c| c.0 == t)
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.2.cmp(&a.2)))
                    .map(|c| f.pixel(c.2, 0))
            })
            .collect()
    }

    #[test]
    fn nearer_surface_wins_collisions() {
        // sources 2 (d=2) and 5 (d=5) both land on column 0
        let f = Frame::from_fn(1, 6, |u, _| [u as f32 / 10.0, 0.0, 0.0]);
        let disp = [0.0, 0.0, 2.0, 0.0, 0.0, 5.0];
        let d = map_of(&disp);
        let w = forward_warp(&f, &d, 1.0).unwrap();
        assert_eq!(w.image.pixel(0, 0), f.pixel(5, 0));
        let oracle = splat_oracle(&f, &disp, 1.0);
        for (t, o) in oracle.iter().enumerate() {
            assert_eq!(w.valid[t], o.is_some());
            if let Some(px) = o {
                assert_eq!(w.image.pixel(t, 0), *px);
            }
        }
    }

    proptest! {
        #[test]
        fn warp_matches_splat_oracle(
            disp in proptest::collection::vec(-6i32..10, 12),
            s in prop::sample::select(ScaleSet::AUGMENTATION.to_vec()),
        ) {
            let f = Frame::from_fn(1, 12, |u, _| [u as f32 / 12.0, 0.5, 0.0]);
            let disp: Vec<f32> = disp.iter().map(|x| *x as f32 * 0.5).collect();
            let w = forward_warp(&f, &map_of(&disp), s).unwrap();
            let oracle = splat_oracle(&f, &disp, s);
            for (t, o) in oracle.iter().enumerate() {
                prop_assert_eq!(w.valid[t], o.is_some());
                if let Some(px) = o {
                    prop_assert_eq!(w.image.pixel(t, 0), *px);
                }
            }
        }

        #[test]
        fn valid_pixels_come_from_the_source(
            seed in 0u64..1000,
            s in 0.0f64..3.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = Frame::from_fn(3, 10, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
            let d = DisparityMap::from_fn(3, 10, |_, _| Some(rng.gen_range(-4.0..8.0)));
            let w = forward_warp(&f, &d, s).unwrap();
            let source: Vec<[f32; 3]> = f.data().chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
            for v in 0..3 {
                for u in 0..10 {
                    if w.valid[v * 10 + u] {
                        prop_assert!(source.contains(&w.image.pixel(u, v)));
                    }
                }
            }
        }

        #[test]
        fn median_commutes_with_positive_scaling(
            vals in proptest::collection::vec(-50i32..50, 1..30),
            s in prop::sample::select(ScaleSet::AUGMENTATION.to_vec()),
        ) {
            let vals: Vec<f32> = vals.iter().map(|x| *x as f32).collect();
            let d = map_of(&vals);
            let scaled = d.map_valid(|x| (s * x as f64) as f32);
            let lhs = median_disparity(&scaled).unwrap();
            let rhs = (s * median_disparity(&d).unwrap() as f64) as f32;
            prop_assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn masked_l1_examples() {
        let a = Frame::zeros(2, 2);
        let b = Frame::from_fn(2, 2, |_, _| [1.0; 3]);
        let full = vec![true; 4];
        assert_eq!(masked_l1(&a, &a, &full).unwrap(), 0.0);
        assert_eq!(masked_l1(&a, &b, &full).unwrap(), 1.0);
        let mut c = a.clone();
        c.set_pixel(1, 1, [1.0; 3]);
        assert_eq!(masked_l1(&a, &c, &[true, true, true, false]).unwrap(), 0.0);
        assert!(matches!(
            masked_l1(&a, &b, &[false; 4]),
            Err(Error::EmptyValidSet(_))
        ));
    }

    #[test]
    fn augmented_pair_scales_conditioning() {
        let f = texture(4, 8);
        let d = DisparityMap::constant(4, 8, 4.0);
        assert_eq!(make_augmented_pair(&f, &d, 1.0).unwrap().conditioning, 4.0);
        assert_eq!(make_augmented_pair(&f, &d, 2.0).unwrap().conditioning, 8.0);
        let pairs = augment(&f, &d, &ScaleSet::default()).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!((pairs[0].conditioning - 0.05 * 4.0).abs() < 1e-12);
        assert_eq!(pairs[9].conditioning, 12.0);
        assert!(ScaleSet::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn anaglyph_channels() {
        let f = texture(3, 3);
        assert_eq!(anaglyph(&f, &f).unwrap(), f);
        let red = Frame::from_fn(2, 2, |_, _| [1.0, 0.0, 0.0]);
        let cyan = Frame::from_fn(2, 2, |_, _| [0.0, 1.0, 1.0]);
        assert!(anaglyph(&red, &cyan)
            .unwrap()
            .data()
            .iter()
            .all(|x| *x == 1.0));
        assert!(anaglyph(&cyan, &red)
            .unwrap()
            .data()
            .iter()
            .all(|x| *x == 0.0));
        let g = texture(3, 3).crop_columns(0, 2);
        assert!(anaglyph(&f, &g).is_err());
    }
}
