use proptest::prelude::*;

use stereo_eval::flow::{endpoint_error, optical_flow, FlowConfig};
use stereo_eval::harness::{degrade, DegradationKind, ProtocolConfig, ProtocolRun};
use stereo_eval::matching::{matchability_error, MatchSet};
use stereo_eval::media::{load_frame, save_frame};
use stereo_eval::quality::{patch_psnr, psnr, ssim, PatchPsnrConfig, PSNR_CAP};
use stereo_eval::stereo::{align_lsq, estimate_disparity, SgmConfig};
use stereo_eval::warp::forward_warp;
use stereo_eval::{DisparityMap, Frame, StereoClip, VideoClip};

fn frame(h: usize, w: usize) -> impl Strategy<Value = Frame> {
    prop::collection::vec(0u8..=255, h * w * 3)
        .prop_map(move |b| Frame::from_rgb8(h, w, &b).unwrap())
}

fn sized_frame() -> impl Strategy<Value = Frame> {
    (11usize..24, 11usize..24).prop_flat_map(|(h, w)| frame(h, w))
}

fn frame_pair() -> impl Strategy<Value = (Frame, Frame)> {
    (11usize..24, 11usize..24).prop_flat_map(|(h, w)| (frame(h, w), frame(h, w)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn png_round_trip_is_exact(f in sized_frame()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        save_frame(&f, &p).unwrap();
        let back = load_frame(&p).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(load_frame(&p).unwrap(), back);
    }

    #[test]
    fn pfm_round_trip_is_exact(
        values in prop::collection::vec(prop_oneof![
            4 => -1e6f32..1e6,
            1 => Just(f32::INFINITY),
            1 => Just(f32::NAN),
        ], 1..200),
        width in 1usize..20,
    ) {
        let h = values.len() / width;
        prop_assume!(h > 0);
        let values = values[..h * width].to_vec();
        let d = DisparityMap::from_values(h, width, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        d.save_pfm(&p).unwrap();
        prop_assert_eq!(DisparityMap::load_pfm(&p).unwrap(), d);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric((a, b) in frame_pair()) {
        prop_assert_eq!(psnr(&a, &b, PSNR_CAP).unwrap(), psnr(&b, &a, PSNR_CAP).unwrap());
        let (s_ab, s_ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s_ab - s_ba).abs() <= 1e-12);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(
        f in sized_frame(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f32> = (0..f.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (h, w) = f.dims();
        let noisy = |lambda: f32| {
            Frame::from_fn(h, w, |u, v| {
                let i = (v * w + u) * 3;
                let px = f.pixel(u, v);
                [0, 1, 2].map(|c| px[c] + lambda * noise[i + c])
            })
        };
        // clamping to [0, 1] keeps each sample's error non-decreasing in lambda
        let scores: Vec<f64> = [0.01f32, 0.05, 0.2]
            .iter()
            .map(|l| psnr(&f, &noisy(*l), PSNR_CAP).unwrap())
            .collect();
        prop_assert!(scores.windows(2).all(|s| s[1] <= s[0]));
    }

    #[test]
    fn patch_psnr_dominates_psnr((a, b) in (16usize..40, 16usize..40)
        .prop_flat_map(|(h, w)| (frame(h, w), frame(h, w))))
    {
        let cfg = PatchPsnrConfig { patch: 8, stride: 8, search_range: 4, psnr_cap: PSNR_CAP };
        prop_assert!(patch_psnr(&a, &b, &cfg).unwrap() >= psnr(&a, &b, PSNR_CAP).unwrap() - 1e-9);
    }

    #[test]
    fn matchability_swap_exchanges_fp_and_fn(
        a in prop::collection::btree_set((0usize..30, 0usize..30), 0..40),
        b in prop::collection::btree_set((0usize..30, 0usize..30), 0..40),
    ) {
        let (sa, sb): (MatchSet, MatchSet) = (a.into_iter().collect(), b.into_iter().collect());
        let ab = matchability_error(&sa, &sb);
        let ba = matchability_error(&sb, &sa);
        prop_assert_eq!(ab.error, ba.error);
        prop_assert_eq!((ab.n_tp, ab.n_fp, ab.n_fn), (ba.n_tp, ba.n_fn, ba.n_fp));
        prop_assert!((0.0..=1.0).contains(&ab.error));
    }

    #[test]
    fn warp_valid_pixels_come_from_the_input(
        f in frame(8, 16),
        d in prop::collection::vec(-4i32..8, 8 * 16),
        s in 0.1f64..3.0,
    ) {
        let map = DisparityMap::from_values(8, 16, d.iter().map(|x| *x as f32).collect()).unwrap();
        let out = forward_warp(&f, &map, s).unwrap();
        let inputs: Vec<[f32; 3]> = (0..8).flat_map(|v| (0..16).map(move |u| (u, v)))
            .map(|(u, v)| f.pixel(u, v)).collect();
        for v in 0..8 {
            for u in 0..16 {
                if out.valid[v * 16 + u] {
                    prop_assert!(inputs.contains(&out.image.pixel(u, v)));
                }
            }
        }
    }

    #[test]
    fn align_matches_normal_equations(
        pairs in prop::collection::vec((-50.0f32..50.0, -50.0f32..50.0), 2..300),
    ) {
        let n = pairs.len();
        let pred = DisparityMap::from_values(1, n, pairs.iter().map(|p| p.0).collect()).unwrap();
        let gt = DisparityMap::from_values(1, n, pairs.iter().map(|p| p.1).collect()).unwrap();
        let (mut spp, mut sp, mut spg, mut sg) = (0.0f64, 0.0, 0.0, 0.0);
        for (p, g) in &pairs {
            let (p, g) = (*p as f64, *g as f64);
            spp += p * p;
            sp += p;
            spg += p * g;
            sg += g;
        }
        let det = spp * n as f64 - sp * sp;
        prop_assume!(det.abs() > 1e-6 * spp.max(1.0) * n as f64);
        let a = (spg * n as f64 - sp * sg) / det;
        let b = (spp * sg - sp * spg) / det;
        let fit = align_lsq(&pred, &gt).unwrap();
        prop_assert!((fit.a - a).abs() <= 1e-9 * a.abs().max(1.0));
        prop_assert!((fit.b - b).abs() <= 1e-9 * b.abs().max(1.0) * 10.0);
    }

    #[test]
    fn epe_is_non_negative_and_symmetric(
        (f0, f1, f2) in (20usize..32, 20usize..32)
            .prop_flat_map(|(h, w)| (frame(h, w), frame(h, w), frame(h, w))),
    ) {
        let cfg = FlowConfig { levels: 1, block: 5, radius: 2 };
        let a = optical_flow(&f0, &f1, &cfg).unwrap();
        let b = optical_flow(&f0, &f2, &cfg).unwrap();
        let (s_ab, n_ab) = endpoint_error(&a, &b).unwrap();
        let (s_ba, n_ba) = endpoint_error(&b, &a).unwrap();
        prop_assert!(s_ab >= 0.0);
        prop_assert_eq!((s_ab, n_ab), (s_ba, n_ba));
        let still = optical_flow(&f0, &f0, &cfg).unwrap();
        prop_assert!(still.vectors.iter().all(|v| *v == [0.0, 0.0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sgm_values_stay_in_range(
        (l, r) in (24usize..40, 40usize..64).prop_flat_map(|(h, w)| (frame(h, w), frame(h, w))),
        d_min in -6i32..0,
        span in 2i32..12,
    ) {
        let cfg = SgmConfig { d_min, d_max: d_min + span, ..SgmConfig::default() };
        let est = estimate_disparity(&l, &r, &cfg).unwrap();
        for x in est.valid_values() {
            prop_assert!(x >= d_min as f32 && x <= (d_min + span) as f32);
        }
    }

    #[test]
    fn level_zero_degradation_is_identity(
        (l, g, c) in (24usize..40, 24usize..40)
            .prop_flat_map(|(h, w)| (frame(h, w), frame(h, w), frame(h, w))),
    ) {
        let clip = |f: &Frame| VideoClip::new(vec![f.clone()]).unwrap();
        let run = ProtocolRun::new(
            StereoClip::new(clip(&l), clip(&g)).unwrap(),
            clip(&c),
            Vec::new(),
            ProtocolConfig::default(),
        )
        .unwrap();
        for kind in [DegradationKind::HorizontalShift, DegradationKind::GaussianBlur] {
            let d = degrade(&run, kind, 0.0).unwrap();
            prop_assert_eq!(&d.candidate, &run.candidate);
            prop_assert_eq!(&d.left, &run.input.left);
            prop_assert_eq!(&d.gt_right, &run.input.right);
        }
    }
}
