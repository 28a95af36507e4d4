use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stereo_eval::attention::{
    attention_memory_model, epipolar_attention, masked_full_attention, AttentionMode,
    AttentionWeights, FeatureMap,
};
use stereo_eval::flow::{temporal_error, FlowConfig};
use stereo_eval::harness::{
    make_synthetic_scene, run_protocol, sensitivity_sweep, simulate_prediction, write_curves_csv,
    DegradationKind, DegradationSpec, DisparityProfile, GlobalInfo, ProtocolConfig, ProtocolRun,
};
use stereo_eval::matching::{
    classify_matches, detect_keypoints, match_epipolar, matchability_error, write_match_csv,
    MatchConfig,
};
use stereo_eval::media::{
    load_clip, load_disparity_dir, save_clip, save_disparity_dir, save_mask_dir, save_report,
};
use stereo_eval::quality::{clip_metric, ClipMetric, PatchPsnrConfig, PSNR_CAP};
use stereo_eval::stereo::{estimate_disparity, SgmConfig};
use stereo_eval::warp::{anaglyph, augment, forward_warp, ScaleSet};
use stereo_eval::{StereoClip, VideoClip};

#[derive(Parser)]
#[command(
    name = "stereo-eval",
    version,
    about = "Score generated right-eye views against stereo ground truth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-warp a left clip with scaled disparity.
    Convert(ConvertArgs),
    /// Warp a left clip at several baseline scales.
    Augment(AugmentArgs),
    /// Red-cyan composite of a stereo clip.
    Anaglyph(AnaglyphArgs),
    /// Compute a single metric between two clips.
    Metric(MetricArgs),
    /// Estimate disparity with semi-global matching and write PFMs.
    Disparity(DisparityArgs),
    /// Run the full protocol and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Metric curves under a degradation of the candidate.
    Sensitivity(SensitivityArgs),
    /// Generate a random-texture stereo clip with ground-truth disparity.
    Synth(SynthArgs),
    /// Time row attention and print the attention memory model.
    AttnBench(AttnBenchArgs),
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnaglyphArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Psnr,
    Ssim,
    Ppsnr,
    Match,
    Temporal,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, value_enum)]
    metric: MetricKind,
    /// Reference clip: the ground-truth right view, or the left view for ppsnr.
    #[arg(long)]
    a: PathBuf,
    /// Candidate clip.
    #[arg(long)]
    b: PathBuf,
    /// Left view, required by the match metric.
    #[arg(long)]
    left: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 16)]
    stride: usize,
    #[arg(long, default_value_t = 32)]
    range: usize,
    #[arg(long, default_value_t = PSNR_CAP)]
    cap: f64,
    /// CSV of `u,v,status` for every keypoint matched in either view (match only).
    #[arg(long)]
    dump_matches: Option<PathBuf>,
    /// Directory for per-pair flow PFMs of the candidate (temporal only).
    #[arg(long)]
    dump_flow: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SgmArgs {
    #[arg(long = "dmin", alias = "sgm-dmin", default_value_t = -16, allow_negative_numbers = true)]
    d_min: i32,
    #[arg(
        long = "dmax",
        alias = "sgm-dmax",
        default_value_t = 96,
        allow_negative_numbers = true
    )]
    d_max: i32,
    #[arg(long, default_value_t = 8)]
    p1: u32,
    #[arg(long, default_value_t = 96)]
    p2: u32,
}

impl SgmArgs {
    fn config(&self) -> SgmConfig {
        SgmConfig {
            d_min: self.d_min,
            d_max: self.d_max,
            p1: self.p1,
            p2: self.p2,
            ..SgmConfig::default()
        }
    }
}

#[derive(Args)]
struct DisparityArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sgm: SgmArgs,
}

#[derive(Args)]
struct ProtocolInputs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right_gt: PathBuf,
    #[arg(long)]
    right_pred: PathBuf,
    #[arg(long)]
    gt_disp: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    ppsnr_range: usize,
    #[arg(long, default_value_t = -16, allow_negative_numbers = true)]
    sgm_dmin: i32,
    #[arg(long, default_value_t = 96, allow_negative_numbers = true)]
    sgm_dmax: i32,
}

impl ProtocolInputs {
    fn load(&self) -> Result<ProtocolRun> {
        let left = load_clip(&self.left)?;
        let right = load_clip(&self.right_gt)?;
        let cand = load_clip(&self.right_pred)?;
        let gt_disp = match &self.gt_disp {
            Some(dir) => load_disparity_dir(dir)?,
            None => Vec::new(),
        };
        let mut cfg = ProtocolConfig::default();
        cfg.patch.search_range = self.ppsnr_range;
        cfg.sgm.d_min = self.sgm_dmin;
        cfg.sgm.d_max = self.sgm_dmax;
        let mut run = ProtocolRun::new(StereoClip::new(left, right)?, cand, gt_disp, cfg)?;
        if !run.gt_disparity.is_empty() {
            let info = GlobalInfo::median_of(&run.gt_disparity)?;
            run = run.with_global_info(info);
        }
        Ok(run)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: ProtocolInputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    inputs: ProtocolInputs,
    #[arg(long)]
    kind: DegradationKind,
    /// Shift in pixels or blur sigma.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,13,16")]
    levels: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "two_plane:0,8")]
    profile: DisparityProfile,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Also write a noisy warped prediction to `OUT/pred`.
    #[arg(long)]
    pred_noise: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Epipolar,
    Oracle,
}

#[derive(Args)]
struct AttnBenchArgs {
    #[arg(long, default_value_t = 512)]
    h: usize,
    #[arg(long, default_value_t = 512)]
    w: usize,
    #[arg(long, default_value_t = 16)]
    c: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, value_enum, default_value = "epipolar")]
    mode: BenchMode,
    /// Weight file; random weights are used when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bytes per attention-matrix element in the memory model.
    #[arg(long, default_value_t = 2)]
    bytes: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Convert(a) => convert(a)?,
        Command::Augment(a) => augment_cmd(a)?,
        Command::Anaglyph(a) => anaglyph_cmd(a)?,
        Command::Metric(a) => metric(a)?,
        Command::Disparity(a) => disparity(a)?,
        Command::Evaluate(a) => return evaluate(a),
        Command::Sensitivity(a) => sensitivity(a)?,
        Command::Synth(a) => synth(a)?,
        Command::AttnBench(a) => attn_bench(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn load_pair(left: &Path, disp: &Path) -> Result<(VideoClip, Vec<stereo_eval::DisparityMap>)> {
    let clip = load_clip(left)?;
    let maps = load_disparity_dir(disp)?;
    if maps.len() != clip.len() {
        bail!("{} frames but {} disparity maps", clip.len(), maps.len());
    }
    Ok((clip, maps))
}

fn convert(a: ConvertArgs) -> Result<()> {
    let (clip, maps) = load_pair(&a.left, &a.disparity)?;
    let mut frames = Vec::with_capacity(clip.len());
    let mut masks = Vec::with_capacity(clip.len());
    for (f, d) in clip.frames().iter().zip(&maps) {
        let w = forward_warp(f, d, a.scale)?;
        masks.push((f.height(), f.width(), w.valid));
        frames.push(w.image);
    }
    save_clip(&VideoClip::new(frames)?.with_fps(clip.fps), &a.out)?;
    if let Some(dir) = a.mask_out {
        save_mask_dir(&masks, dir)?;
    }
    Ok(())
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let (clip, maps) = load_pair(&a.left, &a.disparity)?;
    let scales = match a.scales {
        Some(s) => ScaleSet::new(s)?,
        None => ScaleSet::default(),
    };
    let mut per_scale: Vec<(Vec<_>, Vec<_>, Vec<f64>)> =
        vec![(Vec::new(), Vec::new(), Vec::new()); scales.factors().len()];
    for (f, d) in clip.frames().iter().zip(&maps) {
        for (slot, pair) in per_scale.iter_mut().zip(augment(f, d, &scales)?) {
            slot.2.push(pair.conditioning);
            slot.1.push((f.height(), f.width(), pair.warp.valid));
            slot.0.push(pair.warp.image);
        }
    }
    let mut index = Vec::new();
    for (s, (frames, masks, cond)) in scales.factors().iter().zip(per_scale) {
        let dir = a.out.join(format!("scale_{s}"));
        save_clip(
            &VideoClip::new(frames)?.with_fps(clip.fps),
            dir.join("right"),
        )?;
        save_mask_dir(&masks, dir.join("mask"))?;
        index.push(json!({ "scale": s, "dir": dir, "conditioning": cond }));
    }
    let path = a.out.join("augment.json");
    fs::write(&path, serde_json::to_string_pretty(&index)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn anaglyph_cmd(a: AnaglyphArgs) -> Result<()> {
    let stereo = StereoClip::new(load_clip(&a.left)?, load_clip(&a.right)?)?;
    let frames = stereo
        .left
        .frames()
        .iter()
        .zip(stereo.right.frames())
        .map(|(l, r)| anaglyph(l, r))
        .collect::<stereo_eval::Result<Vec<_>>>()?;
    save_clip(&VideoClip::new(frames)?.with_fps(stereo.left.fps), &a.out)?;
    Ok(())
}

fn metric(a: MetricArgs) -> Result<()> {
    let ref_clip = load_clip(&a.a)?;
    let cand = load_clip(&a.b)?;
    let out = match a.metric {
        MetricKind::Psnr | MetricKind::Ssim | MetricKind::Ppsnr => {
            let m = match a.metric {
                MetricKind::Psnr => ClipMetric::Psnr { cap: a.cap },
                MetricKind::Ssim => ClipMetric::Ssim,
                _ => ClipMetric::PatchPsnr(PatchPsnrConfig {
                    patch: a.patch,
                    stride: a.stride,
                    search_range: a.range,
                    psnr_cap: a.cap,
                }),
            };
            let s = clip_metric(m, &ref_clip, &cand)?;
            json!({ "value": s.aggregate, "per_frame": s.per_frame, "per_frame_mse": s.per_frame_mse })
        }
        MetricKind::Match => {
            let left = load_clip(a.left.as_ref().context("--left is required for match")?)?;
            if left.len() != cand.len() || ref_clip.len() != cand.len() {
                bail!("clips differ in length");
            }
            let cfg = MatchConfig::default();
            let mut rows = Vec::new();
            let mut per_frame = Vec::new();
            for (i, ((l, g), c)) in left
                .frames()
                .iter()
                .zip(ref_clip.frames())
                .zip(cand.frames())
                .enumerate()
            {
                let kps = detect_keypoints(l, cfg.max_keypoints, cfg.nms_radius);
                let m_gt = match_epipolar(&kps, l, g, &cfg)?;
                let m_pred = match_epipolar(&kps, l, c, &cfg)?;
                let b = matchability_error(&m_gt, &m_pred);
                per_frame.push(json!({
                    "error": b.error, "tp": b.n_tp, "fp": b.n_fp, "fn": b.n_fn,
                }));
                if a.dump_matches.is_some() {
                    let status = classify_matches(&m_gt, &m_pred);
                    rows.extend(status.into_iter().map(|r| (i, r)));
                }
            }
            if let Some(path) = &a.dump_matches {
                if left.len() == 1 {
                    let flat: Vec<_> = rows.into_iter().map(|(_, r)| r).collect();
                    write_match_csv(path, &flat)?;
                } else {
                    fs::create_dir_all(path)?;
                    for i in 0..left.len() {
                        let frame: Vec<_> = rows
                            .iter()
                            .filter(|(j, _)| *j == i)
                            .map(|(_, r)| *r)
                            .collect();
                        write_match_csv(path.join(format!("{i:03}.csv")), &frame)?;
                    }
                }
            }
            let errors: Vec<f64> = per_frame
                .iter()
                .map(|f| f["error"].as_f64().unwrap_or(0.0))
                .collect();
            let value = errors.iter().sum::<f64>() / errors.len() as f64;
            json!({ "value": value, "per_frame": per_frame })
        }
        MetricKind::Temporal => {
            let cfg = FlowConfig::default();
            let r = temporal_error(&ref_clip, &cand, &cfg)?;
            if let Some(dir) = &a.dump_flow {
                fs::create_dir_all(dir)?;
                for (i, pair) in cand.frames().windows(2).enumerate() {
                    let f = stereo_eval::flow::optical_flow(&pair[0], &pair[1], &cfg)?;
                    f.save_pfm_pair(
                        dir.join(format!("{i:03}_du.pfm")),
                        dir.join(format!("{i:03}_dv.pfm")),
                    )?;
                }
            }
            json!({ "value": r.value, "per_pair": r.per_pair, "per_pair_pixels": r.per_pair_pixels })
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn disparity(a: DisparityArgs) -> Result<()> {
    let stereo = StereoClip::new(load_clip(&a.left)?, load_clip(&a.right)?)?;
    let cfg = a.sgm.config();
    let maps = stereo
        .left
        .frames()
        .iter()
        .zip(stereo.right.frames())
        .map(|(l, r)| estimate_disparity(l, r, &cfg))
        .collect::<stereo_eval::Result<Vec<_>>>()?;
    save_disparity_dir(&maps, &a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let run = a.inputs.load()?;
    let report = run_protocol(&run);
    save_report(&report, &a.out)?;
    let failures = report.failures();
    for (name, err) in &failures {
        eprintln!("metric {name} failed: {err}");
    }
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let run = a.inputs.load()?;
    let spec = DegradationSpec::new(a.kind, a.levels)?;
    let rows = sensitivity_sweep(&run, &spec)?;
    write_curves_csv(&a.out, &rows)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let scene = make_synthetic_scene(a.seed, a.width, a.height, a.frames, &a.profile)?;
    save_clip(&scene.stereo.left, a.out.join("left"))?;
    save_clip(&scene.stereo.right, a.out.join("right"))?;
    save_disparity_dir(&scene.disparity, a.out.join("disp"))?;
    if let Some(sigma) = a.pred_noise {
        let pred = simulate_prediction(&scene, sigma, a.seed)?;
        save_clip(&pred, a.out.join("pred"))?;
    }
    Ok(())
}

fn attn_bench(a: AttnBenchArgs) -> Result<()> {
    let weights = match &a.weights {
        Some(p) => AttentionWeights::load(p)?,
        None => AttentionWeights::random(a.c, a.d, a.seed)?,
    };
    if weights.channels() != a.c {
        bail!(
            "weights have {} channels, --c is {}",
            weights.channels(),
            a.c
        );
    }
    let h = FeatureMap::random(a.h, a.w, a.c, a.seed.wrapping_add(1));
    let g = FeatureMap::random(a.h, a.w, a.c, a.seed.wrapping_add(2));
    let start = Instant::now();
    let out = match a.mode {
        BenchMode::Epipolar => epipolar_attention(&h, &g, &weights)?,
        BenchMode::Oracle => masked_full_attention(&h, &g, &weights)?,
    };
    let elapsed = start.elapsed();
    let checksum: f64 = out.data().iter().map(|x| *x as f64).sum();
    let (hh, ww) = (a.h as u64, a.w as u64);
    let report = json!({
        "mode": match a.mode { BenchMode::Epipolar => "epipolar", BenchMode::Oracle => "oracle" },
        "shape": [a.h, a.w, a.c],
        "head_dim": weights.head_dim(),
        "seconds": elapsed.as_secs_f64(),
        "checksum": checksum,
        "memory_bytes": {
            "epipolar": attention_memory_model(hh, ww, a.bytes, AttentionMode::Epipolar).to_string(),
            "full": attention_memory_model(hh, ww, a.bytes, AttentionMode::Full).to_string(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
