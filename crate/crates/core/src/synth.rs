//! Deterministic synthetic data standing in for the learned components.
//!
//! Every generator is a pure function of its configuration: each video
//! draws from its own ChaCha stream derived from `(seed, video index,
//! purpose)`, so videos can be produced in any order or in parallel.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::AnnotationSet;
use crate::geometry::{box_iou, tube_iou, BBox, TemporalSpan, Tube, TubeFrame};
use crate::keyframe::{greedy_keyframe_labels, sample_grid};
use crate::matching::{best_anchor, MatchConfig};
use crate::paramtube::{fit_tube_lsq, PolyTubeParams};
use crate::refine::{CoarseDetection, ScoredProposal};

/// How far (in normalized image units) a box may extend past the frame.
pub const FRAME_TOLERANCE: f64 = 0.02;
pub const MAX_RETRIES: usize = 200;
/// Largest per-frame IOU allowed between two instances of one video.
pub const MAX_INSTANCE_OVERLAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub videos: usize,
    /// Frames per video.
    pub frames: usize,
    pub classes: u32,
    pub max_instances: usize,
    /// Polynomial order of the base trajectories.
    pub motion_order: usize,
    /// Largest center displacement along a tube, in image units.
    pub motion_amplitude: f64,
    /// Largest absolute log change of width and height along a tube.
    pub size_amplitude: f64,
    /// Per-frame jitter relative to the box size.
    pub jitter: f64,
    /// Shortest tube as a fraction of the video length.
    pub min_tube_fraction: f64,
    /// Frames added on each side of the ground-truth span.
    pub span_padding: usize,
    pub proposal_noise: f64,
    pub proposals_per_sample: usize,
    pub distractors_per_sample: usize,
    /// Correlation between proposal score and IOU to the ground truth.
    pub proposal_fidelity: f64,
    /// Standard deviation of the error added to fitted coarse parameters.
    pub coarse_noise: f64,
    pub misclassification_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            videos: 50,
            frames: 96,
            classes: 5,
            max_instances: 3,
            motion_order: 4,
            motion_amplitude: 0.2,
            size_amplitude: 0.3,
            jitter: 0.05,
            min_tube_fraction: 0.4,
            span_padding: 0,
            proposal_noise: 0.05,
            proposals_per_sample: 4,
            distractors_per_sample: 2,
            proposal_fidelity: 0.8,
            coarse_noise: 0.15,
            misclassification_rate: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("videos", self.videos),
            ("max_instances", self.max_instances),
            ("motion_order", self.motion_order),
            ("proposals_per_sample", self.proposals_per_sample),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.classes < 1 {
            return Err(Error::param("classes", "must be at least 1"));
        }
        if self.frames < 4 {
            return Err(Error::param("frames", format!("need at least 4 frames, got {}", self.frames)));
        }
        let amplitudes = [
            ("motion_amplitude", self.motion_amplitude),
            ("size_amplitude", self.size_amplitude),
            ("proposal_noise", self.proposal_noise),
            ("coarse_noise", self.coarse_noise),
        ];
        for (name, v) in amplitudes {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::param("jitter", format!("must lie in [0, 1), got {}", self.jitter)));
        }
        let unit = [
            ("proposal_fidelity", self.proposal_fidelity),
            ("misclassification_rate", self.misclassification_rate),
            ("min_tube_fraction", self.min_tube_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Independent random streams of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Geometry = 0,
    Proposals = 1,
    Coarse = 2,
    Importance = 3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one (video, purpose) pair.
pub fn stream_rng(seed: u64, video: usize, stream: Stream) -> ChaCha8Rng {
    let s = splitmix(splitmix(seed ^ splitmix(video as u64)) ^ stream as u64);
    ChaCha8Rng::seed_from_u64(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub index: usize,
    pub label: u32,
    /// Temporal proposal for the video (ground-truth span plus padding).
    pub span: TemporalSpan,
    pub tubes: Vec<Tube>,
    /// Smooth trajectories before jitter, aligned with `tubes`.
    pub base_tubes: Vec<Tube>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub videos: Vec<SynthVideo>,
}

impl SynthDataset {
    pub fn annotations(&self) -> AnnotationSet {
        AnnotationSet {
            videos: self.videos.iter().map(|v| (v.id.clone(), v.tubes.clone())).collect(),
        }
    }
}

pub fn video_id(index: usize) -> String {
    format!("vid_{index:04}")
}

/// Polynomial `Σ_{j=1..order} a_j u^j` with random coefficients rescaled so
/// that its largest magnitude over `u ∈ [0, 1]` equals `peak`.
fn random_poly(rng: &mut ChaCha8Rng, order: usize, peak: f64) -> Vec<f64> {
    let mut coeffs = vec![0.0];
    coeffs.extend((0..order).map(|_| rng.random_range(-1.0..1.0)));
    let eval = |c: &[f64], u: f64| c.iter().rev().fold(0.0, |acc, &a| acc * u + a);
    let max = (0..=200).map(|i| eval(&coeffs, i as f64 / 200.0).abs()).fold(0.0, f64::max);
    if max > 1e-12 {
        for c in &mut coeffs {
            *c *= peak / max;
        }
    } else {
        coeffs.iter_mut().for_each(|c| *c = 0.0);
    }
    coeffs
}

fn eval_poly(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * u + a)
}

fn inside_frame(b: &BBox) -> bool {
    let c = b.to_corners();
    c[0] >= -FRAME_TOLERANCE && c[1] >= -FRAME_TOLERANCE && c[2] <= 1.0 + FRAME_TOLERANCE && c[3] <= 1.0 + FRAME_TOLERANCE
}

/// Intersection with the unit frame.
fn clip_to_frame(b: &BBox) -> Result<BBox> {
    let c = b.to_corners();
    BBox::from_corners(c[0].max(0.0), c[1].max(0.0), c[2].min(1.0), c[3].min(1.0))
}

/// One ground-truth instance: smooth base trajectory plus bounded jitter.
fn gen_instance(rng: &mut ChaCha8Rng, cfg: &SynthConfig, label: u32, start: i64, len: usize) -> Result<(Tube, Tube)> {
    let w0 = rng.random_range(0.08..0.3);
    let h0 = rng.random_range(0.15..0.45);
    let cx0 = rng.random_range(0.2..0.8);
    let cy0 = rng.random_range(0.25..0.75);
    let m = cfg.motion_order;
    let mut poly = |amplitude: f64, lo: f64| {
        let peak = amplitude * rng.random_range(lo..1.0);
        random_poly(rng, m, peak)
    };
    let px = poly(cfg.motion_amplitude, 0.3);
    let py = poly(cfg.motion_amplitude, 0.3);
    let pw = poly(cfg.size_amplitude, 0.0);
    let ph = poly(cfg.size_amplitude, 0.0);
    let mut base = Vec::with_capacity(len);
    let mut jittered = Vec::with_capacity(len);
    let j = cfg.jitter;
    for i in 0..len {
        let u = i as f64 / (len - 1) as f64;
        let bw = w0 * eval_poly(&pw, u).exp();
        let bh = h0 * eval_poly(&ph, u).exp();
        let b = BBox::new(cx0 + eval_poly(&px, u), cy0 + eval_poly(&py, u), bw, bh)?;
        let (dx, dy, sw, sh) = if j > 0.0 {
            (
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
                rng.random_range(-j..=j),
            )
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        let mut jb = BBox::new(b.cx() + dx * bw, b.cy() + dy * bh, bw * (1.0 + sw), bh * (1.0 + sh))?;
        if !inside_frame(&jb) {
            jb = clip_to_frame(&jb)?;
        }
        base.push(TubeFrame::new(start + i as i64, b));
        jittered.push(TubeFrame::new(start + i as i64, jb));
    }
    Ok((Tube::new(label, jittered)?, Tube::new(label, base)?))
}

fn max_frame_iou(a: &Tube, b: &Tube) -> f64 {
    a.frames()
        .iter()
        .filter_map(|f| b.box_at(f.t).map(|g| box_iou(&f.bbox, g)))
        .fold(0.0, f64::max)
}

/// Generates one video; all instances share the video's class and span.
pub fn gen_video(cfg: &SynthConfig, index: usize) -> Result<SynthVideo> {
    let mut rng = stream_rng(cfg.seed, index, Stream::Geometry);
    let label = rng.random_range(0..cfg.classes);
    let instances = rng.random_range(1..=cfg.max_instances);
    let t = cfg.frames;
    let min_len = ((cfg.min_tube_fraction * t as f64).ceil() as usize).clamp(4, t);
    let len = rng.random_range(min_len..=t);
    let start = rng.random_range(0..=(t - len)) as i64;

    let mut tubes: Vec<Tube> = Vec::new();
    let mut bases: Vec<Tube> = Vec::new();
    for _ in 0..instances {
        let mut placed = false;
        for _ in 0..MAX_RETRIES {
            let (tube, base) = gen_instance(&mut rng, cfg, label, start, len)?;
            if !base.boxes().all(inside_frame) {
                continue;
            }
            if bases.iter().any(|o| max_frame_iou(o, &base) > MAX_INSTANCE_OVERLAP) {
                continue;
            }
            tubes.push(tube);
            bases.push(base);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Infeasible { retries: MAX_RETRIES });
        }
    }
    let pad = cfg.span_padding as i64;
    let span = TemporalSpan::new((start - pad).max(0), (start + len as i64 - 1 + pad).min(t as i64 - 1))?;
    Ok(SynthVideo {
        id: video_id(index),
        index,
        label,
        span,
        tubes,
        base_tubes: bases,
    })
}

pub fn gen_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let videos = (0..cfg.videos).into_par_iter().map(|i| gen_video(cfg, i)).collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { videos })
}

fn perturb(rng: &mut ChaCha8Rng, b: &BBox, noise: f64) -> BBox {
    if noise == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, noise).expect("non-negative noise");
    BBox::clamped(
        b.cx() + n.sample(rng) * b.w(),
        b.cy() + n.sample(rng) * b.h(),
        b.w() * n.sample(rng).exp(),
        b.h() * n.sample(rng).exp(),
    )
}

/// A box of similar size placed away from every ground-truth box.
fn distractor(rng: &mut ChaCha8Rng, like: &BBox, gts: &[BBox]) -> Option<BBox> {
    for _ in 0..50 {
        let w = like.w() * rng.random_range(0.7..1.3);
        let h = like.h() * rng.random_range(0.7..1.3);
        let b = BBox::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), w, h).ok()?;
        if gts.iter().all(|g| box_iou(&b, g) < 0.1) {
            return Some(b);
        }
    }
    None
}

fn iou_to_gt(b: &BBox, gts: &[BBox]) -> f64 {
    gts.iter().map(|g| box_iou(b, g)).fold(0.0, f64::max)
}

/// Proposals for every sample of the video's span.
///
/// At each sample frame every ground-truth box yields
/// `proposals_per_sample` noisy copies plus `distractors_per_sample` boxes
/// placed away from all ground truth. Scores mix the proposal's IOU to the
/// ground truth with an independent draw from the same IOU distribution so
/// that their correlation equals `proposal_fidelity`.
pub fn oracle_proposals(video: &SynthVideo, samples: usize, cfg: &SynthConfig) -> Vec<ScoredProposal> {
    let mut rng = stream_rng(cfg.seed, video.index, Stream::Proposals);
    let f = cfg.proposal_fidelity;
    let g = (1.0 - f * f).max(0.0).sqrt();
    let copies = cfg.proposals_per_sample;
    let distractors = cfg.distractors_per_sample;
    let mut out = Vec::new();
    for (i, s) in sample_grid(samples).into_iter().enumerate() {
        let frame = video.span.frame_at(s);
        let gts: Vec<BBox> = video.tubes.iter().filter_map(|t| t.box_at(frame).copied()).collect();
        if gts.is_empty() {
            continue;
        }
        let mut boxes = Vec::new();
        for gt in &gts {
            for _ in 0..copies {
                boxes.push(perturb(&mut rng, gt, cfg.proposal_noise));
            }
            for _ in 0..distractors {
                if let Some(d) = distractor(&mut rng, gt, &gts) {
                    boxes.push(d);
                }
            }
        }
        for bbox in boxes {
            let iou = iou_to_gt(&bbox, &gts);
            // phantom proposal drawn from the same mixture
            let like = gts[rng.random_range(0..gts.len())];
            let phantom = if rng.random_range(0..copies + distractors) < copies {
                Some(perturb(&mut rng, &like, cfg.proposal_noise))
            } else {
                distractor(&mut rng, &like, &gts)
            };
            let v = phantom.map(|p| iou_to_gt(&p, &gts)).unwrap_or(0.0);
            let score = if f + g > 0.0 { (f * iou + g * v) / (f + g) } else { 0.0 };
            out.push(ScoredProposal {
                bbox,
                score: score.clamp(0.0, 1.0),
                sample_index: i,
            });
        }
    }
    out
}

/// Source of the per-sample importance scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "rate")]
pub enum ImportanceMode {
    /// The greedy key-timestamp labels themselves.
    Labels,
    /// Labels with each entry flipped with the given probability.
    Noisy(f64),
    /// Every sample scored 0.5.
    Uniform,
}

pub fn oracle_importance<R: Rng>(tube: &Tube, samples: usize, mode: ImportanceMode, epsilon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    match mode {
        ImportanceMode::Uniform => Ok(vec![0.5; samples]),
        ImportanceMode::Labels => Ok(greedy_keyframe_labels(tube, samples, epsilon)?
            .labels
            .iter()
            .map(|&l| l as f64)
            .collect()),
        ImportanceMode::Noisy(rate) => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::param("noise rate", format!("must lie in [0, 1], got {rate}")));
            }
            let labels = greedy_keyframe_labels(tube, samples, epsilon)?.labels;
            Ok(labels
                .iter()
                .map(|&l| {
                    let flip = rng.random_bool(rate);
                    if flip { 1.0 - l as f64 } else { l as f64 }
                })
                .collect())
        }
    }
}

/// Video-level importance: element-wise maximum over the instances.
pub fn video_importance(video: &SynthVideo, samples: usize, mode: ImportanceMode, epsilon: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, video.index, Stream::Importance);
    let mut out = vec![0.0f64; samples];
    for tube in &video.tubes {
        let p = oracle_importance(tube, samples, mode, epsilon, &mut rng)?;
        for (o, v) in out.iter_mut().zip(p) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// Stand-in for the coarse stage: each ground-truth tube is matched to its
/// best anchor, fitted at `order`, and the fitted constant and linear
/// coefficients are perturbed by `coarse_noise`. Labels are swapped with
/// probability `misclassification_rate`.
pub fn simulate_coarse(
    video_index: usize,
    span: TemporalSpan,
    tubes: &[Tube],
    anchors: &[BBox],
    order: usize,
    match_cfg: &MatchConfig,
    cfg: &SynthConfig,
) -> Result<Vec<CoarseDetection>> {
    let mut rng = stream_rng(cfg.seed, video_index, Stream::Coarse);
    let noise = Normal::new(0.0, cfg.coarse_noise).map_err(|e| Error::param("coarse_noise", e.to_string()))?;
    let mut out = Vec::with_capacity(tubes.len());
    for tube in tubes {
        let a = best_anchor(anchors, tube, match_cfg).ok_or_else(|| Error::param("anchors", "empty anchor set"))?;
        let anchor = anchors[a];
        let fit = fit_tube_lsq(tube, &anchor, order)?;
        let mut coeffs = fit.coefficients().clone();
        // same draws for every order so that coarse error differs only by fit quality
        for (c, poly) in coeffs.iter_mut().enumerate() {
            let scale = if c < 2 { 1.0 } else { 0.5 };
            poly[0] += scale * noise.sample(&mut rng);
            poly[1] += scale * noise.sample(&mut rng);
        }
        let mut label = tube.label();
        let swap = rng.random_bool(cfg.misclassification_rate);
        let other = rng.random_range(0..cfg.classes.max(2) - 1);
        if swap && cfg.classes > 1 {
            label = if other >= label { other + 1 } else { other };
        }
        let cls_score = rng.random_range(0.3..1.0);
        out.push(CoarseDetection {
            params: PolyTubeParams::new(coeffs)?,
            anchor,
            span,
            label,
            cls_score,
        });
    }
    Ok(out)
}

/// Largest per-coordinate jitter of `tube` relative to `base`, measured in
/// the same relative units as [`SynthConfig::jitter`].
pub fn max_jitter(tube: &Tube, base: &Tube) -> f64 {
    tube.frames()
        .iter()
        .zip(base.frames())
        .map(|(f, b)| {
            let (j, o) = (f.bbox, b.bbox);
            [
                (j.cx() - o.cx()).abs() / o.w(),
                (j.cy() - o.cy()).abs() / o.h(),
                (j.w() / o.w() - 1.0).abs(),
                (j.h() / o.h() - 1.0).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Overlap between the instances of a video (largest pairwise tube IOU).
pub fn instance_overlap(video: &SynthVideo) -> f64 {
    let mut m: f64 = 0.0;
    for (i, a) in video.tubes.iter().enumerate() {
        for b in &video.tubes[i + 1..] {
            m = m.max(tube_iou(a, b));
        }
    }
    m
}
