//! End-to-end orchestration: coarse detections in, coarse-only and refined
//! detection sets out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{self, AnnotationSet, DetectionSet, DEFAULT_DELTAS};
use crate::geometry::{BBox, TemporalSpan, Tube};
use crate::keyframe::{select_key_samples, DEFAULT_EPSILON};
use crate::matching::{self, AnchorSet, MatchConfig};
use crate::paramtube::{MAX_ORDER, MIN_ORDER};
use crate::refine::{
    coarse_tube, refine_detection, tube_nms, CoarseDetection, RefineParams, RefinedDetection, ScorePolicy, ScoredProposal,
    DEFAULT_MAX_OUTPUTS, DEFAULT_NMS_IOU, DEFAULT_SIGMA,
};
use crate::synth::{self, ImportanceMode, SynthConfig, SynthDataset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAverage {
    #[default]
    Arithmetic,
    Geometric,
}

impl From<ScoreAverage> for ScorePolicy {
    fn from(s: ScoreAverage) -> Self {
        match s {
            ScoreAverage::Arithmetic => ScorePolicy::Arithmetic,
            ScoreAverage::Geometric => ScorePolicy::Geometric,
        }
    }
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Polynomial order of the coarse tubes.
    pub order: usize,
    /// Samples per tube.
    pub samples: usize,
    /// Segment length for anchor matching.
    pub segment_len: usize,
    pub epsilon: f64,
    pub sigma: f64,
    /// Importance threshold for key-sample selection.
    pub alpha: f64,
    pub pos_thresh: f64,
    pub neg_thresh: f64,
    pub nms_iou: f64,
    pub max_outputs: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub grid: usize,
    pub anchor_shapes: usize,
    pub score_average: ScoreAverage,
    pub importance: ImportanceMode,
    /// Orders swept by the ablation report.
    pub report_orders: Vec<usize>,
    /// Search-area scales swept by the ablation report.
    pub report_sigmas: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            order: 4,
            samples: 16,
            segment_len: matching::DEFAULT_SEGMENT_LEN,
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SIGMA,
            alpha: 0.35,
            pos_thresh: matching::DEFAULT_POS_THRESH,
            neg_thresh: matching::DEFAULT_NEG_THRESH,
            nms_iou: DEFAULT_NMS_IOU,
            max_outputs: DEFAULT_MAX_OUTPUTS,
            deltas: DEFAULT_DELTAS.to_vec(),
            seed: 7,
            grid: matching::DEFAULT_GRID,
            anchor_shapes: matching::DEFAULT_NUM_SHAPES,
            score_average: ScoreAverage::Arithmetic,
            importance: ImportanceMode::Labels,
            report_orders: vec![2, 3, 4, 5],
            report_sigmas: vec![0.4, 0.6, 0.8],
        }
    }
}

fn unit_interval(name: &'static str, v: f64, open: bool) -> Result<()> {
    let ok = if open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} outside the allowed range")))
    }
}

impl PipelineConfig {
    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            segment_len: self.segment_len,
            pos_thresh: self.pos_thresh,
            neg_thresh: self.neg_thresh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_order = |k: usize| {
            if (MIN_ORDER..=MAX_ORDER).contains(&k) {
                Ok(())
            } else {
                Err(Error::OrderOutOfRange {
                    order: k,
                    min: MIN_ORDER,
                    max: MAX_ORDER,
                })
            }
        };
        check_order(self.order)?;
        for &k in &self.report_orders {
            check_order(k)?;
        }
        if self.samples < 2 {
            return Err(Error::param("samples", "need at least 2 samples"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::param("epsilon", format!("{} outside (0, 1]", self.epsilon)));
        }
        for &s in std::iter::once(&self.sigma).chain(&self.report_sigmas) {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("sigma", format!("{s} must be non-negative")));
            }
        }
        unit_interval("alpha", self.alpha, false)?;
        unit_interval("nms_iou", self.nms_iou, false)?;
        for &d in &self.deltas {
            unit_interval("deltas", d, true)?;
        }
        if self.max_outputs < 1 {
            return Err(Error::param("max_outputs", "must be at least 1"));
        }
        if self.grid < 1 || self.anchor_shapes < 1 {
            return Err(Error::param("anchors", "grid and shape count must be at least 1"));
        }
        if let ImportanceMode::Noisy(r) = self.importance {
            unit_interval("importance rate", r, false)?;
        }
        self.match_config().validate()
    }

    /// Named presets of dataset-specific defaults.
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::default();
        match name {
            "ucf101-24" => Some(Self {
                samples: 16,
                order: 4,
                sigma: 0.8,
                report_orders: vec![2, 3, 4, 5],
                ..base
            }),
            "jhmdb-21" => Some(Self {
                samples: 6,
                order: 2,
                sigma: 0.8,
                report_orders: vec![1, 2, 3],
                ..base
            }),
            "ucfsports" => Some(Self {
                samples: 8,
                order: 3,
                sigma: 0.8,
                ..base
            }),
            _ => None,
        }
    }
}

/// Frames per video for a preset.
pub fn preset_frames(name: &str) -> Option<usize> {
    match name {
        "ucf101-24" => Some(96),
        "jhmdb-21" | "ucfsports" => Some(32),
        _ => None,
    }
}

/// One video with everything attached to it: ground truth, coarse-stage
/// output, proposals, importance scores and final detections. Any part may
/// be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub id: String,
    pub span: TemporalSpan,
    pub tubes: Vec<Tube>,
    pub coarse: Vec<CoarseDetection>,
    pub proposals: Vec<ScoredProposal>,
    /// Per-sample importance; empty means no sample is selected.
    pub importance: Vec<f64>,
    pub detections: Vec<RefinedDetection>,
}

/// Collects ground truth per video.
pub fn annotations(videos: &[VideoData]) -> AnnotationSet {
    AnnotationSet {
        videos: videos.iter().map(|v| (v.id.clone(), v.tubes.clone())).collect(),
    }
}

/// Collects final detections per video.
pub fn detections(videos: &[VideoData]) -> DetectionSet {
    DetectionSet {
        videos: videos.iter().map(|v| (v.id.clone(), v.detections.clone())).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub samples: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub nms_iou: f64,
    pub max_outputs: usize,
    pub policy: ScorePolicy,
}

impl From<&PipelineConfig> for StageParams {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            samples: c.samples,
            sigma: c.sigma,
            alpha: c.alpha,
            nms_iou: c.nms_iou,
            max_outputs: c.max_outputs,
            policy: c.score_average.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutput {
    pub coarse: Vec<RefinedDetection>,
    pub refined: Vec<RefinedDetection>,
}

/// Coarse-only and refined detections for one video, each after tube NMS.
pub fn run_video(input: &VideoData, p: &StageParams) -> Result<VideoOutput> {
    if !input.importance.is_empty() && input.importance.len() != p.samples {
        return Err(Error::param(
            "importance",
            format!("video {} has {} scores for {} samples", input.id, input.importance.len(), p.samples),
        ));
    }
    let selected = select_key_samples(&input.importance, p.alpha);
    let params = RefineParams {
        samples: p.samples,
        sigma: p.sigma,
        policy: p.policy,
    };
    let mut coarse = Vec::with_capacity(input.coarse.len());
    let mut refined = Vec::with_capacity(input.coarse.len());
    for det in &input.coarse {
        coarse.push(coarse_tube(det, p.samples, p.policy)?);
        refined.push(refine_detection(det, &input.proposals, &selected, &params)?);
    }
    Ok(VideoOutput {
        coarse: tube_nms(&coarse, p.nms_iou, p.max_outputs),
        refined: tube_nms(&refined, p.nms_iou, p.max_outputs),
    })
}

/// Runs every video (in parallel) and collects both detection sets.
pub fn run_all(inputs: &[VideoData], p: &StageParams) -> Result<(DetectionSet, DetectionSet)> {
    let outputs: Vec<VideoOutput> = inputs.par_iter().map(|v| run_video(v, p)).collect::<Result<_>>()?;
    let mut coarse = DetectionSet::default();
    let mut refined = DetectionSet::default();
    for (input, out) in inputs.iter().zip(outputs) {
        coarse.videos.insert(input.id.clone(), out.coarse);
        refined.videos.insert(input.id.clone(), out.refined);
    }
    Ok((coarse, refined))
}

/// Anchor set clustered from every ground-truth box of the dataset.
pub fn dataset_anchors(tubes: &[&Tube], cfg: &PipelineConfig) -> Result<AnchorSet> {
    let boxes: Vec<BBox> = tubes.iter().flat_map(|t| t.boxes().copied()).collect();
    let shapes = matching::cluster_anchors(&boxes, cfg.anchor_shapes, cfg.seed)?;
    AnchorSet::new(cfg.grid, shapes)
}

/// Synthetic inputs at a given polynomial order: ground truth, coarse
/// stand-in detections, proposals and importance for every video.
pub fn synthetic_inputs(
    data: &SynthDataset,
    anchors: &AnchorSet,
    order: usize,
    pipe: &PipelineConfig,
    synth_cfg: &SynthConfig,
) -> Result<Vec<VideoData>> {
    let anchor_boxes = anchors.anchors();
    let mc = pipe.match_config();
    data.videos
        .par_iter()
        .map(|v| {
            Ok(VideoData {
                id: v.id.clone(),
                span: v.span,
                tubes: v.tubes.clone(),
                coarse: synth::simulate_coarse(v.index, v.span, &v.tubes, &anchor_boxes, order, &mc, synth_cfg)?,
                proposals: synth::oracle_proposals(v, pipe.samples, synth_cfg),
                importance: synth::video_importance(v, pipe.samples, pipe.importance, pipe.epsilon, synth_cfg.seed)?,
                detections: Vec::new(),
            })
        })
        .collect()
}

/// Replaces the coarse detections of every video with stand-in output at
/// `order`. Videos are identified by position, matching the generator's
/// indexing.
pub fn resimulate_coarse(videos: &mut [VideoData], anchors: &AnchorSet, order: usize, pipe: &PipelineConfig, synth_cfg: &SynthConfig) -> Result<()> {
    let anchor_boxes = anchors.anchors();
    let mc = pipe.match_config();
    videos.par_iter_mut().enumerate().try_for_each(|(i, v)| {
        v.coarse = synth::simulate_coarse(i, v.span, &v.tubes, &anchor_boxes, order, &mc, synth_cfg)?;
        Ok(())
    })
}

/// Metrics of one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMetrics {
    pub video_map_50: f64,
    pub v_mabo: f64,
}

/// One row of the ablation grid: a refinement setting across orders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `None` for the coarse-only row.
    pub sigma: Option<f64>,
    pub cells: Vec<CellMetrics>,
}

/// Refinement setting by polynomial order grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub orders: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

fn cell(dets: &DetectionSet, gts: &AnnotationSet) -> Result<CellMetrics> {
    Ok(CellMetrics {
        video_map_50: evalkit::video_map(dets, gts, 0.5)?.map,
        v_mabo: evalkit::v_mabo(dets, gts)?,
    })
}

/// Sweeps `report_orders` by (no refinement, `report_sigmas`). Coarse
/// detections are regenerated for each order; proposals and importance
/// come from `videos` unchanged.
pub fn ablation(videos: &[VideoData], anchors: &AnchorSet, pipe: &PipelineConfig, synth_cfg: &SynthConfig) -> Result<AblationTable> {
    let gts = annotations(videos);
    let mut rows: Vec<AblationRow> = std::iter::once(None)
        .chain(pipe.report_sigmas.iter().copied().map(Some))
        .map(|sigma| AblationRow { sigma, cells: Vec::new() })
        .collect();
    let mut work = videos.to_vec();
    for &order in &pipe.report_orders {
        resimulate_coarse(&mut work, anchors, order, pipe, synth_cfg)?;
        let mut params = StageParams::from(pipe);
        let (coarse, _) = run_all(&work, &params)?;
        rows[0].cells.push(cell(&coarse, &gts)?);
        for row in rows.iter_mut().skip(1) {
            params.sigma = row.sigma.expect("refined rows carry sigma");
            let (_, refined) = run_all(&work, &params)?;
            row.cells.push(cell(&refined, &gts)?);
        }
    }
    Ok(AblationTable {
        orders: pipe.report_orders.clone(),
        rows,
    })
}
