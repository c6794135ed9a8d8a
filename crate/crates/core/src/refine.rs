//! Selective refinement of coarse tubes.
//!
//! Coarse boxes are sampled from the tube polynomial at `N` uniform times.
//! At selected samples the coarse box is replaced by the best-scoring
//! proposal whose center lies in a search area around it, and the final
//! tube is a spline through all `N` sample boxes over the detection span.

use crate::error::{Error, Result};
use crate::geometry::{tube_iou, BBox, BoxSpline, TemporalSpan, Tube, TubeFrame};
use crate::keyframe::sample_grid;
use crate::paramtube::{decode, PolyTubeParams};

pub const DEFAULT_SIGMA: f64 = 0.8;
pub const DEFAULT_NMS_IOU: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUTS: usize = 3;

/// Box proposal attached to a sample index, scored for the detection's class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredProposal {
    pub bbox: BBox,
    pub score: f64,
    pub sample_index: usize,
}

/// Output of the coarse stage for one tube.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseDetection {
    pub params: PolyTubeParams,
    pub anchor: BBox,
    pub span: TemporalSpan,
    pub label: u32,
    pub cls_score: f64,
}

impl CoarseDetection {
    pub fn validate(&self) -> Result<()> {
        check_unit("cls_score", self.cls_score)
    }
}

/// Final tube detection.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedDetection {
    pub tube: Tube,
    pub score: f64,
    /// Sample indices whose coarse box was replaced by a proposal.
    pub refined_indices: Vec<usize>,
}

impl RefinedDetection {
    pub fn label(&self) -> u32 {
        self.tube.label()
    }
}

fn check_unit(what: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value: v,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

/// Coarse boxes at the `n` uniform sample times.
pub fn sample_coarse_boxes(det: &CoarseDetection, n: usize) -> Vec<(f64, BBox)> {
    sample_grid(n)
        .into_iter()
        .map(|s| (s, decode(&det.params.eval_encoded(s), &det.anchor)))
        .collect()
}

/// Closed rectangle of admissible proposal centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchArea {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SearchArea {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// `[cx - σw, cx + σw] × [cy - σh, cy + σh]`.
pub fn search_area(bbox: &BBox, sigma: f64) -> Result<SearchArea> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("must be finite and non-negative, got {sigma}")));
    }
    Ok(SearchArea {
        x_min: bbox.cx() - sigma * bbox.w(),
        x_max: bbox.cx() + sigma * bbox.w(),
        y_min: bbox.cy() - sigma * bbox.h(),
        y_max: bbox.cy() + sigma * bbox.h(),
    })
}

/// Replaces `coarse` by the highest-scoring proposal centered inside its
/// search area. Score ties go to the proposal whose center is closest to
/// the coarse center, then to the earlier proposal. Returns the coarse box
/// and no score when nothing qualifies.
pub fn refine_box(coarse: &BBox, proposals: &[ScoredProposal], sigma: f64) -> Result<(BBox, Option<f64>)> {
    let area = search_area(coarse, sigma)?;
    let dist = |p: &ScoredProposal| (p.bbox.cx() - coarse.cx()).powi(2) + (p.bbox.cy() - coarse.cy()).powi(2);
    let mut best: Option<&ScoredProposal> = None;
    for p in proposals {
        if !area.contains(p.bbox.cx(), p.bbox.cy()) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => p.score > b.score || (p.score == b.score && dist(p) < dist(b)),
        };
        if better {
            best = Some(p);
        }
    }
    Ok(match best {
        Some(p) => (p.bbox, Some(p.score)),
        None => (*coarse, None),
    })
}

/// How the classification score and proposal scores are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ScorePolicy {
    /// Mean of the class score and the mean replacement score.
    #[default]
    Arithmetic,
    /// Geometric mean of the same two quantities.
    Geometric,
}

/// One of the `N` knots of the final tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedSample {
    pub s: f64,
    pub bbox: BBox,
    /// Proposal score when the coarse box was replaced.
    pub score: Option<f64>,
}

/// Spline through the sample boxes evaluated at every frame of the span.
pub fn assemble_tube(det: &CoarseDetection, samples: &[RefinedSample], policy: ScorePolicy) -> Result<RefinedDetection> {
    det.validate()?;
    if samples.len() < 2 {
        return Err(Error::DegenerateTube { frames: samples.len() });
    }
    let knots: Vec<(f64, BBox)> = samples.iter().map(|r| (r.s, r.bbox)).collect();
    let spline = BoxSpline::new(&knots)?;
    let span = det.span;
    let frames = (span.start()..=span.end())
        .map(|t| Ok(TubeFrame::new(t, spline.eval(span.normalize(t))?)))
        .collect::<Result<Vec<_>>>()?;
    let tube = Tube::new(det.label, frames)?;

    let replaced: Vec<f64> = samples.iter().filter_map(|r| r.score).collect();
    let refined_indices = samples
        .iter()
        .enumerate()
        .filter(|(_, r)| r.score.is_some())
        .map(|(i, _)| i)
        .collect();
    let score = if replaced.is_empty() {
        det.cls_score
    } else {
        let rpn = replaced.iter().sum::<f64>() / replaced.len() as f64;
        match policy {
            ScorePolicy::Arithmetic => 0.5 * (det.cls_score + rpn),
            ScorePolicy::Geometric => (det.cls_score * rpn).sqrt(),
        }
    };
    Ok(RefinedDetection {
        tube,
        score: score.clamp(0.0, 1.0),
        refined_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    pub samples: usize,
    pub sigma: f64,
    pub policy: ScorePolicy,
}

/// Full refinement of one coarse detection: sample, replace the boxes at
/// `selected` sample indices from `proposals`, and assemble.
pub fn refine_detection(
    det: &CoarseDetection,
    proposals: &[ScoredProposal],
    selected: &[usize],
    params: &RefineParams,
) -> Result<RefinedDetection> {
    if params.samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let coarse = sample_coarse_boxes(det, params.samples);
    let mut samples = Vec::with_capacity(coarse.len());
    let mut at_sample: Vec<ScoredProposal> = Vec::new();
    for (i, (s, bbox)) in coarse.into_iter().enumerate() {
        let (bbox, score) = if selected.contains(&i) {
            at_sample.clear();
            at_sample.extend(proposals.iter().filter(|p| p.sample_index == i));
            refine_box(&bbox, &at_sample, params.sigma)?
        } else {
            (bbox, None)
        };
        samples.push(RefinedSample { s, bbox, score });
    }
    assemble_tube(det, &samples, params.policy)
}

/// Coarse-only tube: the spline through the unrefined sample boxes.
pub fn coarse_tube(det: &CoarseDetection, samples: usize, policy: ScorePolicy) -> Result<RefinedDetection> {
    let params = RefineParams {
        samples,
        sigma: 0.0,
        policy,
    };
    refine_detection(det, &[], &[], &params)
}

/// Greedy tube NMS: keeps detections in descending score order (earlier
/// input first on ties), dropping any whose tube IOU with a kept one
/// exceeds `iou_thr`, and stops after `max_out` survivors.
pub fn tube_nms(dets: &[RefinedDetection], iou_thr: f64, max_out: usize) -> Vec<RefinedDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<&RefinedDetection> = Vec::new();
    for i in order {
        if kept.len() >= max_out {
            break;
        }
        let d = &dets[i];
        if kept.iter().all(|k| tube_iou(&k.tube, &d.tube) <= iou_thr) {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}
