//! Anchor generation and segment-wise anchor/tube matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{box_iou, segment_iou, BBox, Tube};

pub const DEFAULT_GRID: usize = 7;
pub const DEFAULT_NUM_SHAPES: usize = 6;
pub const DEFAULT_SEGMENT_LEN: usize = 6;
pub const DEFAULT_POS_THRESH: f64 = 0.5;
pub const DEFAULT_NEG_THRESH: f64 = 0.4;

const KMEANS_MAX_ITERS: usize = 300;

/// Anchor width/height pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorShape {
    pub w: f64,
    pub h: f64,
}

/// Anchors of every shape centered on each cell of a `grid × grid` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    grid: usize,
    shapes: Vec<AnchorShape>,
}

impl AnchorSet {
    pub fn new(grid: usize, shapes: Vec<AnchorShape>) -> Result<Self> {
        if grid == 0 {
            return Err(Error::param("grid", "must be at least 1"));
        }
        if shapes.is_empty() {
            return Err(Error::param("shapes", "at least one anchor shape required"));
        }
        if shapes.iter().any(|s| !(s.w > 0.0 && s.h > 0.0 && s.w.is_finite() && s.h.is_finite())) {
            return Err(Error::param("shapes", "anchor extents must be positive"));
        }
        Ok(Self { grid, shapes })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn shapes(&self) -> &[AnchorShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.grid * self.grid * self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Materialized anchors in row-major cell order, shapes innermost.
    pub fn anchors(&self) -> Vec<BBox> {
        let g = self.grid as f64;
        let mut out = Vec::with_capacity(self.len());
        for row in 0..self.grid {
            for col in 0..self.grid {
                let cx = (col as f64 + 0.5) / g;
                let cy = (row as f64 + 0.5) / g;
                for s in &self.shapes {
                    out.push(BBox::new(cx, cy, s.w, s.h).expect("validated anchor shape"));
                }
            }
        }
        out
    }
}

/// IOU of two boxes sharing a center.
pub fn shape_iou(a: &AnchorShape, b: &AnchorShape) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Mean `1 - IOU` between each box and its nearest center.
pub fn clustering_cost(boxes: &[AnchorShape], centers: &[AnchorShape]) -> f64 {
    let total: f64 = boxes
        .iter()
        .map(|b| nearest(b, centers).1)
        .sum();
    total / boxes.len() as f64
}

fn nearest(b: &AnchorShape, centers: &[AnchorShape]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = 1.0 - shape_iou(b, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// K-means over box extents with `1 - IOU` distance.
///
/// Seeding picks a random first center and then repeatedly the box
/// farthest from its nearest center. Centers are returned sorted by area.
pub fn cluster_anchors(boxes: &[BBox], n: usize, seed: u64) -> Result<Vec<AnchorShape>> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if boxes.len() < n {
        return Err(Error::Cardinality {
            boxes: boxes.len(),
            clusters: n,
        });
    }
    let shapes: Vec<AnchorShape> = boxes.iter().map(|b| AnchorShape { w: b.w(), h: b.h() }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![shapes[rng.random_range(0..shapes.len())]];
    while centers.len() < n {
        let mut far = (0, -1.0);
        for (i, s) in shapes.iter().enumerate() {
            let d = nearest(s, &centers).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        centers.push(shapes[far.0]);
    }

    let mut assignment = vec![usize::MAX; shapes.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, s) in shapes.iter().enumerate() {
            let c = nearest(s, &centers).0;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (mut sw, mut sh, mut count) = (0.0, 0.0, 0usize);
            for (s, &a) in shapes.iter().zip(&assignment) {
                if a == c {
                    sw += s.w;
                    sh += s.h;
                    count += 1;
                }
            }
            // empty clusters keep their previous center
            if count > 0 {
                *center = AnchorShape {
                    w: sw / count as f64,
                    h: sh / count as f64,
                };
            }
        }
    }
    centers.sort_by(|a, b| (a.w * a.h).total_cmp(&(b.w * b.h)).then(a.w.total_cmp(&b.w)));
    Ok(centers)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub segment_len: usize,
    pub pos_thresh: f64,
    pub neg_thresh: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            segment_len: DEFAULT_SEGMENT_LEN,
            pos_thresh: DEFAULT_POS_THRESH,
            neg_thresh: DEFAULT_NEG_THRESH,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 {
            return Err(Error::param("segment_len", "must be at least 1"));
        }
        if !(self.neg_thresh > 0.0 && self.neg_thresh <= self.pos_thresh && self.pos_thresh < 1.0) {
            return Err(Error::param(
                "thresholds",
                format!(
                    "need 0 < neg ({}) <= pos ({}) < 1",
                    self.neg_thresh, self.pos_thresh
                ),
            ));
        }
        Ok(())
    }
}

/// Training label of one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchLabel {
    /// Matched to `tube` (index into the tube list) with first-segment IOU `iou`.
    Positive { tube: usize, iou: f64 },
    Negative,
    Ignore,
}

impl MatchLabel {
    pub fn value(&self) -> i8 {
        match self {
            MatchLabel::Positive { .. } => 1,
            MatchLabel::Negative => -1,
            MatchLabel::Ignore => 0,
        }
    }

    pub fn matched_tube(&self) -> Option<usize> {
        match self {
            MatchLabel::Positive { tube, .. } => Some(*tube),
            _ => None,
        }
    }
}

/// Highest mean IOU over the `⌊T_A / K⌋` non-overlapping segments of the
/// tube. Tubes shorter than `K` are treated as a single segment.
pub fn max_segment_iou(anchor: &BBox, tube: &Tube, k: usize) -> f64 {
    let segments = (tube.len() / k).max(1);
    (0..segments)
        .map(|s| segment_iou(anchor, tube, s * k, k))
        .fold(0.0, f64::max)
}

/// Segment-wise matching of one anchor against the ground-truth tubes.
///
/// Positive when the mean IOU over the first `K` frames of some tube reaches
/// `pos_thresh` (the tube with the largest such value is matched, earliest
/// on ties); negative when every segment of every tube stays below
/// `neg_thresh`; ignored otherwise.
pub fn match_anchor(anchor: &BBox, tubes: &[Tube], cfg: &MatchConfig) -> MatchLabel {
    let k = cfg.segment_len;
    let mut best: Option<(usize, f64)> = None;
    for (i, tube) in tubes.iter().enumerate() {
        let iou = segment_iou(anchor, tube, 0, k);
        if iou >= cfg.pos_thresh && best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    if let Some((tube, iou)) = best {
        return MatchLabel::Positive { tube, iou };
    }
    if tubes.iter().all(|t| max_segment_iou(anchor, t, k) < cfg.neg_thresh) {
        MatchLabel::Negative
    } else {
        MatchLabel::Ignore
    }
}

/// Baseline that averages IOU over every frame of each tube instead of
/// over segments.
pub fn match_anchor_whole_tube(anchor: &BBox, tubes: &[Tube], cfg: &MatchConfig) -> MatchLabel {
    let mut best: Option<(usize, f64)> = None;
    let mut max_iou: f64 = 0.0;
    for (i, tube) in tubes.iter().enumerate() {
        let iou = segment_iou(anchor, tube, 0, tube.len());
        max_iou = max_iou.max(iou);
        if iou >= cfg.pos_thresh && best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    match best {
        Some((tube, iou)) => MatchLabel::Positive { tube, iou },
        None if max_iou < cfg.neg_thresh => MatchLabel::Negative,
        None => MatchLabel::Ignore,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub positive: usize,
    pub negative: usize,
    pub ignore: usize,
}

impl MatchStats {
    pub fn from_labels(labels: &[MatchLabel]) -> Self {
        let mut s = Self::default();
        for l in labels {
            match l {
                MatchLabel::Positive { .. } => s.positive += 1,
                MatchLabel::Negative => s.negative += 1,
                MatchLabel::Ignore => s.ignore += 1,
            }
        }
        s
    }
}

/// Labels every anchor, in anchor order.
pub fn match_anchors(anchors: &[BBox], tubes: &[Tube], cfg: &MatchConfig) -> Vec<MatchLabel> {
    anchors.iter().map(|a| match_anchor(a, tubes, cfg)).collect()
}

/// Anchor with the largest first-segment IOU against `tube` (earliest on ties).
pub fn best_anchor(anchors: &[BBox], tube: &Tube, cfg: &MatchConfig) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in anchors.iter().enumerate() {
        let iou = segment_iou(a, tube, 0, cfg.segment_len);
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean IOU between an anchor and every box of a tube.
pub fn whole_tube_iou(anchor: &BBox, tube: &Tube) -> f64 {
    tube.boxes().map(|b| box_iou(anchor, b)).sum::<f64>() / tube.len() as f64
}
