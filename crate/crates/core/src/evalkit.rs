//! Tube-level detection metrics: video-mAP, frame-mAP, v-MABO and a
//! four-way breakdown of detections into true positives and error types.
//!
//! A detection is positive when its overlap with a ground truth is
//! strictly greater than `δ`. Matching is greedy in descending score order
//! and consumes ground truths one-to-one. AP is the area under the
//! precision envelope sampled at every recall point.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{box_iou, tube_iou, BBox, Tube};
use crate::refine::RefinedDetection;

/// Ground-truth tubes per video.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub videos: BTreeMap<String, Vec<Tube>>,
}

/// Scored tube detections per video.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub videos: BTreeMap<String, Vec<RefinedDetection>>,
}

impl AnnotationSet {
    pub fn num_tubes(&self) -> usize {
        self.videos.values().map(Vec::len).sum()
    }

    /// Restriction to a single video.
    pub fn only(&self, video: &str) -> Self {
        Self {
            videos: self.videos.get_key_value(video).map(|(k, v)| (k.clone(), v.clone())).into_iter().collect(),
        }
    }

    fn labels(&self) -> BTreeSet<u32> {
        self.videos.values().flatten().map(Tube::label).collect()
    }
}

impl DetectionSet {
    pub fn num_detections(&self) -> usize {
        self.videos.values().map(Vec::len).sum()
    }

    pub fn only(&self, video: &str) -> Self {
        Self {
            videos: self.videos.get_key_value(video).map(|(k, v)| (k.clone(), v.clone())).into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in self.videos.values().flatten() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::OutOfRange {
                    what: "detection score",
                    value: d.score,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }

    fn labels(&self) -> BTreeSet<u32> {
        self.videos.values().flatten().map(RefinedDetection::label).collect()
    }

    /// All detections in descending score order; ties keep video then
    /// input order.
    fn ranked(&self) -> Vec<(&str, usize, &RefinedDetection)> {
        let mut all: Vec<(&str, usize, &RefinedDetection)> = self
            .videos
            .iter()
            .flat_map(|(v, ds)| ds.iter().enumerate().map(move |(i, d)| (v.as_str(), i, d)))
            .collect();
        all.sort_by(|a, b| b.2.score.total_cmp(&a.2.score).then(a.0.cmp(b.0)).then(a.1.cmp(&b.1)));
        all
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "overlap threshold",
            value: delta,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

/// Precision/recall points after each ranked detection.
pub fn precision_recall(tp: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut hits = 0usize;
    tp.iter()
        .enumerate()
        .map(|(i, &hit)| {
            hits += hit as usize;
            (hits as f64 / num_gt as f64, hits as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Area under the precision envelope; `None` when there is no ground truth.
pub fn average_precision(tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let pr = precision_recall(tp, num_gt);
    let mut rec = Vec::with_capacity(pr.len() + 2);
    let mut prec = Vec::with_capacity(pr.len() + 2);
    rec.push(0.0);
    prec.push(0.0);
    for &(r, p) in &pr {
        rec.push(r);
        prec.push(p);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    for i in 0..rec.len() - 1 {
        if rec[i + 1] != rec[i] {
            ap += (rec[i + 1] - rec[i]) * prec[i + 1];
        }
    }
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub label: u32,
    /// Undefined for classes without ground truth.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapResult {
    pub delta: f64,
    pub per_class: Vec<ClassAp>,
    /// Mean AP over classes with at least one ground truth.
    pub map: f64,
}

fn mean_defined(per_class: &[ClassAp]) -> f64 {
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Greedy match of one ranked detection: the unconsumed same-class ground
/// truth in its video with the highest overlap above `delta`.
fn best_unmatched(gts: &[Tube], used: &[bool], label: u32, ious: &[f64], delta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, tube) in gts.iter().enumerate() {
        if used[g] || tube.label() != label || ious[g] <= delta {
            continue;
        }
        if best.is_none_or(|(_, b)| ious[g] > b) {
            best = Some((g, ious[g]));
        }
    }
    best.map(|(g, _)| g)
}

/// Video-mAP at overlap threshold `delta`.
pub fn video_map(dets: &DetectionSet, gts: &AnnotationSet, delta: f64) -> Result<MapResult> {
    check_delta(delta)?;
    let labels: BTreeSet<u32> = gts.labels().union(&dets.labels()).copied().collect();
    let ranked = dets.ranked();
    let empty: Vec<Tube> = Vec::new();
    let mut per_class = Vec::with_capacity(labels.len());
    for label in labels {
        let num_gt = gts.videos.values().flatten().filter(|t| t.label() == label).count();
        let mut used: HashMap<&str, Vec<bool>> = HashMap::new();
        let mut tp = Vec::new();
        for &(video, _, det) in ranked.iter().filter(|r| r.2.label() == label) {
            let video_gts = gts.videos.get(video).unwrap_or(&empty);
            let ious: Vec<f64> = video_gts.iter().map(|g| tube_iou(&det.tube, g)).collect();
            let u = used.entry(video).or_insert_with(|| vec![false; video_gts.len()]);
            match best_unmatched(video_gts, u, label, &ious, delta) {
                Some(g) => {
                    u[g] = true;
                    tp.push(true);
                }
                None => tp.push(false),
            }
        }
        per_class.push(ClassAp {
            label,
            ap: average_precision(&tp, num_gt),
            num_gt,
            num_detections: tp.len(),
            true_positives: tp.iter().filter(|&&h| h).count(),
            curve: if num_gt > 0 { precision_recall(&tp, num_gt) } else { Vec::new() },
        });
    }
    let map = mean_defined(&per_class);
    Ok(MapResult { delta, per_class, map })
}

/// Thresholds `lo, lo + step, …` up to and including `hi`.
pub fn delta_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param("step", format!("must be positive, got {step}")));
    }
    if !(lo > 0.0 && hi < 1.0) {
        return Err(Error::param("delta range", format!("need 0 < lo and hi < 1, got [{lo}, {hi}]")));
    }
    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let d = lo + i as f64 * step;
        if d > hi + 1e-9 {
            break;
        }
        grid.push(d.min(hi));
        i += 1;
    }
    if grid.is_empty() {
        return Err(Error::param("delta range", format!("empty threshold grid [{lo}, {hi}]")));
    }
    Ok(grid)
}

/// Mean video-mAP over `delta_grid(lo, hi, step)`.
pub fn map_range(dets: &DetectionSet, gts: &AnnotationSet, lo: f64, hi: f64, step: f64) -> Result<f64> {
    let grid = delta_grid(lo, hi, step)?;
    let mut sum = 0.0;
    for &d in &grid {
        sum += video_map(dets, gts, d)?.map;
    }
    Ok(sum / grid.len() as f64)
}

/// Frame-mAP: every detection box inherits its tube's score and is matched
/// against ground-truth boxes of the same video and frame.
pub fn frame_map(dets: &DetectionSet, gts: &AnnotationSet, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let labels: BTreeSet<u32> = gts.labels().union(&dets.labels()).copied().collect();
    let ranked = dets.ranked();

    // (video, frame) -> ground-truth boxes with their labels
    let mut gt_boxes: HashMap<(&str, i64), Vec<(u32, BBox)>> = HashMap::new();
    for (video, tubes) in &gts.videos {
        for tube in tubes {
            for f in tube.frames() {
                gt_boxes.entry((video.as_str(), f.t)).or_default().push((tube.label(), f.bbox));
            }
        }
    }

    let mut per_class = Vec::new();
    for label in labels {
        let num_gt = gts
            .videos
            .values()
            .flatten()
            .filter(|t| t.label() == label)
            .map(Tube::len)
            .sum::<usize>();
        let mut used: HashMap<(&str, i64), Vec<bool>> = HashMap::new();
        let mut tp = Vec::new();
        for &(video, _, det) in ranked.iter().filter(|r| r.2.label() == label) {
            for f in det.tube.frames() {
                let key = (video, f.t);
                let candidates = gt_boxes.get(&key).map(Vec::as_slice).unwrap_or(&[]);
                let u = used.entry(key).or_insert_with(|| vec![false; candidates.len()]);
                let mut best: Option<(usize, f64)> = None;
                for (g, (l, gb)) in candidates.iter().enumerate() {
                    if u[g] || *l != label {
                        continue;
                    }
                    let iou = box_iou(&f.bbox, gb);
                    if iou > delta && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                match best {
                    Some((g, _)) => {
                        u[g] = true;
                        tp.push(true);
                    }
                    None => tp.push(false),
                }
            }
        }
        per_class.push(ClassAp {
            label,
            ap: average_precision(&tp, num_gt),
            num_gt,
            num_detections: tp.len(),
            true_positives: tp.iter().filter(|&&h| h).count(),
            curve: Vec::new(),
        });
    }
    Ok(mean_defined(&per_class))
}

/// Mean over classes of the average best overlap each ground-truth tube
/// receives from any detection in its video, regardless of class.
pub fn v_mabo(dets: &DetectionSet, gts: &AnnotationSet) -> Result<f64> {
    if gts.num_tubes() == 0 {
        return Err(Error::param("ground truth", "v-MABO needs at least one ground-truth tube"));
    }
    let mut per_class: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (video, tubes) in &gts.videos {
        let video_dets = dets.videos.get(video).map(Vec::as_slice).unwrap_or(&[]);
        for gt in tubes {
            let best = video_dets.iter().map(|d| tube_iou(&d.tube, gt)).fold(0.0, f64::max);
            let e = per_class.entry(gt.label()).or_insert((0.0, 0));
            e.0 += best;
            e.1 += 1;
        }
    }
    let means: Vec<f64> = per_class.values().map(|(s, n)| s / *n as f64).collect();
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Detections split into four mutually exclusive outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorBreakdown {
    pub true_positive: usize,
    pub wrong_classification: usize,
    pub bad_localization: usize,
    pub duplicate_detection: usize,
}

impl ErrorBreakdown {
    pub fn total(&self) -> usize {
        self.true_positive + self.wrong_classification + self.bad_localization + self.duplicate_detection
    }
}

/// Assigns each detection, in descending score order, to the first
/// applicable category: true positive (unmatched same-class ground truth
/// above `delta`), duplicate (same class above `delta`, already matched),
/// wrong classification (other class above `delta`), bad localization.
pub fn fp_breakdown(dets: &DetectionSet, gts: &AnnotationSet, delta: f64) -> Result<ErrorBreakdown> {
    check_delta(delta)?;
    let empty: Vec<Tube> = Vec::new();
    let mut used: HashMap<&str, Vec<bool>> = HashMap::new();
    let mut out = ErrorBreakdown::default();
    for (video, _, det) in dets.ranked() {
        let video_gts = gts.videos.get(video).unwrap_or(&empty);
        let ious: Vec<f64> = video_gts.iter().map(|g| tube_iou(&det.tube, g)).collect();
        let u = used.entry(video).or_insert_with(|| vec![false; video_gts.len()]);
        let label = det.label();
        if let Some(g) = best_unmatched(video_gts, u, label, &ious, delta) {
            u[g] = true;
            out.true_positive += 1;
            continue;
        }
        let overlapping = |same: bool| {
            video_gts
                .iter()
                .zip(&ious)
                .any(|(g, &iou)| iou > delta && (g.label() == label) == same)
        };
        if overlapping(true) {
            out.duplicate_detection += 1;
        } else if overlapping(false) {
            out.wrong_classification += 1;
        } else {
            out.bad_localization += 1;
        }
    }
    Ok(out)
}

/// Default video-mAP thresholds.
pub const DEFAULT_DELTAS: [f64; 4] = [0.2, 0.3, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub video_map: Vec<MapResult>,
    /// Mean video-mAP over 0.5:0.05:0.95.
    pub video_map_50_95: f64,
    pub frame_map_50: f64,
    pub v_mabo: f64,
    /// Breakdown at δ = 0.5.
    pub breakdown: ErrorBreakdown,
    pub num_videos: usize,
    pub num_ground_truth: usize,
    pub num_detections: usize,
}

/// Full metric suite.
pub fn evaluate(dets: &DetectionSet, gts: &AnnotationSet, deltas: &[f64]) -> Result<EvalReport> {
    dets.validate()?;
    let video_map = deltas
        .iter()
        .map(|&d| self::video_map(dets, gts, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        video_map,
        video_map_50_95: map_range(dets, gts, 0.5, 0.95, 0.05)?,
        frame_map_50: frame_map(dets, gts, 0.5)?,
        v_mabo: v_mabo(dets, gts)?,
        breakdown: fp_breakdown(dets, gts, 0.5)?,
        num_videos: gts.videos.len(),
        num_ground_truth: gts.num_tubes(),
        num_detections: dets.num_detections(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn tube(label: u32, bx: BBox, frames: usize) -> Tube {
        Tube::contiguous(label, 0, vec![bx; frames]).unwrap()
    }

    fn det(t: Tube, score: f64) -> RefinedDetection {
        RefinedDetection {
            tube: t,
            score,
            refined_indices: vec![],
        }
    }

    fn one_video(gts: Vec<Tube>, dets: Vec<RefinedDetection>) -> (DetectionSet, AnnotationSet) {
        let mut a = AnnotationSet::default();
        a.videos.insert("v0".into(), gts);
        let mut d = DetectionSet::default();
        d.videos.insert("v0".into(), dets);
        (d, a)
    }

    #[test]
    fn ap_envelope_examples() {
        assert_eq!(average_precision(&[true], 1), Some(1.0));
        assert_eq!(average_precision(&[false, true], 1), Some(0.5));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[], 3), Some(0.0));
        // precision 1 at recall 0.5, then 2/3 at recall 1 -> 0.5 + 0.5*2/3
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn video_map_single_match() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 6);
        let (d, a) = one_video(vec![g.clone()], vec![det(g, 0.9)]);
        let r = video_map(&d, &a, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.per_class[0].ap, Some(1.0));
    }

    #[test]
    fn video_map_fp_before_tp() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 6);
        let fp = tube(1, b(0.1, 0.1, 0.1, 0.1), 6);
        let (d, a) = one_video(vec![g.clone()], vec![det(fp, 0.9), det(g, 0.8)]);
        assert_eq!(video_map(&d, &a, 0.5).unwrap().map, 0.5);
    }

    #[test]
    fn video_map_threshold_is_strict() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 4);
        // IOU exactly 0.5 with the ground truth on every frame
        let d0 = tube(1, b(0.5 + 0.2 / 3.0, 0.5, 0.2, 0.2), 4);
        let iou = tube_iou(&d0, &g);
        let (d, a) = one_video(vec![g], vec![det(d0, 0.9)]);
        assert_eq!(video_map(&d, &a, iou).unwrap().map, 0.0);
        assert_eq!(video_map(&d, &a, iou - 1e-9).unwrap().map, 1.0);
        assert_eq!(video_map(&d, &a, 0.95).unwrap().map, 0.0);
        assert!(video_map(&d, &a, 1.0).is_err());
        assert!(video_map(&d, &a, 0.0).is_err());
    }

    #[test]
    fn classes_without_ground_truth_are_undefined() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 6);
        let other = tube(7, b(0.5, 0.5, 0.2, 0.2), 6);
        let (d, a) = one_video(vec![g.clone()], vec![det(g, 0.9), det(other, 0.95)]);
        let r = video_map(&d, &a, 0.5).unwrap();
        let c7 = r.per_class.iter().find(|c| c.label == 7).unwrap();
        assert_eq!(c7.ap, None);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn map_range_grid() {
        let g = delta_grid(0.5, 0.95, 0.05).unwrap();
        assert_eq!(g.len(), 10);
        assert!((g[9] - 0.95).abs() < 1e-12);
        assert_eq!(delta_grid(0.5, 0.5, 0.1).unwrap(), vec![0.5]);
        assert!(delta_grid(0.6, 0.5, 0.1).is_err());
        assert!(delta_grid(0.5, 0.9, 0.0).is_err());

        let gt = tube(1, b(0.5, 0.5, 0.2, 0.2), 6);
        let (d, a) = one_video(vec![gt.clone()], vec![det(gt, 0.9)]);
        assert_eq!(map_range(&d, &a, 0.5, 0.95, 0.05).unwrap(), 1.0);
        assert_eq!(
            map_range(&d, &a, 0.3, 0.3, 0.05).unwrap(),
            video_map(&d, &a, 0.3).unwrap().map
        );
    }

    #[test]
    fn frame_map_examples() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 8);
        let (d, a) = one_video(vec![g.clone()], vec![det(g.clone(), 0.7)]);
        assert_eq!(frame_map(&d, &a, 0.5).unwrap(), 1.0);

        let half = Tube::contiguous(1, 0, vec![b(0.5, 0.5, 0.2, 0.2); 4]).unwrap();
        let (d, a) = one_video(vec![g.clone()], vec![det(half, 0.7)]);
        assert_eq!(frame_map(&d, &a, 0.5).unwrap(), 0.5);

        let (d, a) = one_video(vec![g], vec![]);
        assert_eq!(frame_map(&d, &a, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mabo_examples() {
        let g1 = tube(2, b(0.3, 0.3, 0.2, 0.2), 5);
        let g2 = tube(2, b(0.7, 0.7, 0.2, 0.2), 5);
        let (d, a) = one_video(vec![g1.clone(), g2.clone()], vec![det(g1.clone(), 0.5), det(g2.clone(), 0.5)]);
        assert_eq!(v_mabo(&d, &a).unwrap(), 1.0);
        let (d, a) = one_video(vec![g1.clone()], vec![]);
        assert_eq!(v_mabo(&d, &a).unwrap(), 0.0);

        let shifted = |g: &Tube, iou: f64| {
            let bx = g.frames()[0].bbox;
            let dx = bx.w() * (1.0 - iou) / (1.0 + iou);
            tube(9, b(bx.cx() + dx, bx.cy(), bx.w(), bx.h()), 5)
        };
        let (d, a) = one_video(
            vec![g1.clone(), g2.clone()],
            vec![det(shifted(&g1, 0.8), 0.5), det(shifted(&g2, 0.4), 0.5)],
        );
        assert!((v_mabo(&d, &a).unwrap() - 0.6).abs() < 1e-12);
        assert!(v_mabo(&DetectionSet::default(), &AnnotationSet::default()).is_err());
    }

    #[test]
    fn breakdown_examples() {
        let g = tube(1, b(0.5, 0.5, 0.2, 0.2), 6);
        let (d, a) = one_video(vec![g.clone()], vec![det(g.clone(), 0.9)]);
        assert_eq!(
            fp_breakdown(&d, &a, 0.5).unwrap(),
            ErrorBreakdown { true_positive: 1, ..Default::default() }
        );
        let (d, a) = one_video(vec![g.clone()], vec![det(g.clone(), 0.9), det(g.clone(), 0.8)]);
        assert_eq!(
            fp_breakdown(&d, &a, 0.5).unwrap(),
            ErrorBreakdown { true_positive: 1, duplicate_detection: 1, ..Default::default() }
        );
        // IOU 0.7 with the wrong label
        let dx = 0.2 * 0.3 / 1.7;
        let wrong = tube(4, b(0.5 + dx, 0.5, 0.2, 0.2), 6);
        assert!((tube_iou(&wrong, &g) - 0.7).abs() < 1e-12);
        let (d, a) = one_video(vec![g.clone()], vec![det(wrong, 0.9)]);
        assert_eq!(fp_breakdown(&d, &a, 0.5).unwrap().wrong_classification, 1);

        let off = tube(1, b(0.1, 0.1, 0.1, 0.1), 6);
        let (d, a) = one_video(vec![g], vec![det(off, 0.9)]);
        assert_eq!(fp_breakdown(&d, &a, 0.5).unwrap().bad_localization, 1);
    }

    #[test]
    fn evaluate_identity() {
        let g1 = tube(1, b(0.3, 0.3, 0.2, 0.2), 10);
        let g2 = tube(2, b(0.7, 0.6, 0.3, 0.2), 10);
        let (d, a) = one_video(vec![g1.clone(), g2.clone()], vec![det(g1, 0.8), det(g2, 0.6)]);
        let r = evaluate(&d, &a, &DEFAULT_DELTAS).unwrap();
        assert!(r.video_map.iter().all(|m| m.map == 1.0));
        assert_eq!(r.video_map_50_95, 1.0);
        assert_eq!(r.frame_map_50, 1.0);
        assert_eq!(r.v_mabo, 1.0);
        assert_eq!(r.breakdown.total(), 2);
    }
}
