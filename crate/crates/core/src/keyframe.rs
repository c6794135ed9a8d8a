//! Key-timestamp labels and inference-time key-sample selection.
//!
//! A tube is sampled at `N` uniform normalized timestamps `s_i = i/(N-1)`.
//! Training labels come from a greedy search that grows the knot set from
//! the two endpoints, each step adding the sample whose inclusion gives the
//! spline-interpolated tube the highest IOU with the ground truth.

use crate::error::{Error, Result};
use crate::geometry::{round_half_up, tube_iou, BBox, BoxSpline, Tube, TubeFrame};
use crate::paramtube::normalize_timestamps;

pub const DEFAULT_EPSILON: f64 = 0.8;
pub const MAX_EXHAUSTIVE_SAMPLES: usize = 12;

/// Uniform normalized sample timestamps `i / (n - 1)`.
pub fn sample_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Ground-truth box associated with normalized time `s`: the frame at
/// `round(t_0 + s (t_last - t_0))`, rounding half up. Tubes with gaps fall
/// back to the nearest annotated frame.
pub fn gt_box_at(tube: &Tube, s: f64) -> BBox {
    let t = round_half_up(tube.start() as f64 + s * (tube.end() - tube.start()) as f64);
    tube.frames()[tube.nearest_index(t)].bbox
}

/// IOU between the ground truth and the spline through the ground-truth
/// boxes at the given sample indices, evaluated at every annotated frame.
pub fn interpolation_iou(tube: &Tube, n: usize, knots: &[usize]) -> Result<f64> {
    let times = normalize_timestamps(tube)?;
    let mut idx = knots.to_vec();
    idx.sort_unstable();
    idx.dedup();
    let grid = sample_grid(n);
    let knot_boxes: Vec<(f64, BBox)> = idx.iter().map(|&i| (grid[i], gt_box_at(tube, grid[i]))).collect();
    let spline = BoxSpline::new(&knot_boxes)?;
    let frames = tube
        .frames()
        .iter()
        .zip(&times)
        .map(|(f, &t)| Ok(TubeFrame::new(f.t, spline.eval(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let interp = Tube::new(tube.label(), frames)?;
    Ok(tube_iou(&interp, tube))
}

/// One greedy iteration: the sample added and the IOU reached with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyTimestampLabels {
    /// Selected sample indices, ascending.
    pub selected: Vec<usize>,
    /// 1 for selected samples, 0 otherwise.
    pub labels: Vec<u8>,
    pub achieved_iou: f64,
    /// IOU with only the two endpoints selected.
    pub initial_iou: f64,
    pub steps: Vec<GreedyStep>,
}

impl KeyTimestampLabels {
    fn from_selection(n: usize, mut selected: Vec<usize>, initial_iou: f64, achieved_iou: f64, steps: Vec<GreedyStep>) -> Self {
        selected.sort_unstable();
        let mut labels = vec![0u8; n];
        for &i in &selected {
            labels[i] = 1;
        }
        Self {
            selected,
            labels,
            achieved_iou,
            initial_iou,
            steps,
        }
    }
}

fn check_label_args(tube: &Tube, n: usize, epsilon: f64) -> Result<()> {
    if tube.len() < 2 {
        return Err(Error::DegenerateTube { frames: tube.len() });
    }
    if n < 2 {
        return Err(Error::param("samples", format!("need at least 2 samples, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: epsilon,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Greedy key-timestamp labels.
///
/// Starts from both endpoints and repeatedly adds the unselected sample that
/// maximizes the interpolation IOU (smallest index on ties) until the IOU
/// reaches `epsilon` or every sample is selected.
pub fn greedy_keyframe_labels(tube: &Tube, n: usize, epsilon: f64) -> Result<KeyTimestampLabels> {
    check_label_args(tube, n, epsilon)?;
    let mut selected = vec![0, n - 1];
    selected.dedup();
    let initial = interpolation_iou(tube, n, &selected)?;
    let mut iou = initial;
    let mut steps = Vec::new();
    while iou < epsilon && selected.len() < n {
        let mut best: Option<GreedyStep> = None;
        for cand in 0..n {
            if selected.contains(&cand) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(cand);
            let v = interpolation_iou(tube, n, &trial)?;
            if best.is_none_or(|b| v > b.iou) {
                best = Some(GreedyStep { index: cand, iou: v });
            }
        }
        let step = best.expect("an unselected sample remains");
        selected.push(step.index);
        iou = step.iou;
        steps.push(step);
    }
    Ok(KeyTimestampLabels::from_selection(n, selected, initial, iou, steps))
}

/// Smallest endpoint-containing sample set whose interpolation reaches
/// `epsilon` (highest IOU among equal-size sets). Limited to
/// [`MAX_EXHAUSTIVE_SAMPLES`] samples.
pub fn exhaustive_keyframe_labels(tube: &Tube, n: usize, epsilon: f64) -> Result<KeyTimestampLabels> {
    check_label_args(tube, n, epsilon)?;
    if n > MAX_EXHAUSTIVE_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("exhaustive search supports at most {MAX_EXHAUSTIVE_SAMPLES} samples"),
        ));
    }
    let initial = interpolation_iou(tube, n, &[0, n - 1])?;
    let interior = n.saturating_sub(2);
    for size in 0..=interior {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << interior) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let mut set = vec![0, n - 1];
            set.extend((0..interior).filter(|i| mask & (1 << i) != 0).map(|i| i + 1));
            let v = interpolation_iou(tube, n, &set)?;
            if v >= epsilon && best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, set));
            }
        }
        if let Some((v, set)) = best {
            return Ok(KeyTimestampLabels::from_selection(n, set, initial, v, Vec::new()));
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let v = interpolation_iou(tube, n, &all)?;
    Ok(KeyTimestampLabels::from_selection(n, all, initial, v, Vec::new()))
}

/// Indices whose importance score is at least `alpha`, ascending.
pub fn select_key_samples(scores: &[f64], alpha: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= alpha)
        .map(|(i, _)| i)
        .collect()
}
