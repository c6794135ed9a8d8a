//! Polynomial tube parameterization.
//!
//! A coarse tube is four polynomials in normalized time `t ∈ [0, 1]`, one
//! per encoded box coordinate, evaluated relative to the matched anchor:
//! `box(t) = decode([θx·p(t), θy·p(t), θw·p(t), θh·p(t)], anchor)` with
//! `p(t) = [1, t, …, t^k]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Tube};

pub const MIN_ORDER: usize = 1;
pub const MAX_ORDER: usize = 8;

/// Largest accepted condition number of the normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// Log-ratio offsets are clamped to this magnitude when decoding so the
/// decoded extent stays finite and positive.
pub const MAX_LOG_RATIO: f64 = 30.0;

/// Anchor-relative box offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedOffset {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl EncodedOffset {
    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            dx: v[0],
            dy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }

    pub fn squared_distance(&self, other: &EncodedOffset) -> f64 {
        let (a, b) = (self.to_array(), other.to_array());
        (0..4).map(|c| (a[c] - b[c]).powi(2)).sum()
    }
}

pub fn encode(b: &BBox, anchor: &BBox) -> EncodedOffset {
    EncodedOffset {
        dx: (b.cx() - anchor.cx()) / anchor.w(),
        dy: (b.cy() - anchor.cy()) / anchor.h(),
        dw: (b.w() / anchor.w()).ln(),
        dh: (b.h() / anchor.h()).ln(),
    }
}

pub fn decode(o: &EncodedOffset, anchor: &BBox) -> BBox {
    let cx = anchor.cx() + o.dx * anchor.w();
    let cy = anchor.cy() + o.dy * anchor.h();
    let w = anchor.w() * o.dw.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let h = anchor.h() * o.dh.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    BBox::clamped(cx, cy, w, h)
}

/// Coefficients of the four coordinate polynomials, lowest power first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTubeParams {
    coeffs: [Vec<f64>; 4],
}

impl PolyTubeParams {
    pub fn new(coeffs: [Vec<f64>; 4]) -> Result<Self> {
        let len = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != len) {
            return Err(Error::param("theta", "coordinate polynomials differ in length"));
        }
        let order = len.saturating_sub(1);
        if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
            return Err(Error::OrderOutOfRange {
                order,
                min: MIN_ORDER,
                max: MAX_ORDER,
            });
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("theta", "non-finite coefficient"));
        }
        Ok(Self { coeffs })
    }

    /// Order-`order` parameters whose polynomials are the constant `offset`.
    pub fn constant(offset: EncodedOffset, order: usize) -> Result<Self> {
        let v = offset.to_array();
        let coord = |c: usize| {
            let mut p = vec![0.0; order + 1];
            p[0] = v[c];
            p
        };
        Self::new([coord(0), coord(1), coord(2), coord(3)])
    }

    pub fn order(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn coefficients(&self) -> &[Vec<f64>; 4] {
        &self.coeffs
    }

    /// Evaluates the encoded offsets at `t` without domain checks.
    pub fn eval_encoded(&self, t: f64) -> EncodedOffset {
        let mut out = [0.0; 4];
        for (c, poly) in self.coeffs.iter().enumerate() {
            // Horner
            out[c] = poly.iter().rev().fold(0.0, |acc, &a| acc * t + a);
        }
        EncodedOffset::from_array(out)
    }
}

/// Maps tube timestamps to `[0, 1]` relative to the first and last frame.
pub fn normalize_timestamps(tube: &Tube) -> Result<Vec<f64>> {
    if tube.len() < 2 {
        return Err(Error::DegenerateTube { frames: tube.len() });
    }
    let (t0, t1) = (tube.start(), tube.end());
    let span = (t1 - t0) as f64;
    Ok(tube.timestamps().map(|t| (t - t0) as f64 / span).collect())
}

/// Decoded box of the parameterized tube at normalized time `t`.
pub fn eval_poly_tube(params: &PolyTubeParams, t: f64, anchor: &BBox) -> Result<BBox> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            what: "normalized time",
            value: t,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(decode(&params.eval_encoded(t), anchor))
}

/// Sum over the tube of squared encoded residuals between the
/// parameterized tube and the ground-truth boxes.
pub fn tube_residual(params: &PolyTubeParams, tube: &Tube, anchor: &BBox) -> Result<f64> {
    let ts = normalize_timestamps(tube)?;
    Ok(ts
        .iter()
        .zip(tube.boxes())
        .map(|(&t, b)| params.eval_encoded(t).squared_distance(&encode(b, anchor)))
        .sum())
}

/// Least-squares polynomial fit of the tube's encoded coordinates.
///
/// Solves the normal equations with a fully pivoted LU factorization and
/// one round of iterative refinement; systems whose condition number
/// exceeds [`MAX_CONDITION`] are rejected.
pub fn fit_tube_lsq(tube: &Tube, anchor: &BBox, order: usize) -> Result<PolyTubeParams> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(Error::OrderOutOfRange {
            order,
            min: MIN_ORDER,
            max: MAX_ORDER,
        });
    }
    let ts = normalize_timestamps(tube)?;
    if tube.len() <= order {
        return Err(Error::Underdetermined {
            frames: tube.len(),
            order,
        });
    }
    let cols = order + 1;
    let vander = DMatrix::from_fn(ts.len(), cols, |r, c| ts[r].powi(c as i32));
    let normal = vander.transpose() * &vander;

    let sv = normal.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let lu = normal.clone().full_piv_lu();

    let targets: Vec<[f64; 4]> = tube.boxes().map(|b| encode(b, anchor).to_array()).collect();
    let mut coeffs: [Vec<f64>; 4] = Default::default();
    for (c, out) in coeffs.iter_mut().enumerate() {
        let y = DVector::from_iterator(ts.len(), targets.iter().map(|v| v[c]));
        let rhs = vander.transpose() * &y;
        let mut theta = lu
            .solve(&rhs)
            .ok_or(Error::IllConditioned { condition })?;
        let correction = lu
            .solve(&(&rhs - &normal * &theta))
            .ok_or(Error::IllConditioned { condition })?;
        theta += correction;
        *out = theta.iter().copied().collect();
    }
    PolyTubeParams::new(coeffs)
}

/// One positive anchor with its predicted parameters and matched tube.
#[derive(Debug, Clone, Copy)]
pub struct PositiveSample<'a> {
    pub anchor: BBox,
    pub params: &'a PolyTubeParams,
    pub tube: &'a Tube,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionLoss {
    pub value: f64,
    /// Set when there were no positive anchors; `value` is then 0.
    pub empty_positive_set: bool,
}

/// Whole-tube regression loss summed over positive anchors, each anchor's
/// term averaged over the length of its own matched tube.
pub fn coarse_regression_loss(positives: &[PositiveSample<'_>]) -> Result<RegressionLoss> {
    let mut value = 0.0;
    for p in positives {
        value += tube_residual(p.params, p.tube, &p.anchor)? / p.tube.len() as f64;
    }
    Ok(RegressionLoss {
        value,
        empty_positive_set: positives.is_empty(),
    })
}

/// Class-probability vector over `C + 1` classes (background included) and
/// the sample's true class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSample {
    pub scores: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseLoss {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
    pub empty_positive_set: bool,
}

const SCORE_SUM_TOL: f64 = 1e-6;

/// Cross-entropy over all sampled anchors normalized by `|B+ ∪ B-|`, plus
/// the regression loss normalized by `|B+|` (skipped when `|B+| = 0`).
pub fn coarse_total_loss(
    samples: &[ClassSample],
    positives: &[PositiveSample<'_>],
    num_positive: usize,
    num_negative: usize,
) -> Result<CoarseLoss> {
    let mut classification = 0.0;
    for s in samples {
        let sum: f64 = s.scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOL || s.scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::NotNormalized { sum });
        }
        let p = *s.scores.get(s.label).ok_or_else(|| {
            Error::param("label", format!("class {} outside {} scores", s.label, s.scores.len()))
        })?;
        classification -= p.max(f64::MIN_POSITIVE).ln();
    }
    let regression = coarse_regression_loss(positives)?;
    let sampled = num_positive + num_negative;
    let mut total = 0.0;
    if sampled > 0 {
        total += classification / sampled as f64;
    }
    if num_positive > 0 {
        total += regression.value / num_positive as f64;
    }
    Ok(CoarseLoss {
        classification,
        regression: regression.value,
        total,
        empty_positive_set: num_positive == 0,
    })
}
