//! Boxes, tubes and the overlap measures shared by the rest of the crate.
//!
//! Boxes are stored in center format `(cx, cy, w, h)` using coordinates
//! normalized by the image size. Centers are allowed to leave `[0, 1]`
//! (interpolated trajectories drift) but extents are always positive.

use crate::error::{Error, Result};

/// Smallest extent an interpolated box may take.
pub const MIN_EXTENT: f64 = 1e-6;

/// Axis-aligned box in center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let finite = cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { cx, cy, w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// Like [`BBox::new`] but clamps the extents to [`MIN_EXTENT`].
    ///
    /// Used for interpolated boxes whose extent can undershoot. Panics on
    /// non-finite input.
    pub fn clamped(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx, cy, w.max(MIN_EXTENT), h.max(MIN_EXTENT))
            .expect("interpolated box coordinates must be finite")
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn to_corners(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union of two boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.left().max(b.left());
    let ih = a.bottom().min(b.bottom()) - a.top().max(b.top());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    // extents from corners so identical boxes give exactly 1
    let corner_area = |x: &BBox| (x.right() - x.left()) * (x.bottom() - x.top());
    let inter = iw * ih;
    let union = corner_area(a) + corner_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One annotated frame of a tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeFrame {
    pub t: i64,
    pub bbox: BBox,
}

impl TubeFrame {
    pub fn new(t: i64, bbox: BBox) -> Self {
        Self { t, bbox }
    }
}

/// Class-labeled sequence of boxes with strictly increasing frame timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    label: u32,
    frames: Vec<TubeFrame>,
}

impl Tube {
    pub fn new(label: u32, frames: Vec<TubeFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyTube);
        }
        for pair in frames.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::UnsortedTube {
                    prev: pair[0].t,
                    next: pair[1].t,
                });
            }
        }
        Ok(Self { label, frames })
    }

    /// Tube over consecutive frames starting at `start`.
    pub fn contiguous(label: u32, start: i64, boxes: impl IntoIterator<Item = BBox>) -> Result<Self> {
        let frames = boxes
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| TubeFrame::new(start + i as i64, bbox))
            .collect();
        Self::new(label, frames)
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = label;
        self
    }

    pub fn frames(&self) -> &[TubeFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start(&self) -> i64 {
        self.frames[0].t
    }

    pub fn end(&self) -> i64 {
        self.frames[self.frames.len() - 1].t
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BBox> + '_ {
        self.frames.iter().map(|f| &f.bbox)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.frames.iter().map(|f| f.t)
    }

    pub fn box_at(&self, t: i64) -> Option<&BBox> {
        self.frames
            .binary_search_by_key(&t, |f| f.t)
            .ok()
            .map(|i| &self.frames[i].bbox)
    }

    /// Index of the frame whose timestamp is closest to `t` (earlier frame on ties).
    pub fn nearest_index(&self, t: i64) -> usize {
        match self.frames.binary_search_by_key(&t, |f| f.t) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.frames.len() => i - 1,
            Err(i) => {
                if t - self.frames[i - 1].t <= self.frames[i].t - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

/// Closed frame interval `[start, end]` produced by a temporal proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemporalSpan {
    start: i64,
    end: i64,
}

impl TemporalSpan {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn of_tube(tube: &Tube) -> Result<Self> {
        Self::new(tube.start(), tube.end())
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn frames(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    /// Maps a normalized time in `[0, 1]` to the nearest frame (half-up rounding).
    pub fn frame_at(&self, s: f64) -> i64 {
        round_half_up(self.start as f64 + s * (self.end - self.start) as f64)
    }

    pub fn normalize(&self, t: i64) -> f64 {
        (t - self.start) as f64 / (self.end - self.start) as f64
    }
}

pub(crate) fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Spatio-temporal IOU: per-frame box IOU summed over the union of both
/// tubes' timestamps (zero where only one tube has a box), divided by the
/// size of that union.
pub fn tube_iou(a: &Tube, b: &Tube) -> f64 {
    let (fa, fb) = (a.frames(), b.frames());
    if a.end() < b.start() || b.end() < a.start() {
        return 0.0;
    }
    let (mut i, mut j) = (0, 0);
    let mut union = 0usize;
    let mut sum = 0.0;
    while i < fa.len() && j < fb.len() {
        match fa[i].t.cmp(&fb[j].t) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += box_iou(&fa[i].bbox, &fb[j].bbox);
                i += 1;
                j += 1;
            }
        }
        union += 1;
    }
    union += (fa.len() - i) + (fb.len() - j);
    sum / union as f64
}

/// Mean IOU between `anchor` and the `k` tube boxes starting at `start`,
/// truncated at the end of the tube.
///
/// Panics if `start` is past the end of the tube or `k` is zero.
pub fn segment_iou(anchor: &BBox, tube: &Tube, start: usize, k: usize) -> f64 {
    assert!(k >= 1, "segment length must be at least 1");
    assert!(start < tube.len(), "segment start {start} outside tube of length {}", tube.len());
    let end = (start + k).min(tube.len());
    let sum: f64 = tube.frames()[start..end]
        .iter()
        .map(|f| box_iou(anchor, &f.bbox))
        .sum();
    sum / (end - start) as f64
}

/// Natural cubic spline through `(x, y)` knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives at the knots, zero at both ends
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::param("knots", "x and y lengths differ"));
        }
        if xs.len() < 2 {
            return Err(Error::DegenerateTube { frames: xs.len() });
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::param("knots", "non-finite knot"));
        }
        if xs.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::param("knots", "knot positions must be strictly increasing"));
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let h: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
            let size = n - 2;
            let mut diag = vec![0.0; size];
            let mut upper = vec![0.0; size];
            let mut rhs = vec![0.0; size];
            for r in 0..size {
                let i = r + 1;
                diag[r] = 2.0 * (h[i - 1] + h[i]);
                upper[r] = h[i];
                rhs[r] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            for r in 1..size {
                let lower = h[r];
                let f = lower / diag[r - 1];
                diag[r] -= f * upper[r - 1];
                rhs[r] -= f * rhs[r - 1];
            }
            m[size] = rhs[size - 1] / diag[size - 1];
            for r in (0..size - 1).rev() {
                m[r + 1] = (rhs[r] - upper[r] * m[r + 2]) / diag[r];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Evaluates the spline; `x` must lie within the knot span.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&x) {
            return Err(Error::OutOfRange {
                what: "interpolation time",
                value: x,
                lo,
                hi,
            });
        }
        let seg = match self.xs.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return Ok(self.ys[i]),
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.xs[seg], self.xs[seg + 1]);
        let h = x1 - x0;
        let a = x1 - x;
        let b = x - x0;
        let (m0, m1) = (self.m[seg], self.m[seg + 1]);
        Ok(m0 * a * a * a / (6.0 * h)
            + m1 * b * b * b / (6.0 * h)
            + (self.ys[seg] / h - m0 * h / 6.0) * a
            + (self.ys[seg + 1] / h - m1 * h / 6.0) * b)
    }
}

/// Per-coordinate natural cubic spline through timestamped boxes.
#[derive(Debug, Clone)]
pub struct BoxSpline {
    coords: [CubicSpline; 4],
}

impl BoxSpline {
    pub fn new(knots: &[(f64, BBox)]) -> Result<Self> {
        let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let coord = |c: usize| -> Result<CubicSpline> {
            let ys: Vec<f64> = knots.iter().map(|k| k.1.to_array()[c]).collect();
            CubicSpline::natural(&xs, &ys)
        };
        Ok(Self {
            coords: [coord(0)?, coord(1)?, coord(2)?, coord(3)?],
        })
    }

    pub fn eval(&self, t: f64) -> Result<BBox> {
        let cx = self.coords[0].eval(t)?;
        let cy = self.coords[1].eval(t)?;
        let w = self.coords[2].eval(t)?;
        let h = self.coords[3].eval(t)?;
        Ok(BBox::clamped(cx, cy, w, h))
    }
}

/// Interpolates boxes at `queries` from timestamped knots with a natural
/// cubic spline per coordinate. Extents that undershoot are clamped to
/// [`MIN_EXTENT`].
pub fn interp_tube(knots: &[(f64, BBox)], queries: &[f64]) -> Result<Vec<BBox>> {
    let spline = BoxSpline::new(knots)?;
    queries.iter().map(|&t| spline.eval(t)).collect()
}
