//! JSON file format shared by annotations, detections, coarse-stage output,
//! proposals and importance scores.
//!
//! ```text
//! {schema_version, videos: [{id, span: {t_s, t_e},
//!   tubes: [{label, frames: [{t, box: [cx, cy, w, h]}]}],
//!   detections: [{label, frames, score, refined_indices?}],
//!   coarse: [{label, anchor, params, cls_score}]?,
//!   proposals: [{sample_index, items: [{box, score}]}],
//!   importance: [p_0, ...]}]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_json};
use crate::error::{Error, Result};
use crate::evalkit::{AnnotationSet, DetectionSet};
use crate::geometry::{BBox, TemporalSpan, Tube, TubeFrame};
use crate::matching::{AnchorSet, AnchorShape};
use crate::paramtube::PolyTubeParams;
use crate::pipeline::VideoData;
use crate::refine::{CoarseDetection, RefinedDetection, ScoredProposal};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub videos: Vec<VideoRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub span: SpanRecord,
    #[serde(default)]
    pub tubes: Vec<TubeRecord>,
    #[serde(default)]
    pub detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coarse: Vec<CoarseRecord>,
    #[serde(default)]
    pub proposals: Vec<ProposalGroup>,
    #[serde(default)]
    pub importance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub t_s: i64,
    pub t_e: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: i64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeRecord {
    pub label: u32,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub label: u32,
    pub frames: Vec<FrameRecord>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refined_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseRecord {
    pub label: u32,
    pub anchor: [f64; 4],
    /// Coefficients for dx, dy, dw, dh, lowest power first.
    pub params: [Vec<f64>; 4],
    pub cls_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalGroup {
    pub sample_index: usize,
    pub items: Vec<ProposalItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalItem {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
}

fn schema_err(location: String, e: impl std::fmt::Display) -> Error {
    Error::Schema {
        location,
        message: e.to_string(),
    }
}

fn frames_to_tube(label: u32, frames: &[FrameRecord], loc: &str) -> Result<Tube> {
    let frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            BBox::try_from(f.bbox)
                .map(|b| TubeFrame::new(f.t, b))
                .map_err(|e| schema_err(format!("{loc} frame {i} (t={})", f.t), e))
        })
        .collect::<Result<Vec<_>>>()?;
    Tube::new(label, frames).map_err(|e| schema_err(loc.to_string(), e))
}

fn tube_to_frames(tube: &Tube) -> Vec<FrameRecord> {
    tube.frames()
        .iter()
        .map(|f| FrameRecord {
            t: f.t,
            bbox: f.bbox.to_array(),
        })
        .collect()
}

fn check_score(v: f64, loc: String) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(schema_err(loc, format!("score {v} outside [0, 1]")))
    }
}

impl VideoRecord {
    pub fn from_data(v: &VideoData) -> Self {
        let mut groups: BTreeMap<usize, Vec<ProposalItem>> = BTreeMap::new();
        for p in &v.proposals {
            groups.entry(p.sample_index).or_default().push(ProposalItem {
                bbox: p.bbox.to_array(),
                score: p.score,
            });
        }
        Self {
            id: v.id.clone(),
            span: SpanRecord {
                t_s: v.span.start(),
                t_e: v.span.end(),
            },
            tubes: v
                .tubes
                .iter()
                .map(|t| TubeRecord {
                    label: t.label(),
                    frames: tube_to_frames(t),
                })
                .collect(),
            detections: v
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    label: d.label(),
                    frames: tube_to_frames(&d.tube),
                    score: d.score,
                    refined_indices: d.refined_indices.clone(),
                })
                .collect(),
            coarse: v
                .coarse
                .iter()
                .map(|c| CoarseRecord {
                    label: c.label,
                    anchor: c.anchor.to_array(),
                    params: c.params.coefficients().clone(),
                    cls_score: c.cls_score,
                })
                .collect(),
            proposals: groups
                .into_iter()
                .map(|(sample_index, items)| ProposalGroup { sample_index, items })
                .collect(),
            importance: v.importance.clone(),
        }
    }

    /// Validated conversion; errors name the video, record and frame.
    pub fn to_data(&self) -> Result<VideoData> {
        let vid = format!("video {:?}", self.id);
        let span = TemporalSpan::new(self.span.t_s, self.span.t_e).map_err(|e| schema_err(format!("{vid} span"), e))?;
        let tubes = self
            .tubes
            .iter()
            .enumerate()
            .map(|(i, t)| frames_to_tube(t.label, &t.frames, &format!("{vid} tube {i}")))
            .collect::<Result<Vec<_>>>()?;
        let detections = self
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let loc = format!("{vid} detection {i}");
                check_score(d.score, loc.clone())?;
                Ok(RefinedDetection {
                    tube: frames_to_tube(d.label, &d.frames, &loc)?,
                    score: d.score,
                    refined_indices: d.refined_indices.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let coarse = self
            .coarse
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let loc = format!("{vid} coarse {i}");
                check_score(c.cls_score, loc.clone())?;
                Ok(CoarseDetection {
                    params: PolyTubeParams::new(c.params.clone()).map_err(|e| schema_err(format!("{loc} params"), e))?,
                    anchor: BBox::try_from(c.anchor).map_err(|e| schema_err(format!("{loc} anchor"), e))?,
                    span,
                    label: c.label,
                    cls_score: c.cls_score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut proposals = Vec::new();
        for g in &self.proposals {
            for (j, item) in g.items.iter().enumerate() {
                let loc = format!("{vid} proposals at sample {} item {j}", g.sample_index);
                check_score(item.score, loc.clone())?;
                proposals.push(ScoredProposal {
                    bbox: BBox::try_from(item.bbox).map_err(|e| schema_err(loc, e))?,
                    score: item.score,
                    sample_index: g.sample_index,
                });
            }
        }
        for (i, &p) in self.importance.iter().enumerate() {
            if !p.is_finite() {
                return Err(schema_err(format!("{vid} importance {i}"), "must be finite"));
            }
        }
        Ok(VideoData {
            id: self.id.clone(),
            span,
            tubes,
            coarse,
            proposals,
            importance: self.importance.clone(),
            detections,
        })
    }
}

impl DatasetFile {
    pub fn from_videos(videos: &[VideoData]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            videos: videos.iter().map(VideoRecord::from_data).collect(),
        }
    }

    pub fn to_videos(&self) -> Result<Vec<VideoData>> {
        if self.schema_version > SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.videos {
            if !seen.insert(v.id.as_str()) {
                return Err(schema_err(format!("video {:?}", v.id), "duplicate video id"));
            }
        }
        self.videos.iter().map(VideoRecord::to_data).collect()
    }
}

/// Anchor grid size and shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorFile {
    pub schema_version: u32,
    pub grid: usize,
    /// `[w, h]` pairs.
    pub shapes: Vec<[f64; 2]>,
}

pub fn save_anchors(path: &Path, anchors: &AnchorSet) -> Result<()> {
    write_json(
        path,
        &AnchorFile {
            schema_version: SCHEMA_VERSION,
            grid: anchors.grid(),
            shapes: anchors.shapes().iter().map(|s| [s.w, s.h]).collect(),
        },
    )
}

pub fn load_anchors(path: &Path) -> Result<AnchorSet> {
    let file: AnchorFile = super::parse_json(&read_file(path)?, path)?;
    if file.schema_version > SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            found: file.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let shapes = file.shapes.iter().map(|&[w, h]| AnchorShape { w, h }).collect();
    AnchorSet::new(file.grid, shapes).map_err(|e| schema_err(format!("{}", path.display()), e))
}

/// Reads and validates a dataset file.
pub fn load_videos(path: &Path) -> Result<Vec<VideoData>> {
    let text = read_file(path)?;
    let file: DatasetFile = super::parse_json(&text, path)?;
    file.to_videos()
}

pub fn save_videos(path: &Path, videos: &[VideoData]) -> Result<()> {
    write_json(path, &DatasetFile::from_videos(videos))
}

/// Ground-truth tubes of a dataset file.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    Ok(crate::pipeline::annotations(&load_videos(path)?))
}

/// Final detections of a dataset file.
pub fn load_detections(path: &Path) -> Result<DetectionSet> {
    Ok(crate::pipeline::detections(&load_videos(path)?))
}

/// Writes an annotation set. Spans are taken from the tube extents.
pub fn save_annotations(path: &Path, gts: &AnnotationSet) -> Result<()> {
    let videos = gts
        .videos
        .iter()
        .map(|(id, tubes)| {
            Ok(VideoData {
                id: id.clone(),
                span: covering_span(tubes.iter())?,
                tubes: tubes.clone(),
                coarse: Vec::new(),
                proposals: Vec::new(),
                importance: Vec::new(),
                detections: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    save_videos(path, &videos)
}

/// Writes a detection set. Spans are taken from the detection extents.
pub fn save_detections(path: &Path, dets: &DetectionSet) -> Result<()> {
    let videos = dets
        .videos
        .iter()
        .map(|(id, ds)| {
            Ok(VideoData {
                id: id.clone(),
                span: covering_span(ds.iter().map(|d| &d.tube))?,
                tubes: Vec::new(),
                coarse: Vec::new(),
                proposals: Vec::new(),
                importance: Vec::new(),
                detections: ds.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    save_videos(path, &videos)
}

/// Smallest span covering every tube; a one-frame placeholder when the
/// tubes cover fewer than two frames.
fn covering_span<'a>(tubes: impl Iterator<Item = &'a Tube>) -> Result<TemporalSpan> {
    let (lo, hi) = tubes.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t.start()), hi.max(t.end())));
    if lo > hi {
        return TemporalSpan::new(0, 1);
    }
    TemporalSpan::new(lo, hi.max(lo + 1))
}
