use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tubekit::evalkit::{self, DetectionSet};
use tubekit::harness::{self, report, schema, svg, RunConfig};
use tubekit::keyframe::greedy_keyframe_labels;
use tubekit::matching::{self, AnchorSet, MatchStats};
use tubekit::paramtube::{eval_poly_tube, fit_tube_lsq, normalize_timestamps, tube_residual};
use tubekit::pipeline::{self, StageParams, VideoData};
use tubekit::synth;
use tubekit::{tube_iou, Error, Tube, TubeFrame};

/// Action-tube fitting, refinement and evaluation toolkit.
#[derive(Debug, Parser)]
#[command(name = "tubekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Named parameter preset (ucf101-24, jhmdb-21, ucfsports).
    #[arg(long)]
    preset: Option<String>,
    /// JSON configuration file overlaying the preset; defaults to $TUBEKIT_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with coarse detections, proposals and importance.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of videos (overrides the configuration).
        #[arg(long)]
        videos: Option<usize>,
    },
    /// Fit polynomial tube parameters to every ground-truth tube.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Anchor file; clustered from the input when absent.
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
    },
    /// Label anchors against the ground truth of every video.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
    },
    /// Greedy key-timestamp labels for every ground-truth tube.
    Keyframes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the coarse detections of a dataset.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate detections against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write precision-recall curves at 0.5 as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Ablation tables over refinement settings and polynomial orders.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write a trajectory plot of the first video.
        #[arg(long)]
        svg: bool,
    },
}

/// Exit codes.
mod code {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_INPUT: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const INVALID_INPUT: u8 = 5;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Parse { .. } => e.into(),
            e => Failure {
                code: code::CONFIG,
                kind: "config_out_of_range",
                message: e.to_string(),
            },
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Io { not_found: true, .. } => (code::MISSING_INPUT, "missing_input"),
            Error::Io { .. } => (code::OTHER, "io"),
            Error::Parse { .. } | Error::Schema { .. } | Error::UnsupportedVersion { .. } => (code::INVALID_INPUT, "invalid_input"),
            Error::InvalidParameter { .. } | Error::OutOfRange { .. } | Error::OrderOutOfRange { .. } => {
                (code::CONFIG, "config_out_of_range")
            }
            _ => (code::OTHER, "runtime"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = harness::load_config(common.config.as_deref(), common.preset.as_deref()).map_err(Failure::config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: code::OTHER,
        kind: "io",
        message: format!("{}: {e}", dir.display()),
    })
}

fn anchors_for(path: Option<&Path>, videos: &[VideoData], cfg: &RunConfig) -> Result<AnchorSet, Failure> {
    match path {
        Some(p) => Ok(schema::load_anchors(p)?),
        None => {
            let tubes: Vec<&Tube> = videos.iter().flat_map(|v| &v.tubes).collect();
            Ok(pipeline::dataset_anchors(&tubes, &cfg.pipeline)?)
        }
    }
}

fn simulate(cfg: &RunConfig, out_dir: &Path) -> Outcome {
    ensure_dir(out_dir)?;
    let data = synth::gen_dataset(&cfg.synth)?;
    let tubes: Vec<&Tube> = data.videos.iter().flat_map(|v| &v.tubes).collect();
    let anchors = pipeline::dataset_anchors(&tubes, &cfg.pipeline)?;
    let videos = pipeline::synthetic_inputs(&data, &anchors, cfg.pipeline.order, &cfg.pipeline, &cfg.synth)?;
    schema::save_videos(&out_dir.join("dataset.json"), &videos)?;
    schema::save_anchors(&out_dir.join("anchors.json"), &anchors)?;
    harness::write_json(&out_dir.join("config.json"), cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct FitRecord {
    video: String,
    tube: usize,
    label: u32,
    anchor: [f64; 4],
    order: usize,
    params: [Vec<f64>; 4],
    residual: f64,
    reconstruction_iou: f64,
}

fn fit(cfg: &RunConfig, input: &Path, out: &Path, anchors: Option<&Path>, order: Option<usize>) -> Outcome {
    let videos = schema::load_videos(input)?;
    let order = order.unwrap_or(cfg.pipeline.order);
    let anchors = anchors_for(anchors, &videos, cfg)?.anchors();
    let mc = cfg.pipeline.match_config();
    let mut records = Vec::new();
    for v in &videos {
        for (i, tube) in v.tubes.iter().enumerate() {
            let a = anchors[matching::best_anchor(&anchors, tube, &mc).expect("non-empty anchor set")];
            let params = fit_tube_lsq(tube, &a, order)?;
            let times = normalize_timestamps(tube)?;
            let frames = tube
                .frames()
                .iter()
                .zip(&times)
                .map(|(f, &t)| Ok(TubeFrame::new(f.t, eval_poly_tube(&params, t, &a)?)))
                .collect::<tubekit::Result<Vec<_>>>()?;
            let recon = Tube::new(tube.label(), frames)?;
            records.push(FitRecord {
                video: v.id.clone(),
                tube: i,
                label: tube.label(),
                anchor: a.to_array(),
                order,
                params: params.coefficients().clone(),
                residual: tube_residual(&params, tube, &a)?,
                reconstruction_iou: tube_iou(&recon, tube),
            });
        }
    }
    harness::write_json(out, &records)?;
    Ok(())
}

#[derive(Serialize)]
struct Counts {
    positive: usize,
    negative: usize,
    ignore: usize,
}

impl From<MatchStats> for Counts {
    fn from(s: MatchStats) -> Self {
        Counts {
            positive: s.positive,
            negative: s.negative,
            ignore: s.ignore,
        }
    }
}

#[derive(Serialize)]
struct MatchRecord {
    video: String,
    /// 1 positive, -1 negative, 0 ignored, in anchor order.
    labels: Vec<i8>,
    /// Matched tube index per anchor, -1 when not positive.
    matched_tube: Vec<i64>,
    segment: Counts,
    whole_tube: Counts,
}

#[derive(Serialize)]
struct MatchOutput {
    segment_len: usize,
    num_anchors: usize,
    segment: Counts,
    whole_tube: Counts,
    videos: Vec<MatchRecord>,
}

fn match_cmd(cfg: &RunConfig, input: &Path, out: &Path, anchors: Option<&Path>) -> Outcome {
    let videos = schema::load_videos(input)?;
    let anchors = anchors_for(anchors, &videos, cfg)?.anchors();
    let mc = cfg.pipeline.match_config();
    let mut total = MatchStats::default();
    let mut total_whole = MatchStats::default();
    let mut records = Vec::new();
    for v in &videos {
        let labels = matching::match_anchors(&anchors, &v.tubes, &mc);
        let whole: Vec<_> = anchors.iter().map(|a| matching::match_anchor_whole_tube(a, &v.tubes, &mc)).collect();
        let (s, w) = (MatchStats::from_labels(&labels), MatchStats::from_labels(&whole));
        for (t, x) in [(&mut total, s), (&mut total_whole, w)] {
            t.positive += x.positive;
            t.negative += x.negative;
            t.ignore += x.ignore;
        }
        records.push(MatchRecord {
            video: v.id.clone(),
            labels: labels.iter().map(|l| l.value()).collect(),
            matched_tube: labels.iter().map(|l| l.matched_tube().map_or(-1, |t| t as i64)).collect(),
            segment: s.into(),
            whole_tube: w.into(),
        });
    }
    harness::write_json(
        out,
        &MatchOutput {
            segment_len: mc.segment_len,
            num_anchors: anchors.len(),
            segment: total.into(),
            whole_tube: total_whole.into(),
            videos: records,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct KeyframeRecord {
    video: String,
    tube: usize,
    labels: Vec<u8>,
    selected: Vec<usize>,
    initial_iou: f64,
    achieved_iou: f64,
    /// Sample added at each greedy step with the IOU reached.
    steps: Vec<(usize, f64)>,
}

fn keyframes(cfg: &RunConfig, input: &Path, out: &Path) -> Outcome {
    let videos = schema::load_videos(input)?;
    let mut records = Vec::new();
    for v in &videos {
        for (i, tube) in v.tubes.iter().enumerate() {
            let l = greedy_keyframe_labels(tube, cfg.pipeline.samples, cfg.pipeline.epsilon)?;
            records.push(KeyframeRecord {
                video: v.id.clone(),
                tube: i,
                labels: l.labels,
                selected: l.selected,
                initial_iou: l.initial_iou,
                achieved_iou: l.achieved_iou,
                steps: l.steps.iter().map(|s| (s.index, s.iou)).collect(),
            });
        }
    }
    harness::write_json(out, &records)?;
    Ok(())
}

fn with_detections(videos: &[VideoData], dets: &DetectionSet) -> Vec<VideoData> {
    videos
        .iter()
        .map(|v| VideoData {
            id: v.id.clone(),
            span: v.span,
            tubes: Vec::new(),
            coarse: Vec::new(),
            proposals: Vec::new(),
            importance: Vec::new(),
            detections: dets.videos.get(&v.id).cloned().unwrap_or_default(),
        })
        .collect()
}

fn refine(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Outcome {
    let videos = schema::load_videos(input)?;
    ensure_dir(out_dir)?;
    let (coarse, refined) = pipeline::run_all(&videos, &StageParams::from(&cfg.pipeline))?;
    schema::save_videos(&out_dir.join("coarse_detections.json"), &with_detections(&videos, &coarse))?;
    schema::save_videos(&out_dir.join("refined_detections.json"), &with_detections(&videos, &refined))?;
    Ok(())
}

fn eval(cfg: &RunConfig, gt: &Path, det: &Path, out_dir: &Path, want_svg: bool) -> Outcome {
    let gts = schema::load_annotations(gt)?;
    let dets = schema::load_detections(det)?;
    ensure_dir(out_dir)?;
    let rep = evalkit::evaluate(&dets, &gts, &cfg.pipeline.deltas)?;
    harness::write_text(&out_dir.join("eval.json"), &report::eval_json(&rep)?)?;
    harness::write_text(&out_dir.join("eval.csv"), &report::eval_csv(&rep)?)?;
    if want_svg {
        let m = evalkit::video_map(&dets, &gts, 0.5)?;
        let series: Vec<(String, Vec<(f64, f64)>)> = m
            .per_class
            .iter()
            .filter(|c| c.ap.is_some())
            .map(|c| (format!("class {} (AP {:.3})", c.label, c.ap.unwrap_or(0.0)), c.curve.clone()))
            .collect();
        harness::write_text(&out_dir.join("pr_curves.svg"), &svg::pr_curves("video AP at 0.5", &series))?;
    }
    Ok(())
}

fn report_cmd(cfg: &RunConfig, input: &Path, out_dir: &Path, want_svg: bool) -> Outcome {
    let videos = schema::load_videos(input)?;
    ensure_dir(out_dir)?;
    let anchors = anchors_for(None, &videos, cfg)?;
    let table = pipeline::ablation(&videos, &anchors, &cfg.pipeline, &cfg.synth)?;
    harness::write_text(&out_dir.join("ablation.json"), &report::ablation_json(&table)?)?;
    harness::write_text(&out_dir.join("ablation.csv"), &report::ablation_csv(&table)?)?;
    harness::write_text(&out_dir.join("ablation.md"), &report::ablation_markdown(&table))?;
    if want_svg {
        if let Some(first) = videos.first() {
            let out = pipeline::run_video(first, &StageParams::from(&cfg.pipeline))?;
            let mut dets: Vec<(String, Tube)> = Vec::new();
            dets.extend(out.coarse.into_iter().map(|d| ("coarse".to_string(), d.tube)));
            dets.extend(out.refined.into_iter().map(|d| ("refined".to_string(), d.tube)));
            harness::write_text(
                &out_dir.join("trajectories.svg"),
                &svg::trajectories(&format!("video {}", first.id), &first.tubes, &dets),
            )?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate { common, out_dir, videos } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = videos {
                cfg.synth.videos = n;
                cfg.validate().map_err(Failure::config)?;
            }
            simulate(&cfg, &out_dir)
        }
        Command::Fit {
            common,
            input,
            out,
            anchors,
            order,
        } => {
            let cfg = resolve(&common)?;
            fit(&cfg, &input, &out, anchors.as_deref(), order)
        }
        Command::Match {
            common,
            input,
            out,
            anchors,
        } => {
            let cfg = resolve(&common)?;
            match_cmd(&cfg, &input, &out, anchors.as_deref())
        }
        Command::Keyframes { common, input, out } => keyframes(&resolve(&common)?, &input, &out),
        Command::Refine { common, input, out_dir } => refine(&resolve(&common)?, &input, &out_dir),
        Command::Eval {
            common,
            ground_truth,
            detections,
            out_dir,
            svg,
        } => eval(&resolve(&common)?, &ground_truth, &detections, &out_dir, svg),
        Command::Report {
            common,
            input,
            out_dir,
            svg,
        } => report_cmd(&resolve(&common)?, &input, &out_dir, svg),
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: u8,
}

fn fail(f: &Failure) -> ExitCode {
    let rec = ErrorRecord {
        error: f.kind,
        message: &f.message,
        exit_code: f.code,
    };
    eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(&Failure {
                code: code::USAGE,
                kind: "usage",
                message: e.to_string().trim_end().to_string(),
            })
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}
