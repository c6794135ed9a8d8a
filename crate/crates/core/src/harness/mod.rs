//! File formats, run configuration and reports.

pub mod report;
pub mod schema;
pub mod svg;

use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::pipeline::{preset_frames, PipelineConfig};
use crate::synth::SynthConfig;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "TUBEKIT_CONFIG";

/// Formats a float with 17 significant digits, positional when the decimal
/// exponent is moderate and scientific otherwise.
pub fn format_f64(v: f64) -> String {
    if !v.is_finite() {
        return "null".to_string();
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if (-5..=16).contains(&exp) {
        let fixed = format!("{v:.prec$}", prec = (16 - exp) as usize);
        // rounding can shift the exponent and lose a digit
        if fixed.parse::<f64>().is_ok_and(|p| p.to_bits() == v.to_bits()) {
            return fixed;
        }
    }
    sci
}

/// Compact JSON with every float written by [`format_f64`].
#[derive(Debug, Default)]
struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes to JSON text (with trailing newline) using exact floats.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser).map_err(|e| Error::param("json", e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
        not_found: e.kind() == io::ErrorKind::NotFound,
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Parses JSON, reporting the line and column of malformed or unknown
/// content.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Pipeline and synthetic-data settings of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let pipeline = PipelineConfig::preset(name)?;
        let synth = SynthConfig {
            frames: preset_frames(name)?,
            seed: pipeline.seed,
            ..SynthConfig::default()
        };
        Some(Self { pipeline, synth })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.synth.validate()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.seed = seed;
        self.synth.seed = seed;
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves the run configuration: the named preset (or defaults),
/// overlaid with the fields present in the configuration file. The file is
/// `path` when given, otherwise the file named by [`CONFIG_ENV`] if set.
pub fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    let mut base = match preset {
        Some(name) => RunConfig::preset(name).ok_or_else(|| Error::param("preset", format!("unknown preset {name:?}")))?,
        None => RunConfig::default(),
    };
    let env_path = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
    let file = path.map(Path::to_path_buf).or_else(|| env_path.map(Into::into));
    if let Some(file) = file {
        let text = read_file(&file)?;
        // strict parse first so unknown fields are reported with a location
        parse_json::<RunConfig>(&text, &file)?;
        let over: Value = parse_json(&text, &file)?;
        let mut value = serde_json::to_value(&base).expect("config serializes");
        merge(&mut value, over);
        base = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: file.display().to_string(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
    }
    Ok(base)
}
