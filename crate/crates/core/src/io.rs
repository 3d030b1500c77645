//! Line-delimited JSON record files shared by the pipeline stages.
//!
//! Every file starts with one header line naming its format and the digest
//! of the configuration that produced it; each following line is one frame.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contact::{ContactMap, ContactState, FingertipTrace};
use crate::error::{Error, Result};
use crate::hand_model::JointVector;
use crate::refine::RefinedFrame;
use crate::retarget::{HumanFrame, RetargetedFrame};

pub const FORMAT_VERSION: u32 = 1;

pub const HUMAN_FORMAT: &str = "human-trajectory";
pub const JOINT_FORMAT: &str = "joint-sequence";
pub const CONTACT_FORMAT: &str = "contact-timeline";
pub const REFINED_FORMAT: &str = "refined-sequence";
pub const TRACE_FORMAT: &str = "fingertip-trace";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    /// Digest of the configuration that produced the file; absent for
    /// hand-authored inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn new(format: &str) -> Self {
        Header {
            format: format.to_string(),
            version: FORMAT_VERSION,
            config_digest: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = Some(digest.into());
        self
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = meta;
        self
    }

    /// Fails unless the file was produced under `expected`, or `force` is set.
    pub fn check_digest(&self, what: &str, expected: &str, force: bool) -> Result<()> {
        let found = self.config_digest.as_deref().unwrap_or("none");
        if found != expected && !force {
            return Err(Error::DigestMismatch {
                what: what.to_string(),
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
        if found != expected {
            log::warn!("{what}: digest {found} does not match {expected}; continuing because of --force");
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn to_line<T: Serialize>(value: &T, out: &mut Vec<u8>) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Parse {
        context: "serialisation".into(),
        message: e.to_string(),
    })?;
    out.push(b'\n');
    Ok(())
}

/// Serialises a header and records into the line format.
pub fn encode_records<T: Serialize>(header: &Header, records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    to_line(header, &mut out)?;
    for r in records {
        to_line(r, &mut out)?;
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    write_atomic(path, &encode_records(header, records)?)
}

/// Parses the line format, checking the header's format name. Errors name
/// the offending line.
pub fn decode_records<T: DeserializeOwned>(text: &str, source: &str, format: &str) -> Result<(Header, Vec<T>)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        context: format!("{source} line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, first) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(hl + 1, format!("bad header: {e}")))?;
    if header.format != format {
        return Err(parse_err(hl + 1, format!("expected a {format} file, found {}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(hl + 1, format!("unsupported version {}", header.version)));
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
        .collect::<Result<Vec<T>>>()?;
    Ok((header, records))
}

pub fn read_records<T: DeserializeOwned>(path: &Path, format: &str) -> Result<(Header, Vec<T>)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    decode_records(&text, &path.display().to_string(), format)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRecord {
    pub t: f64,
    pub keypoints: Vec<[f64; 3]>,
}

impl From<&HumanFrame> for HumanRecord {
    fn from(f: &HumanFrame) -> Self {
        HumanRecord {
            t: f.timestamp,
            keypoints: f.keypoints.iter().map(|p| p.coords.into()).collect(),
        }
    }
}

impl From<HumanRecord> for HumanFrame {
    fn from(r: HumanRecord) -> Self {
        HumanFrame {
            timestamp: r.t,
            keypoints: r.keypoints.into_iter().map(Point3::from).collect(),
        }
    }
}

pub fn write_human(path: &Path, frames: &[HumanFrame]) -> Result<()> {
    let records: Vec<HumanRecord> = frames.iter().map(HumanRecord::from).collect();
    let meta = serde_json::json!({ "units": "m", "keypoints": frames.first().map_or(0, |f| f.keypoints.len()) });
    write_records(path, &Header::new(HUMAN_FORMAT).with_meta(meta), &records)
}

pub fn read_human(path: &Path) -> Result<Vec<HumanFrame>> {
    let (_, records) = read_records::<HumanRecord>(path, HUMAN_FORMAT)?;
    Ok(records.into_iter().map(HumanFrame::from).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRecord {
    pub frame: usize,
    pub t: f64,
    pub raw: ContactState,
    pub state: ContactState,
    pub map: ContactMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedRecord {
    pub frame: usize,
    pub t: f64,
    #[serde(flatten)]
    pub refined: RefinedFrame,
}

impl RefinedRecord {
    pub fn q(&self) -> &JointVector {
        &self.refined.q
    }
}

/// One fingertip-trace line; `null` entries mark digits without a marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: f64,
    pub positions: [Option<[f64; 3]>; 5],
    pub distances: [Option<f64>; 5],
}

pub fn write_trace(path: &Path, trace: &FingertipTrace, meta: serde_json::Value) -> Result<()> {
    let records: Vec<TraceRecord> = trace
        .timestamps
        .iter()
        .zip(trace.positions.iter().zip(&trace.distances))
        .map(|(t, (p, d))| TraceRecord {
            t: *t,
            positions: p.map(|p| p.map(|p| p.coords.into())),
            distances: d.map(|v| v.is_finite().then_some(v)),
        })
        .collect();
    write_records(path, &Header::new(TRACE_FORMAT).with_meta(meta), &records)
}

pub fn read_trace(path: &Path) -> Result<(Header, FingertipTrace)> {
    let (header, records) = read_records::<TraceRecord>(path, TRACE_FORMAT)?;
    let trace = FingertipTrace {
        timestamps: records.iter().map(|r| r.t).collect(),
        positions: records.iter().map(|r| r.positions.map(|p| p.map(Point3::from))).collect(),
        distances: records.iter().map(|r| r.distances.map(|d| d.unwrap_or(f64::INFINITY))).collect(),
    };
    Ok((header, trace))
}

pub fn write_joint_sequence(path: &Path, header: &Header, frames: &[RetargetedFrame]) -> Result<()> {
    write_records(path, header, frames)
}

pub fn read_joint_sequence(path: &Path) -> Result<(Header, Vec<RetargetedFrame>)> {
    read_records(path, JOINT_FORMAT)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
