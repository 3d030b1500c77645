//! End-to-end orchestration: configuration loading, the per-stage commands
//! and the run manifest.
//!
//! Every stage file carries a digest of the configuration that produced it.
//! Digests are chained, so the contact digest covers the retarget settings
//! and the refine digest covers both upstream stages. A stage reading an
//! upstream file whose digest differs from the one the current configuration
//! implies refuses to run unless forced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contact::{extract_contacts, ContactConfig, ContactState, ObjectMotion};
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::hand_model::{JointVector, KinematicChain};
use crate::io::{self, ContactRecord, Header, RefinedRecord};
use crate::metrics::{evaluate, MetricsOptions, MetricsReport};
use crate::refine::{sequential_refine, RefineConfig};
use crate::retarget::{retarget_sequence, HumanFrame, RetargetConfig, RetargetedFrame};

pub const RETARGET_FILE: &str = "retarget.jsonl";
pub const CONTACT_FILE: &str = "contact.jsonl";
pub const REFINE_FILE: &str = "refine.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const SERIES_FILE: &str = "series.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

const CLOUD_SOURCE: &str = "hand keypoints (scaled human vs robot forward kinematics)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub chain: PathBuf,
    pub mesh: PathBuf,
    pub human: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_scale() -> f64 {
    10.0 / 9.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Factor applied to the human keypoints and the object mesh on load.
    #[serde(default = "default_scale")]
    pub scale_s: f64,
    /// Seeds the retargeting search; replaces `retarget.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retarget: RetargetConfig,
    #[serde(default)]
    pub contact: ContactConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub metrics: MetricsOptions,
}

impl PipelineConfig {
    pub fn new(paths: Paths) -> Self {
        PipelineConfig {
            paths,
            scale_s: default_scale(),
            seed: 0,
            retarget: RetargetConfig::default(),
            contact: ContactConfig::default(),
            refine: RefineConfig::default(),
            metrics: MetricsOptions::default(),
        }
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Loads a TOML configuration. Relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.chain, &mut p.mesh, &mut p.human, &mut p.output] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Checks everything that can be checked without loading the inputs.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s > 0.0 && self.scale_s.is_finite()) {
            return Err(Error::Config(format!("scale_s must be positive, got {}", self.scale_s)));
        }
        for (what, path) in [("chain", &self.paths.chain), ("mesh", &self.paths.mesh), ("human", &self.paths.human)] {
            if !path.is_file() {
                return Err(Error::Config(format!("paths.{what}: {} does not exist", path.display())));
            }
        }
        self.contact.validate()?;
        self.refine.validate()?;
        self.metrics.validate()
    }

    /// The retarget settings with the pipeline seed applied.
    pub fn effective_retarget(&self) -> RetargetConfig {
        RetargetConfig {
            seed: self.seed,
            ..self.retarget.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigests {
    pub retarget: String,
    pub contact: String,
    pub refine: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub stage_digests: StageDigests,
    pub inputs: BTreeMap<String, FileDigest>,
    pub stages: Vec<StageTiming>,
    /// Files written by this command, relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

fn digest_value(value: &serde_json::Value) -> String {
    // serde_json maps are ordered by key, so this text is canonical.
    io::sha256_hex(value.to_string().as_bytes())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration types serialise to JSON")
}

/// Loaded inputs plus the digests the configuration implies.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub chain: KinematicChain,
    /// Object mesh after scaling.
    pub mesh: TriangleMesh,
    /// Human frames after scaling.
    pub human: Vec<HumanFrame>,
    pub inputs: BTreeMap<String, FileDigest>,
    pub digests: StageDigests,
    force: bool,
}

struct Run {
    stages: Vec<StageTiming>,
    outputs: Vec<FileDigest>,
}

impl Run {
    fn new() -> Self {
        Run {
            stages: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2} s");
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
        Ok(out)
    }

    fn wrote(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push(FileDigest {
            path: PathBuf::from(name),
            sha256: io::sha256_hex(bytes),
        });
    }
}

impl Pipeline {
    /// Validates the configuration and loads the chain, mesh and human
    /// trajectory. Nothing is computed yet.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let paths = &config.paths;
        let chain = KinematicChain::load(&paths.chain)?;
        config.effective_retarget().validate(chain.dof())?;
        let mesh = TriangleMesh::load_obj(&paths.mesh)?.scaled(config.scale_s)?;
        let human: Vec<HumanFrame> = io::read_human(&paths.human)?
            .iter()
            .map(|f| f.scaled(config.scale_s))
            .collect();
        if human.is_empty() {
            return Err(Error::Config(format!("{} holds no frames", paths.human.display())));
        }
        for (t, f) in human.iter().enumerate() {
            if f.keypoints.len() != chain.keypoint_count() {
                return Err(Error::Dimension {
                    what: "human keypoints per frame",
                    expected: chain.keypoint_count(),
                    actual: f.keypoints.len(),
                }
                .at_frame("ingest", t));
            }
        }
        let mut inputs = BTreeMap::new();
        for (what, path) in [("chain", &paths.chain), ("mesh", &paths.mesh), ("human", &paths.human)] {
            inputs.insert(
                what.to_string(),
                FileDigest {
                    path: path.clone(),
                    sha256: io::file_digest(path)?,
                },
            );
        }
        let retarget = digest_value(&json!({
            "stage": "retarget",
            "config": to_value(&config.effective_retarget()),
            "scale_s": config.scale_s,
            "chain": inputs["chain"].sha256,
            "human": inputs["human"].sha256,
        }));
        let contact = digest_value(&json!({
            "stage": "contact",
            "upstream": retarget,
            "config": to_value(&config.contact),
            "mesh": inputs["mesh"].sha256,
        }));
        let refine = digest_value(&json!({
            "stage": "refine",
            "upstream": contact,
            "config": to_value(&config.refine),
        }));
        Ok(Pipeline {
            config,
            chain,
            mesh,
            human,
            inputs,
            digests: StageDigests {
                retarget,
                contact,
                refine,
            },
            force: false,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::open(PipelineConfig::load(path)?)
    }

    /// Accept upstream files produced under a different configuration.
    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.config.paths.output.join(name)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.human.iter().map(|f| f.timestamp).collect()
    }

    /// Mean spacing of the human timestamps.
    pub fn dt(&self) -> f64 {
        let n = self.human.len();
        if n < 2 {
            return self.config.retarget.dt;
        }
        (self.human[n - 1].timestamp - self.human[0].timestamp) / (n - 1) as f64
    }

    fn check_frames(&self, what: &'static str, actual: usize) -> Result<()> {
        if actual != self.human.len() {
            return Err(Error::Dimension {
                what,
                expected: self.human.len(),
                actual,
            });
        }
        Ok(())
    }

    pub fn read_retargeted(&self) -> Result<Vec<RetargetedFrame>> {
        let (header, frames) = io::read_joint_sequence(&self.output_path(RETARGET_FILE))?;
        header.check_digest(RETARGET_FILE, &self.digests.retarget, self.force)?;
        self.check_frames("retargeted frames", frames.len())?;
        Ok(frames)
    }

    pub fn read_contacts(&self) -> Result<Vec<ContactRecord>> {
        let (header, records) = io::read_records::<ContactRecord>(&self.output_path(CONTACT_FILE), io::CONTACT_FORMAT)?;
        header.check_digest(CONTACT_FILE, &self.digests.contact, self.force)?;
        self.check_frames("contact timeline frames", records.len())?;
        Ok(records)
    }

    pub fn read_refined(&self) -> Result<Vec<RefinedRecord>> {
        let (header, records) = io::read_records::<RefinedRecord>(&self.output_path(REFINE_FILE), io::REFINED_FORMAT)?;
        header.check_digest(REFINE_FILE, &self.digests.refine, self.force)?;
        self.check_frames("refined frames", records.len())?;
        Ok(records)
    }

    fn write(&self, run: &mut Run, name: &str, bytes: Vec<u8>) -> Result<()> {
        io::write_atomic(&self.output_path(name), &bytes)?;
        run.wrote(name, &bytes);
        Ok(())
    }

    fn stage_retarget(&self, run: &mut Run) -> Result<()> {
        let cfg = self.config.effective_retarget();
        let frames = run.time("retarget", || retarget_sequence(&self.chain, &self.human, &cfg))?;
        let header = Header::new(io::JOINT_FORMAT)
            .with_digest(&self.digests.retarget)
            .with_meta(json!({ "chain": self.chain.name(), "frames": frames.len(), "seed": cfg.seed }));
        self.write(run, RETARGET_FILE, io::encode_records(&header, &frames)?)
    }

    fn stage_contact(&self, run: &mut Run) -> Result<()> {
        let retargeted = self.read_retargeted()?;
        let timestamps: Vec<f64> = retargeted.iter().map(|f| f.timestamp).collect();
        let poses: Vec<JointVector> = retargeted.into_iter().map(|f| f.q).collect();
        let timeline = run.time("contact", || {
            extract_contacts(&self.chain, &timestamps, &poses, &self.mesh, &ObjectMotion::Static, &self.config.contact)
        })?;
        let records: Vec<ContactRecord> = (0..poses.len())
            .map(|i| ContactRecord {
                frame: i,
                t: timestamps[i],
                raw: timeline.raw[i],
                state: timeline.states[i],
                map: timeline.maps[i].clone(),
            })
            .collect();
        let header = Header::new(io::CONTACT_FORMAT)
            .with_digest(&self.digests.contact)
            .with_meta(json!({ "frames": records.len(), "object": "static" }));
        self.write(run, CONTACT_FILE, io::encode_records(&header, &records)?)
    }

    fn stage_refine(&self, run: &mut Run) -> Result<()> {
        let retargeted = self.read_retargeted()?;
        let contacts = self.read_contacts()?;
        let poses: Vec<JointVector> = retargeted.iter().map(|f| f.q.clone()).collect();
        let maps: Vec<_> = contacts.into_iter().map(|c| c.map).collect();
        let refined = run.time("refine", || sequential_refine(&self.chain, &poses, &maps, &self.mesh, &self.config.refine))?;
        let records: Vec<RefinedRecord> = refined
            .into_iter()
            .zip(&retargeted)
            .enumerate()
            .map(|(frame, (refined, r))| RefinedRecord {
                frame,
                t: r.timestamp,
                refined,
            })
            .collect();
        let header = Header::new(io::REFINED_FORMAT)
            .with_digest(&self.digests.refine)
            .with_meta(json!({ "frames": records.len(), "finger_order": self.config.refine.finger_order }));
        self.write(run, REFINE_FILE, io::encode_records(&header, &records)?)
    }

    /// Scores the retargeted sequence, and the refined one when present.
    pub fn evaluate(&self) -> Result<BTreeMap<String, MetricsReport>> {
        let retargeted = self.read_retargeted()?;
        let states: Vec<ContactState> = match self.output_path(CONTACT_FILE).is_file() {
            true => self.read_contacts()?.into_iter().map(|c| c.state).collect(),
            false => vec![ContactState::default(); retargeted.len()],
        };
        let reference: Vec<Vec<Point3<f64>>> = self.human.iter().map(|f| f.keypoints.clone()).collect();
        let dt = self.dt();
        let score = |q: &[JointVector]| {
            evaluate(&self.chain, &reference, q, dt, &self.mesh, &states, CLOUD_SOURCE, &self.config.metrics)
        };
        let mut reports = BTreeMap::new();
        let q: Vec<JointVector> = retargeted.into_iter().map(|f| f.q).collect();
        reports.insert("retargeted".to_string(), score(&q)?);
        if self.output_path(REFINE_FILE).is_file() {
            let q: Vec<JointVector> = self.read_refined()?.into_iter().map(|r| r.refined.q).collect();
            reports.insert("refined".to_string(), score(&q)?);
        }
        Ok(reports)
    }

    fn stage_metrics(&self, run: &mut Run) -> Result<()> {
        let reports = run.time("metrics", || self.evaluate())?;
        let summaries: BTreeMap<&String, serde_json::Value> = reports
            .iter()
            .map(|(k, r)| {
                let mut v = to_value(r);
                if let Some(m) = v.as_object_mut() {
                    m.remove("series");
                }
                (k, v)
            })
            .collect();
        let doc = json!({
            "config_digest": self.digests.refine,
            "dt": self.dt(),
            "reports": summaries,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| Error::parse(METRICS_FILE, e))?;
        bytes.push(b'\n');
        self.write(run, METRICS_FILE, bytes)?;
        self.write(run, SERIES_FILE, series_table(&self.timestamps(), &reports).into_bytes())
    }

    fn finish(&self, command: &str, run: Run) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: self.config.clone(),
            stage_digests: self.digests.clone(),
            inputs: self.inputs.clone(),
            stages: run.stages,
            outputs: run.outputs,
        };
        io::write_json(&self.output_path(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }

    fn command(&self, name: &str, stages: &[fn(&Self, &mut Run) -> Result<()>]) -> Result<RunManifest> {
        let mut run = Run::new();
        for stage in stages {
            stage(self, &mut run)?;
        }
        self.finish(name, run)
    }

    pub fn cmd_retarget(&self) -> Result<RunManifest> {
        self.command("retarget", &[Self::stage_retarget])
    }

    pub fn cmd_contact(&self) -> Result<RunManifest> {
        self.command("contact", &[Self::stage_contact])
    }

    pub fn cmd_refine(&self) -> Result<RunManifest> {
        self.command("refine", &[Self::stage_refine])
    }

    pub fn cmd_metrics(&self) -> Result<RunManifest> {
        self.command("metrics", &[Self::stage_metrics])
    }

    pub fn cmd_run_all(&self) -> Result<RunManifest> {
        self.command(
            "run-all",
            &[Self::stage_retarget, Self::stage_contact, Self::stage_refine, Self::stage_metrics],
        )
    }
}

fn cell(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => {
            let _ = write!(out, "\t{v}");
        }
        None => out.push('\t'),
    }
}

/// One row per frame; acceleration is centred, so the first and last rows
/// leave it blank.
fn series_table(timestamps: &[f64], reports: &BTreeMap<String, MetricsReport>) -> String {
    let mut out = String::from("frame\tt");
    for name in reports.keys() {
        for col in ["cd", "rms_acc", "penetration", "contact_distance"] {
            let _ = write!(out, "\t{col}_{name}");
        }
    }
    out.push('\n');
    for (i, t) in timestamps.iter().enumerate() {
        let _ = write!(out, "{i}\t{t}");
        for r in reports.values() {
            let s = &r.series;
            cell(&mut out, s.cd.get(i).copied());
            cell(&mut out, i.checked_sub(1).and_then(|j| s.rms_acc.get(j)).copied());
            cell(&mut out, s.penetration.get(i).copied());
            cell(&mut out, s.contact_distance.get(i).copied().flatten());
        }
        out.push('\n');
    }
    out
}
