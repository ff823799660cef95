//! Dataset generation and the file-level operations behind the CLI.
//!
//! Dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/schema.schema
//! <dir>/designs.csv        id column + one column per parameter
//! <dir>/designs.f32        VDES matrix, one row per design (labels as indices)
//! <dir>/embeddings.f32     VEMB matrix, rows in designs.csv order
//! <dir>/cad/<id>.bcadx
//! <dir>/images/<id>.png
//! <dir>/.work/             per-shard partial results, used for resuming
//! ```
//!
//! `<id>` is the design's global Sobol index, zero-padded to 10 digits.

pub mod commands;
pub mod generate;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use commands::{
    cmd_embed, cmd_eval_files, cmd_eval_weights, cmd_optimize, cmd_render, cmd_train, EvalReport, OptimizeRequest,
    StartSpec, TargetSpec,
};
pub use generate::{generate, generate_in_memory, plan_shards, GenerateConfig, GeneratedData, PlannedShard};

use crate::cad::CadError;
use crate::constraints::RuleSet;
use crate::embed::{self, EmbedError, Embedding};
use crate::metrics::MetricsError;
use crate::optimizer::OptimError;
use crate::render::RenderError;
use crate::sampler::SamplerError;
use crate::schema::{self, DesignSchema, DesignVector, SchemaError};
use crate::surrogate::{TrainError, WeightsError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_FILE: &str = "schema.schema";
pub const DESIGNS_CSV: &str = "designs.csv";
pub const DESIGNS_MATRIX: &str = "designs.f32";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const CAD_DIR: &str = "cad";
pub const IMAGE_DIR: &str = "images";
pub const WORK_DIR: &str = ".work";
pub const SHARD_SIZE: u64 = 1024;
/// Sobol index of the first candidate (index 0 is the all-zero corner).
pub const FIRST_INDEX: u64 = 1;
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Cad(#[from] CadError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("bad JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("existing dataset does not match this run: {0}")]
    Mismatch(String),
    #[error("dataset {0} has no embeddings")]
    MissingEmbeddings(PathBuf),
    #[error("dataset {0} is incomplete; re-run generate")]
    Incomplete(PathBuf),
    #[error("text targets need an external embedding bridge (--embedder bridge --bridge-cmd ...)")]
    NeedsBridge,
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// 3 for bridge trouble, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::NeedsBridge => 3,
            PipelineError::Embed(
                EmbedError::Unreachable(_)
                | EmbedError::Protocol(_)
                | EmbedError::ProtocolVersion(_)
                | EmbedError::Dimension(_)
                | EmbedError::Remote { .. },
            ) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let mut f = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn design_file_stem(id: u64) -> String {
    format!("{id:010}")
}

pub fn cad_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(CAD_DIR).join(format!("{}.bcadx", design_file_stem(id)))
}

pub fn image_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(IMAGE_DIR).join(format!("{}.png", design_file_stem(id)))
}

/// A contiguous range of Sobol indices processed as one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardTask {
    pub id: u64,
    /// Global Sobol index of the shard's first candidate.
    pub skip: u64,
    /// Candidates in the shard.
    pub count: u64,
    /// Base seed for the shard's view augmentation.
    pub worker_seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: u64,
    pub accepted: u64,
    pub rendered: u64,
    pub dropped: u64,
    pub embedded: u64,
}

impl Counts {
    pub fn consistent(&self) -> bool {
        self.embedded <= self.rendered
            && self.rendered <= self.accepted
            && self.accepted <= self.attempted
            && self.rendered + self.dropped <= self.accepted
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStatus {
    InProgress,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderRecord {
    /// `reference` or `external`.
    pub kind: String,
    pub model: String,
    pub views: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerRecord {
    pub first_index: u64,
    pub shard_size: u64,
    pub seed: u64,
    pub acceptance_rate: f64,
    /// Rejections per rule among all scanned candidates.
    pub rejections: BTreeMap<String, u64>,
    pub shards: Vec<ShardTask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub status: DatasetStatus,
    pub requested: u64,
    pub schema_version: String,
    pub schema_checksum: String,
    pub rules: RuleSet,
    pub sampler: SamplerRecord,
    pub counts: Counts,
    pub embedder: EmbedderRecord,
    /// Designs whose render failed.
    pub dropped_ids: Vec<u64>,
    /// Relative path → SHA-256, for every file the dataset consists of.
    pub files: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub missing: Vec<String>,
    pub mismatched: Vec<String>,
    pub counts_consistent: bool,
    pub complete: bool,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty() && self.counts_consistent && self.complete
    }
}

/// Re-hashes every inventoried file.
pub fn verify(dir: &Path) -> Result<VerifyReport, PipelineError> {
    use rayon::prelude::*;
    let m = DatasetManifest::load(dir)?;
    let results: Vec<(String, Option<bool>)> = m
        .files
        .par_iter()
        .map(|(rel, sum)| {
            let p = dir.join(rel);
            let state = if p.is_file() {
                Some(sha256_file(&p).map(|s| &s == sum).unwrap_or(false))
            } else {
                None
            };
            (rel.clone(), state)
        })
        .collect();
    let mut r = VerifyReport {
        checked: results.len(),
        counts_consistent: m.counts.consistent(),
        complete: m.status == DatasetStatus::Complete,
        ..Default::default()
    };
    for (rel, state) in results {
        match state {
            None => r.missing.push(rel),
            Some(false) => r.mismatched.push(rel),
            Some(true) => {}
        }
    }
    Ok(r)
}

/// A finished dataset loaded back into memory.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub schema: DesignSchema,
    pub ids: Vec<u64>,
    pub designs: Vec<DesignVector>,
    pub embeddings: Vec<Embedding>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, PipelineError> {
    let manifest = DatasetManifest::load(dir)?;
    if manifest.status != DatasetStatus::Complete {
        return Err(PipelineError::Incomplete(dir.to_path_buf()));
    }
    let schema_text = String::from_utf8(read_file(&dir.join(SCHEMA_FILE))?)
        .map_err(|_| PipelineError::Data("schema file is not UTF-8".into()))?;
    let schema = DesignSchema::parse(&schema_text)?;
    let csv_path = dir.join(DESIGNS_CSV);
    let rows = schema::read_designs_csv(File::open(&csv_path).map_err(io_err(&csv_path))?, &schema)?;
    let emb_path = dir.join(EMBEDDINGS_FILE);
    if !emb_path.is_file() {
        return Err(PipelineError::MissingEmbeddings(dir.to_path_buf()));
    }
    let embeddings = embed::read_embeddings(&emb_path)?;
    if embeddings.len() != rows.len() {
        return Err(PipelineError::Data(format!(
            "{} designs but {} embeddings",
            rows.len(),
            embeddings.len()
        )));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut designs = Vec::with_capacity(rows.len());
    for (k, (id, d)) in rows.into_iter().enumerate() {
        ids.push(id.unwrap_or(k as u64));
        designs.push(d);
    }
    Ok(LoadedDataset {
        manifest,
        schema,
        ids,
        designs,
        embeddings,
    })
}

/// Writes the design table (CSV and binary) for `designs`.
pub(crate) fn write_design_tables(
    dir: &Path,
    schema: &DesignSchema,
    ids: &[u64],
    designs: &[DesignVector],
) -> Result<(), PipelineError> {
    let csv_path = dir.join(DESIGNS_CSV);
    let f = File::create(&csv_path).map_err(io_err(&csv_path))?;
    schema::write_designs_csv(BufWriter::new(f), schema, designs, Some(ids))?;
    let flat: Vec<f32> = designs.iter().flat_map(|d| d.to_row()).map(|v| v as f32).collect();
    let mat_path = dir.join(DESIGNS_MATRIX);
    let f = File::create(&mat_path).map_err(io_err(&mat_path))?;
    embed::write_matrix(BufWriter::new(f), embed::DESIGN_MAGIC, schema.len(), &flat)?;
    Ok(())
}
