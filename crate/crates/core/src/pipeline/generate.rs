//! Shard planning, per-shard render/embed work, resume and merge.
//!
//! Planning scans consecutive shards of [`SHARD_SIZE`] Sobol indices until
//! `n` feasible designs are found; the last shard keeps only as many as
//! needed. This is cheap and serial. Rendering and embedding then run per
//! shard on a pool of `workers` threads, and results are merged in shard
//! order, so every output byte is independent of the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::*;
use crate::cad::{to_cad, write_xml, CadTemplate};
use crate::constraints::{self, RuleSet};
use crate::embed::{embed_views_avg, EmbedderConfig, EmbedderHandle, EmbedderKind, Embedding, DEFAULT_VIEWS};
use crate::render::{encode_png, render_doc};
use crate::sampler::{scale_point, SampleStats, SobolState};
use crate::schema::{DesignSchema, DesignVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n: u64,
    pub workers: usize,
    /// Offsets every augmentation seed; 0 makes the seed equal the design id.
    pub seed: u64,
    pub views: usize,
    pub embedder: EmbedderConfig,
    /// Candidates to scan before giving up; `None` allows 1000 per design
    /// plus 10⁵.
    pub attempt_cap: Option<u64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            n: 1000,
            workers: 1,
            seed: 0,
            views: DEFAULT_VIEWS,
            embedder: EmbedderConfig::Reference,
            attempt_cap: None,
        }
    }
}

/// Augmentation seed of one design.
pub fn augmentation_seed(seed: u64, id: u64) -> u64 {
    id.wrapping_add(seed.wrapping_mul(1 << 32))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedShard {
    pub task: ShardTask,
    /// Accepted designs kept from this shard, with their Sobol indices.
    pub designs: Vec<(u64, DesignVector)>,
}

/// Finds the first `n` feasible designs shard by shard.
pub fn plan_shards(
    schema: &DesignSchema,
    rules: &RuleSet,
    n: u64,
    seed: u64,
    attempt_cap: Option<u64>,
) -> Result<(Vec<PlannedShard>, SampleStats), PipelineError> {
    let cap = attempt_cap.unwrap_or_else(|| n.saturating_mul(1000).saturating_add(100_000));
    let bounds = schema.bounds();
    let mut sobol = SobolState::new(schema.sampling_dim())?;
    let mut point = vec![0.0; schema.sampling_dim()];
    let mut stats = SampleStats::default();
    let mut shards = Vec::new();
    let mut found = 0u64;
    let mut shard_id = 0u64;
    while found < n {
        if stats.attempted >= cap {
            return Err(SamplerError::AttemptCap {
                cap,
                accepted: found,
                stats,
            }
            .into());
        }
        let skip = FIRST_INDEX + shard_id * SHARD_SIZE;
        sobol.seek(skip);
        let mut designs = Vec::new();
        for _ in 0..SHARD_SIZE {
            let index = sobol.index();
            sobol.next_point(&mut point)?;
            let design = scale_point(&point, &bounds, schema)?;
            let report = constraints::check(&design, schema, rules);
            stats.record(&report);
            if report.is_feasible() && found < n {
                designs.push((index, design));
                found += 1;
            }
        }
        shards.push(PlannedShard {
            task: ShardTask {
                id: shard_id,
                skip,
                count: SHARD_SIZE,
                worker_seed: seed,
            },
            designs,
        });
        shard_id += 1;
    }
    log::info!(
        "planned {} shards: {} accepted of {} scanned ({:.4}); rejections {:?}",
        shards.len(),
        found,
        stats.attempted,
        stats.acceptance_rate,
        stats.rejections
    );
    Ok((shards, stats))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct ShardRecord {
    ids: Vec<u64>,
    dropped: Vec<u64>,
}

#[derive(Clone, Debug, Default)]
struct ShardOutput {
    ids: Vec<u64>,
    designs: Vec<DesignVector>,
    embeddings: Vec<Embedding>,
    dropped: Vec<u64>,
}

struct Context<'a> {
    schema: &'a DesignSchema,
    template: &'a CadTemplate,
    cfg: &'a GenerateConfig,
    out: Option<&'a Path>,
}

fn work_paths(dir: &Path, shard: u64) -> (PathBuf, PathBuf) {
    let base = dir.join(WORK_DIR).join(format!("shard-{shard:06}"));
    (base.with_extension("json"), base.with_extension("f32"))
}

fn load_record(dir: &Path, shard: &PlannedShard) -> Option<(ShardRecord, Vec<Embedding>)> {
    let (json, mat) = work_paths(dir, shard.task.id);
    let rec: ShardRecord = read_json(&json).ok()?;
    let planned: Vec<u64> = shard.designs.iter().map(|d| d.0).collect();
    let mut all: Vec<u64> = rec.ids.iter().chain(&rec.dropped).copied().collect();
    all.sort_unstable();
    if all != planned {
        return None;
    }
    let embs = embed::read_embeddings(&mat).ok()?;
    (embs.len() == rec.ids.len()).then_some((rec, embs))
}

fn process_shard(ctx: &Context, shard: &PlannedShard) -> Result<ShardOutput, PipelineError> {
    if let Some(dir) = ctx.out {
        if let Some((rec, embeddings)) = load_record(dir, shard) {
            // finished earlier: only restore missing files
            let mut restored = 0;
            for (id, design) in &shard.designs {
                if rec.dropped.contains(id) {
                    continue;
                }
                let (cad, png) = (cad_path(dir, *id), image_path(dir, *id));
                if cad.is_file() && png.is_file() {
                    continue;
                }
                let doc = to_cad(design, ctx.template, ctx.schema)?;
                if !cad.is_file() {
                    write_file(&cad, &write_xml(&doc))?;
                }
                if !png.is_file() {
                    write_file(&png, &encode_png(&render_doc(&doc)?))?;
                }
                restored += 1;
            }
            if restored > 0 {
                log::info!("shard {}: restored files of {restored} designs", shard.task.id);
            }
            let designs = shard
                .designs
                .iter()
                .filter(|(id, _)| !rec.dropped.contains(id))
                .map(|(_, d)| d.clone())
                .collect();
            return Ok(ShardOutput {
                ids: rec.ids,
                designs,
                embeddings,
                dropped: rec.dropped,
            });
        }
    }

    let mut handle = EmbedderHandle::open(&ctx.cfg.embedder)?;
    let mut out = ShardOutput::default();
    for (id, design) in &shard.designs {
        let doc = to_cad(design, ctx.template, ctx.schema)?;
        let img = match render_doc(&doc) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("design {id} dropped: {e}");
                out.dropped.push(*id);
                continue;
            }
        };
        if let Some(dir) = ctx.out {
            write_file(&cad_path(dir, *id), &write_xml(&doc))?;
            write_file(&image_path(dir, *id), &encode_png(&img))?;
        }
        let seed = augmentation_seed(shard.task.worker_seed, *id);
        out.embeddings.push(embed_views_avg(&mut handle, &img, ctx.cfg.views, seed)?);
        out.ids.push(*id);
        out.designs.push(design.clone());
    }
    if let Some(dir) = ctx.out {
        let (json, mat) = work_paths(dir, shard.task.id);
        embed::write_embeddings(&mat, &out.embeddings)?;
        write_json(
            &json,
            &ShardRecord {
                ids: out.ids.clone(),
                dropped: out.dropped.clone(),
            },
        )?;
    }
    Ok(out)
}

fn run_shards<F>(ctx: &Context, shards: &[PlannedShard], mut after_wave: F) -> Result<Vec<ShardOutput>, PipelineError>
where
    F: FnMut(&[ShardOutput]) -> Result<(), PipelineError>,
{
    let workers = ctx.cfg.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Data(format!("cannot start worker pool: {e}")))?;
    let mut outputs = Vec::with_capacity(shards.len());
    for wave in shards.chunks(workers) {
        let results: Vec<ShardOutput> =
            pool.install(|| wave.par_iter().map(|s| process_shard(ctx, s)).collect::<Result<_, _>>())?;
        outputs.extend(results);
        after_wave(&outputs)?;
    }
    Ok(outputs)
}

/// Designs and embeddings generated without touching the disk.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub ids: Vec<u64>,
    pub designs: Vec<DesignVector>,
    pub embeddings: Vec<Embedding>,
    pub dropped: Vec<u64>,
    pub stats: SampleStats,
}

pub fn generate_in_memory(
    schema: &DesignSchema,
    rules: &RuleSet,
    template: &CadTemplate,
    cfg: &GenerateConfig,
) -> Result<GeneratedData, PipelineError> {
    let (shards, stats) = plan_shards(schema, rules, cfg.n, cfg.seed, cfg.attempt_cap)?;
    let ctx = Context {
        schema,
        template,
        cfg,
        out: None,
    };
    let outputs = run_shards(&ctx, &shards, |_| Ok(()))?;
    let mut data = GeneratedData {
        ids: vec![],
        designs: vec![],
        embeddings: vec![],
        dropped: vec![],
        stats,
    };
    for o in outputs {
        data.ids.extend(o.ids);
        data.designs.extend(o.designs);
        data.embeddings.extend(o.embeddings);
        data.dropped.extend(o.dropped);
    }
    Ok(data)
}

fn embedder_record(cfg: &GenerateConfig) -> Result<EmbedderRecord, PipelineError> {
    let h = EmbedderHandle::open(&cfg.embedder)?;
    Ok(EmbedderRecord {
        kind: match h.kind() {
            EmbedderKind::Reference => "reference".into(),
            EmbedderKind::External => "external".into(),
        },
        model: h.model_tag(),
        views: cfg.views,
    })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Generates (or resumes) a dataset in `out`.
pub fn generate(
    schema: &DesignSchema,
    rules: &RuleSet,
    template: &CadTemplate,
    cfg: &GenerateConfig,
    out: &Path,
) -> Result<DatasetManifest, PipelineError> {
    let embedder = embedder_record(cfg)?;
    if out.join(MANIFEST_FILE).is_file() {
        let old = DatasetManifest::load(out)?;
        let mut why = Vec::new();
        if old.schema_checksum != schema.checksum() {
            why.push("schema");
        }
        if old.rules != *rules {
            why.push("rule set");
        }
        if old.embedder != embedder {
            why.push("embedder");
        }
        if old.sampler.seed != cfg.seed {
            why.push("seed");
        }
        if !why.is_empty() {
            return Err(PipelineError::Mismatch(format!("{} differ(s)", why.join(", "))));
        }
    }
    for sub in [CAD_DIR, IMAGE_DIR, WORK_DIR] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    write_file(&out.join(SCHEMA_FILE), schema.to_text().as_bytes())?;

    let (shards, stats) = plan_shards(schema, rules, cfg.n, cfg.seed, cfg.attempt_cap)?;
    let mut manifest = DatasetManifest {
        format: MANIFEST_FORMAT,
        status: DatasetStatus::InProgress,
        requested: cfg.n,
        schema_version: schema.version.clone(),
        schema_checksum: schema.checksum(),
        rules: rules.clone(),
        sampler: SamplerRecord {
            first_index: FIRST_INDEX,
            shard_size: SHARD_SIZE,
            seed: cfg.seed,
            acceptance_rate: stats.acceptance_rate,
            rejections: stats.rejections.clone(),
            shards: shards.iter().map(|s| s.task).collect(),
        },
        counts: Counts {
            attempted: stats.attempted,
            accepted: cfg.n,
            ..Counts::default()
        },
        embedder,
        dropped_ids: vec![],
        files: BTreeMap::new(),
        created: now(),
    };
    manifest.save(out)?;

    let ctx = Context {
        schema,
        template,
        cfg,
        out: Some(out),
    };
    let outputs = run_shards(&ctx, &shards, |done| {
        let rendered: u64 = done.iter().map(|o| o.ids.len() as u64).sum();
        manifest.counts.rendered = rendered;
        manifest.counts.embedded = rendered;
        manifest.counts.dropped = done.iter().map(|o| o.dropped.len() as u64).sum();
        manifest.save(out)
    })?;

    let mut ids = Vec::new();
    let mut designs = Vec::new();
    let mut embeddings = Vec::new();
    let mut dropped = Vec::new();
    for o in outputs {
        ids.extend(o.ids);
        designs.extend(o.designs);
        embeddings.extend(o.embeddings);
        dropped.extend(o.dropped);
    }
    write_design_tables(out, schema, &ids, &designs)?;
    embed::write_embeddings(&out.join(EMBEDDINGS_FILE), &embeddings)?;

    let mut rel: Vec<String> = vec![
        SCHEMA_FILE.into(),
        DESIGNS_CSV.into(),
        DESIGNS_MATRIX.into(),
        EMBEDDINGS_FILE.into(),
    ];
    for &id in &ids {
        rel.push(format!("{CAD_DIR}/{}.bcadx", design_file_stem(id)));
        rel.push(format!("{IMAGE_DIR}/{}.png", design_file_stem(id)));
    }
    let sums = rel
        .par_iter()
        .map(|r| sha256_file(&out.join(r)).map(|s| (r.clone(), s)))
        .collect::<Result<Vec<_>, _>>()?;
    manifest.files = sums.into_iter().collect();
    manifest.counts.rendered = ids.len() as u64;
    manifest.counts.embedded = embeddings.len() as u64;
    manifest.counts.dropped = dropped.len() as u64;
    manifest.dropped_ids = dropped;
    manifest.status = DatasetStatus::Complete;
    manifest.save(out)?;
    log::info!(
        "dataset {}: {} designs, {} dropped",
        out.display(),
        manifest.counts.embedded,
        manifest.counts.dropped
    );
    Ok(manifest)
}
