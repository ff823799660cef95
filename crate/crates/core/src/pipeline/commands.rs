//! Single-purpose commands: render, embed, train, eval, optimize.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::*;
use crate::cad::{from_cad, parse_xml, to_cad, write_xml, CadTemplate};
use crate::embed::{embed_views_avg, EmbedderConfig, EmbedderHandle, EmbedderKind, Embedding, EMBEDDING_MAGIC};
use crate::metrics::{mse, r_squared, ranking_scores, RankingMode, RankingScores};
use crate::optimizer::{optimize, target_from_text, Objective, OptimConfig, OptimizationResult};
use crate::render::{decode_png, encode_png, render_doc, RasterImage};
use crate::schema::encode_real;
use crate::surrogate::{evaluate_split, load_weights, save_weights, train, Dataset, TrainConfig, TrainReport};

fn is_ext(path: &Path, ext: &str) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn read_png(path: &Path) -> Result<RasterImage, PipelineError> {
    decode_png(&read_file(path)?).map_err(|e| PipelineError::Render(e.into()))
}

/// Renders a `.bcadx` file to `out` (a PNG path), or every row of a designs
/// CSV into the directory `out`. Returns the written paths.
pub fn cmd_render(input: &Path, out: &Path, schema: &DesignSchema) -> Result<Vec<PathBuf>, PipelineError> {
    if is_ext(input, "bcadx") {
        let (doc, warnings) = parse_xml(&read_file(input)?)?;
        for w in warnings {
            log::warn!("{}: {} (byte {})", input.display(), w.message, w.offset);
        }
        let target = if out.is_dir() {
            out.join(input.with_extension("png").file_name().expect("file name"))
        } else {
            out.to_path_buf()
        };
        write_file(&target, &encode_png(&render_doc(&doc)?))?;
        return Ok(vec![target]);
    }
    let rows = schema::read_designs_csv(BufReader::new(File::open(input).map_err(io_err(input))?), schema)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let template = CadTemplate::reference();
    let mut written = Vec::with_capacity(rows.len());
    for (k, (id, d)) in rows.iter().enumerate() {
        let path = out.join(format!("{}.png", design_file_stem(id.unwrap_or(k as u64))));
        let doc = to_cad(d, &template, schema)?;
        write_file(&path, &encode_png(&render_doc(&doc)?))?;
        written.push(path);
    }
    Ok(written)
}

/// Embeds PNG files. `views = 0` embeds each image as is; otherwise the
/// mean over `views` augmented views with augmentation seed `seed`.
pub fn cmd_embed(
    images: &[PathBuf],
    handle: &mut EmbedderHandle,
    views: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<Embedding>, PipelineError> {
    let mut embs = Vec::with_capacity(images.len());
    for p in images {
        let img = read_png(p)?;
        embs.push(if views == 0 {
            handle.embed_image(&img)?
        } else {
            embed_views_avg(handle, &img, views, seed)?
        });
    }
    embed::write_embeddings(out, &embs)?;
    Ok(embs)
}

/// Encoded designs and f64 targets of a loaded dataset.
pub fn training_data(ds: &LoadedDataset) -> Result<Dataset, PipelineError> {
    let dim = ds.schema.encoded_len();
    let mut x = Vec::with_capacity(ds.designs.len() * dim);
    for d in &ds.designs {
        x.extend(encode_real(d, &ds.schema)?);
    }
    let y: Vec<f64> = ds.embeddings.iter().flat_map(|e| e.to_f64()).collect();
    Ok(Dataset::new(x, y, dim, embed::EMBEDDING_DIM)?)
}

/// Trains on a dataset directory and writes the weight file and a JSON
/// report.
pub fn cmd_train(
    dataset: &Path,
    cfg: &TrainConfig,
    weights_out: &Path,
    report_out: &Path,
) -> Result<TrainReport, PipelineError> {
    let ds = load_dataset(dataset)?;
    let data = training_data(&ds)?;
    let (net, report) = train(&data, cfg)?;
    save_weights(&net, weights_out)?;
    write_json(report_out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub dim: usize,
    pub mse: f64,
    pub r2: f64,
    pub r2_excluded: usize,
    pub ranking: RankingScores,
}

impl EvalReport {
    pub fn table(&self) -> String {
        format!(
            "n          {}\nmse        {:.6e}\nr2         {:.6}\nforward    {:.7}\nreverse    {:.7}\nmode       {:?}\n",
            self.n, self.mse, self.r2, self.ranking.forward, self.ranking.reverse, self.ranking.mode
        )
    }
}

fn eval_matrices(p: &[f64], t: &[f64], dim: usize, mode: RankingMode) -> Result<EvalReport, PipelineError> {
    let r2 = r_squared(p, t, dim)?;
    Ok(EvalReport {
        n: p.len() / dim,
        dim,
        mse: mse(p, t, dim)?,
        r2: r2.value,
        r2_excluded: r2.excluded.len(),
        ranking: ranking_scores(p, t, dim, mode)?,
    })
}

fn read_any_matrix(path: &Path) -> Result<(usize, Vec<f64>), PipelineError> {
    let f = BufReader::new(File::open(path).map_err(io_err(path))?);
    let (dim, v) = embed::read_matrix(f, EMBEDDING_MAGIC)?;
    Ok((dim, v.into_iter().map(f64::from).collect()))
}

/// Compares two embedding files row by row.
pub fn cmd_eval_files(pred: &Path, target: &Path, mode: RankingMode) -> Result<EvalReport, PipelineError> {
    let (dp, p) = read_any_matrix(pred)?;
    let (dt, t) = read_any_matrix(target)?;
    if dp != dt || p.len() != t.len() {
        return Err(PipelineError::Data(format!(
            "prediction matrix {}×{dp} vs target {}×{dt}",
            p.len() / dp.max(1),
            t.len() / dt.max(1)
        )));
    }
    eval_matrices(&p, &t, dp, mode)
}

/// Test-split metrics of a weight file on a dataset.
pub fn cmd_eval_weights(weights: &Path, dataset: &Path, cfg: &TrainConfig) -> Result<TrainReport, PipelineError> {
    let net = load_weights(weights)?;
    let ds = load_dataset(dataset)?;
    Ok(evaluate_split(&net, &training_data(&ds)?, cfg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StartSpec {
    Default,
    Bcadx(PathBuf),
    /// Zero-based data row of a designs CSV.
    Csv { path: PathBuf, row: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    Text(String),
    Image(PathBuf),
    /// Zero-based row of an embedding file.
    Embedding { path: PathBuf, row: usize },
}

#[derive(Clone, Debug)]
pub struct OptimizeRequest {
    pub weights: PathBuf,
    pub schema: DesignSchema,
    pub rules: RuleSet,
    pub start: StartSpec,
    pub target: TargetSpec,
    pub cfg: OptimConfig,
    pub embedder: EmbedderConfig,
    /// Views averaged for an image target.
    pub views: usize,
    pub out: PathBuf,
}

pub fn load_start(spec: &StartSpec, schema: &DesignSchema) -> Result<DesignVector, PipelineError> {
    match spec {
        StartSpec::Default => Ok(schema.default_design()),
        StartSpec::Bcadx(p) => Ok(from_cad(&parse_xml(&read_file(p)?)?.0, schema)?),
        StartSpec::Csv { path, row } => {
            let rows = schema::read_designs_csv(BufReader::new(File::open(path).map_err(io_err(path))?), schema)?;
            rows.into_iter()
                .nth(*row)
                .map(|r| r.1)
                .ok_or_else(|| PipelineError::Data(format!("{} has no row {row}", path.display())))
        }
    }
}

pub fn resolve_target(
    spec: &TargetSpec,
    embedder: &EmbedderConfig,
    views: usize,
) -> Result<Embedding, PipelineError> {
    match spec {
        TargetSpec::Text(prompt) => {
            if *embedder == EmbedderConfig::Reference {
                return Err(PipelineError::NeedsBridge);
            }
            let mut h = EmbedderHandle::open(embedder)?;
            debug_assert_eq!(h.kind(), EmbedderKind::External);
            Ok(target_from_text(&mut h, prompt)?)
        }
        TargetSpec::Image(p) => {
            let img = read_png(p)?;
            let mut h = EmbedderHandle::open(embedder)?;
            Ok(if views == 0 {
                h.embed_image(&img)?
            } else {
                embed_views_avg(&mut h, &img, views, 0)?
            })
        }
        TargetSpec::Embedding { path, row } => embed::read_embeddings(path)?
            .into_iter()
            .nth(*row)
            .ok_or_else(|| PipelineError::Data(format!("{} has no row {row}", path.display()))),
    }
}

/// Optimizes and writes `best.csv`, `best.bcadx`, `best.png` (the only
/// render), `trajectory.csv` and `result.json` into `req.out`.
pub fn cmd_optimize(req: &OptimizeRequest) -> Result<OptimizationResult, PipelineError> {
    let net = load_weights(&req.weights)?;
    let start = load_start(&req.start, &req.schema)?;
    let target = resolve_target(&req.target, &req.embedder, req.views)?;
    let obj = Objective::new(&net, &target, &req.schema, &req.rules)?;
    let result = optimize(&obj, &start, &req.cfg)?;

    fs::create_dir_all(&req.out).map_err(io_err(&req.out))?;
    let csv_path = req.out.join("best.csv");
    let f = File::create(&csv_path).map_err(io_err(&csv_path))?;
    schema::write_designs_csv(f, &req.schema, std::slice::from_ref(&result.best), None)?;
    let doc = to_cad(&result.best, &CadTemplate::reference(), &req.schema)?;
    write_file(&req.out.join("best.bcadx"), &write_xml(&doc))?;
    write_file(&req.out.join("best.png"), &encode_png(&render_doc(&doc)?))?;
    let mut traj = String::from("generation,best\n");
    for (g, v) in result.trajectory.iter().enumerate() {
        traj.push_str(&format!("{g},{v}\n"));
    }
    write_file(&req.out.join("trajectory.csv"), traj.as_bytes())?;
    write_json(&req.out.join("result.json"), &result)?;
    Ok(result)
}
