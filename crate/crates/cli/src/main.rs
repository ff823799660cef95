use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use velogen_core::constraints::RuleSet;
use velogen_core::embed::{BridgeConfig, EmbedderConfig, EmbedderHandle, DEFAULT_VIEWS};
use velogen_core::metrics::RankingMode;
use velogen_core::optimizer::OptimConfig;
use velogen_core::pipeline::{self, GenerateConfig, OptimizeRequest, PipelineError, StartSpec, TargetSpec};
use velogen_core::schema::{load_schema, DesignSchema};
use velogen_core::surrogate::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "velogen", version, about = "Parametric bicycle dataset, surrogate and optimizer")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed for splits, initialization, augmentation offsets and search.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = EmbedderChoice::Reference)]
    embedder: EmbedderChoice,
    /// Command line that starts the embedding bridge.
    #[arg(long, global = true)]
    bridge_cmd: Option<String>,
    /// Design schema file; the built-in reference schema by default.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EmbedderChoice {
    Reference,
    Bridge,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample, render and embed a dataset (resumes an interrupted run).
    Generate {
        #[arg(short, long)]
        n: u64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VIEWS)]
        views: usize,
        #[arg(long)]
        attempt_cap: Option<u64>,
    },
    /// Render a .bcadx file to PNG, or every row of a designs CSV.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Embed PNG files into an embedding matrix file.
    Embed {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Augmented views to average; 0 embeds the image as is.
        #[arg(long, default_value_t = DEFAULT_VIEWS)]
        views: usize,
    },
    /// Train the surrogate on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score predictions against targets, or a weight file on a dataset's test split.
    Eval {
        #[arg(long, requires = "target", conflicts_with_all = ["weights", "dataset"])]
        pred: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        weights: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write the report as JSON here as well.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Optimize a design towards a text, image or embedding target.
    Optimize {
        #[arg(long)]
        weights: PathBuf,
        /// Start design: a .bcadx file or a designs CSV (see --row).
        #[arg(long)]
        start: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long, group = "goal")]
        text: Option<String>,
        #[arg(long, group = "goal")]
        image: Option<PathBuf>,
        #[arg(long, group = "goal")]
        embedding: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        target_row: usize,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VIEWS)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        population: usize,
        #[arg(long, default_value_t = 300)]
        generations: usize,
    },
    /// Check every file of a dataset against its manifest.
    Verify { dataset: PathBuf },
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn embedder_config(g: &Global) -> Result<EmbedderConfig, Failure> {
    match (g.embedder, &g.bridge_cmd) {
        (EmbedderChoice::Reference, _) => Ok(EmbedderConfig::Reference),
        (EmbedderChoice::Bridge, Some(cmd)) => BridgeConfig::from_command_line(cmd)
            .map(EmbedderConfig::Bridge)
            .map_err(|e| Failure::Usage(e.to_string())),
        (EmbedderChoice::Bridge, None) => Err(Failure::Usage("--embedder bridge needs --bridge-cmd".into())),
    }
}

fn schema(g: &Global) -> Result<DesignSchema, Failure> {
    match &g.schema {
        Some(p) => Ok(load_schema(p).map_err(PipelineError::from)?),
        None => Ok(DesignSchema::reference()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn write_report<T: serde::Serialize>(path: Option<&Path>, v: &T) -> Result<(), Failure> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(v).expect("serializable");
        std::fs::write(p, text + "\n").map_err(|source| PipelineError::Io {
            path: p.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if g.workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    match cli.command {
        Command::Generate {
            n,
            out,
            views,
            attempt_cap,
        } => {
            if views == 0 {
                return Err(Failure::Usage("--views must be at least 1".into()));
            }
            let cfg = GenerateConfig {
                n,
                workers: g.workers,
                seed: g.seed,
                views,
                embedder: embedder_config(g)?,
                attempt_cap,
            };
            std::fs::create_dir_all(&out).map_err(|source| PipelineError::Io {
                path: out.clone(),
                source,
            })?;
            let m = pipeline::generate(
                &schema(g)?,
                &RuleSet::reference(),
                &velogen_core::cad::CadTemplate::reference(),
                &cfg,
                &out,
            )?;
            print_json(&m.counts);
            println!("acceptance rate {:.4}", m.sampler.acceptance_rate);
            for (rule, count) in &m.sampler.rejections {
                println!("rejected by {rule}: {count}");
            }
        }
        Command::Render { input, out } => {
            for p in pipeline::cmd_render(&input, &out, &schema(g)?)? {
                println!("{}", p.display());
            }
        }
        Command::Embed { images, out, views } => {
            let mut h = EmbedderHandle::open(&embedder_config(g)?).map_err(PipelineError::from)?;
            let embs = pipeline::cmd_embed(&images, &mut h, views, g.seed, &out)?;
            println!("{} embeddings written to {}", embs.len(), out.display());
        }
        Command::Train {
            dataset,
            weights,
            report,
            train,
        } => {
            let r = pipeline::cmd_train(&dataset, &train.config(g.seed), &weights, &report)?;
            println!(
                "epochs {} (best {}), val loss {:.6e}",
                r.stop_epoch, r.best_epoch, r.best_val_loss
            );
            if let (Some(mse), Some(rank)) = (r.test_mse, &r.ranking) {
                println!(
                    "test mse {mse:.6e}  r2 {:.4}  forward {:.6}  reverse {:.6}",
                    r.test_r2.unwrap_or(f64::NAN),
                    rank.forward,
                    rank.reverse
                );
            }
        }
        Command::Eval {
            pred,
            target,
            weights,
            dataset,
            report,
            train,
        } => match (pred, target, weights, dataset) {
            (Some(p), Some(t), None, None) => {
                let r = pipeline::cmd_eval_files(&p, &t, RankingMode::Auto)?;
                print!("{}", r.table());
                write_report(report.as_deref(), &r)?;
            }
            (None, None, Some(w), Some(d)) => {
                let r = pipeline::cmd_eval_weights(&w, &d, &train.config(g.seed))?;
                print_json(&r);
                write_report(report.as_deref(), &r)?;
            }
            _ => {
                return Err(Failure::Usage(
                    "eval needs either --pred and --target, or --weights and --dataset".into(),
                ))
            }
        },
        Command::Optimize {
            weights,
            start,
            row,
            text,
            image,
            embedding,
            target_row,
            out,
            views,
            population,
            generations,
        } => {
            let target = match (text, image, embedding) {
                (Some(t), None, None) => TargetSpec::Text(t),
                (None, Some(p), None) => TargetSpec::Image(p),
                (None, None, Some(p)) => TargetSpec::Embedding {
                    path: p,
                    row: target_row,
                },
                _ => return Err(Failure::Usage("give exactly one of --text, --image, --embedding".into())),
            };
            let start = match start {
                None => StartSpec::Default,
                Some(p) if p.extension().is_some_and(|e| e == "bcadx") => StartSpec::Bcadx(p),
                Some(p) => StartSpec::Csv { path: p, row },
            };
            let req = OptimizeRequest {
                weights,
                schema: schema(g)?,
                rules: RuleSet::reference(),
                start,
                target,
                cfg: OptimConfig {
                    population,
                    generations,
                    seed: g.seed,
                    ..OptimConfig::default()
                },
                embedder: embedder_config(g)?,
                views,
                out: out.clone(),
            };
            let r = pipeline::cmd_optimize(&req)?;
            println!(
                "best objective {:.6}, similarity {:.6}, {} evaluations{}",
                r.best_value,
                r.best_similarity.unwrap_or(f64::NAN),
                r.evaluations,
                if r.fell_back { " (best feasible fallback)" } else { "" }
            );
            println!("results in {}", out.display());
        }
        Command::Verify { dataset } => {
            let r = pipeline::verify(&dataset)?;
            println!("{} files checked", r.checked);
            for m in &r.missing {
                println!("missing  {m}");
            }
            for m in &r.mismatched {
                println!("changed  {m}");
            }
            if !r.counts_consistent {
                println!("manifest counts are inconsistent");
            }
            if !r.complete {
                println!("dataset is incomplete");
            }
            if !r.ok() {
                return Err(PipelineError::Data("verification failed".into()).into());
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
