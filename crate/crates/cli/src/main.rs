use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphpredict::embed::{embed, EmbeddingConfig, Method};
use graphpredict::io;
use graphpredict::pipeline::{
    self, ColorBy, PipelineConfig, Query, ReductionEntry, RunOptions, Stage,
};
use graphpredict::predict::{self, RatingQuery};
use graphpredict::reduce::{ReduceConfig, ReductionMethod};
use graphpredict::similarity::KnnConfig;
use graphpredict::{Error, PropertyGraph, Result};

const OUT_ENV: &str = "GRAPHPREDICT_OUT";

/// Property-graph embeddings, similarity and predictive queries.
#[derive(Parser)]
#[command(name = "graphpredict", version)]
struct Cli {
    /// Replaces every seed in the config and the seed flags' defaults.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run kernels and cells sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured stage and write a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to the config, then GRAPHPREDICT_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Build the graph from the config's dataset and register its queries.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write projection dumps for a graph.
    Project {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Only this projection; all configured ones otherwise.
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Embed the nodes of one projection.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        projection: PathBuf,
        #[arg(long, requires = "embedding")]
        config: Option<PathBuf>,
        /// Embedding id from the config, e.g. `full_fastrp_100`.
        #[arg(long, requires = "config")]
        embedding: Option<String>,
        #[arg(long, conflicts_with = "embedding")]
        method: Option<Method>,
        #[arg(long, conflicts_with = "embedding")]
        dim: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write SIMILAR edges between embedded nodes.
    Knn {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Take parameters from the config's knn section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        label_filter: Option<String>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Reduce an embedding to two dimensions.
    Reduce {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, requires = "reduction")]
        config: Option<PathBuf>,
        /// Index into the config's reductions.
        #[arg(long, requires = "config")]
        reduction: Option<usize>,
        #[arg(long, conflicts_with = "reduction")]
        method: Option<ReductionMethod>,
        #[arg(long, conflicts_with = "reduction")]
        k_neighbors: Option<usize>,
        #[arg(long, conflicts_with = "reduction")]
        node_filter: Option<String>,
        /// `label` or `disease`.
        #[arg(long, conflicts_with = "reduction", value_parser = parse_color_by)]
        color_by: Option<ColorBy>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Render a reduction CSV as an SVG scatter plot.
    Plot {
        #[arg(long)]
        reduction: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Predict ratings from SIMILAR users.
    Predict {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        movies: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fraction of (user, movie) targets some SIMILAR user has rated.
    Quality {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        movies: Vec<String>,
    },
    /// Evaluate registered queries into report.json.
    Report {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Directory holding the embedding CSVs queries refer to.
        #[arg(long)]
        embeddings_dir: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
}

fn parse_color_by(s: &str) -> std::result::Result<ColorBy, String> {
    match s {
        "label" => Ok(ColorBy::Label),
        "disease" => Ok(ColorBy::Disease),
        _ => Err(format!("expected `label` or `disease`, got `{s}`")),
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if cli.deterministic {
        cfg.force_sequential();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn embedding_config(cli: &Cli, config: Option<&Path>, id: Option<&str>, method: Option<Method>, dim: Option<usize>) -> Result<(Option<String>, EmbeddingConfig)> {
    match (config, id) {
        (Some(path), Some(id)) => {
            let cfg = load_config(path, cli)?;
            let entry = cfg
                .embedding_entries()
                .into_iter()
                .find(|e| e.id() == id)
                .ok_or_else(|| Error::Config(format!("embedding: `{id}` is not in the config")))?;
            Ok((Some(entry.projection), entry.config))
        }
        _ => {
            let method = method.ok_or_else(|| Error::Config("--method or --embedding is required".into()))?;
            let dim = dim.ok_or_else(|| Error::Config("--dim or --embedding is required".into()))?;
            let cfg = EmbeddingConfig::new(method, dim, cli.seed.unwrap_or(42));
            cfg.validate()?;
            Ok((None, cfg))
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    // `run` sizes its own pool.
    if let (Some(n), false) = (cli.threads, matches!(cli.command, Command::Run { .. })) {
        pipeline::install_threads(n)?;
    }
    match &cli.command {
        Command::Run { config, out, stage } => {
            let cfg = PipelineConfig::load(config)?;
            let out = out
                .clone()
                .or_else(|| cfg.output.as_ref().map(|p| cfg.resolve(p)))
                .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from));
            let opts = RunOptions {
                out,
                seed: cli.seed,
                until: *stage,
                threads: cli.threads,
                deterministic: cli.deterministic,
            };
            let manifest = pipeline::run_pipeline(&cfg, &opts)?;
            for s in &manifest.stages {
                println!("{:<8} {:>8.2}s  {} artifacts", s.stage, s.seconds, s.artifacts.len());
            }
            println!("{} artifacts written", manifest.artifacts.len());
        }
        Command::Ingest { config, out } => {
            let cfg = load_config(config, cli)?;
            let (graph, report) = pipeline::ingest_dataset(&cfg.dataset, &cfg.base_dir)?;
            pipeline::write_ingest(&out.out, &graph, &report)?;
            if !cfg.queries.is_empty() {
                pipeline::write_queries(&out.out, &cfg.queries)?;
            }
            println!("{report}");
        }
        Command::Project { config, graph, name, out } => {
            let cfg = load_config(config, cli)?;
            let g = PropertyGraph::load(graph)?;
            let mut found = false;
            for p in cfg.projections.iter().filter(|p| name.as_deref().is_none_or(|n| n == p.name())) {
                let (view, file) = pipeline::project_stage(&g, &p.spec(cfg.dataset.kind), &out.out)?;
                println!("{file}: {} nodes, {} edges", view.node_count(), view.edges().len());
                found = true;
            }
            if !found {
                return Err(Error::Config("name: no matching projection in the config".into()));
            }
        }
        Command::Embed { graph, projection, config, embedding, method, dim, out } => {
            let (expected, mut cfg) = embedding_config(cli, config.as_deref(), embedding.as_deref(), *method, *dim)?;
            if cli.deterministic {
                cfg.parallel = false;
            }
            let g = PropertyGraph::load(graph)?;
            let view = pipeline::load_projection(&g, projection)?;
            if let Some(p) = expected.filter(|p| p != view.name()) {
                return Err(Error::Config(format!("projection: embedding needs `{p}`, file holds `{}`", view.name())));
            }
            let set = embed(&view, &cfg)?;
            println!("{}", pipeline::write_embedding(&out.out, &g, &set)?);
        }
        Command::Knn { graph, embeddings, config, top_k, delta, label_filter, out } => {
            let mut params = match config {
                Some(path) => load_config(path, cli)?
                    .knn
                    .ok_or_else(|| Error::Config("knn: the config has no knn section".into()))?
                    .params,
                None => KnnConfig {
                    random_seed: cli.seed.unwrap_or(42),
                    ..KnnConfig::default()
                },
            };
            if let Some(k) = top_k {
                params.top_k = *k;
            }
            if let Some(d) = delta {
                params.delta_threshold = *d;
            }
            if label_filter.is_some() {
                params.label_filter.clone_from(label_filter);
            }
            params.validate()?;
            let mut g = PropertyGraph::load(graph)?;
            let set = pipeline::load_embedding(embeddings)?;
            let (stats, _) = pipeline::knn_stage(&mut g, &set, &params, &out.out)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Reduce { graph, embeddings, config, reduction, method, k_neighbors, node_filter, color_by, out } => {
            let entry = match (config, reduction) {
                (Some(path), Some(i)) => load_config(path, cli)?
                    .reductions
                    .get(*i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("reduction: index {i} out of range")))?,
                _ => {
                    let method = method.ok_or_else(|| Error::Config("--method or --reduction is required".into()))?;
                    let mut config = ReduceConfig::new(method);
                    if let Some(k) = k_neighbors {
                        config.k_neighbors = *k;
                    }
                    if let Some(seed) = cli.seed {
                        config.tsne.seed = seed;
                    }
                    ReductionEntry {
                        embeddings: Vec::new(),
                        config,
                        node_filter: node_filter.clone(),
                        color_by: color_by.unwrap_or_default(),
                    }
                }
            };
            let g = PropertyGraph::load(graph)?;
            let set = pipeline::load_embedding(embeddings)?;
            let r = pipeline::reduce_embedding(&g, &set, &entry)?;
            let classes = pipeline::plot_classes(&g, entry.color_by)?;
            println!("{}", pipeline::write_reduction(&out.out, &g, &entry.artifact_name(&set.id()), &r, &classes)?);
        }
        Command::Plot { reduction, out } => {
            println!("{}", pipeline::plot_stage(reduction, &out.out)?);
        }
        Command::Predict { graph, users, movies, threshold, csv } => {
            let g = PropertyGraph::load(graph)?;
            let rows = predict::predict_ratings(&g, users, movies)?;
            let text = predict::predictions_to_csv(&rows)?;
            match csv {
                Some(path) => io::write_text(path, &text)?,
                None => print!("{text}"),
            }
            let r = predict::prediction_report(&rows, *threshold);
            eprintln!(
                "{} rows, {} uncovered, {} with |difference| >= {}",
                rows.len(),
                r.uncovered,
                r.count_abs_diff_ge_threshold,
                r.threshold
            );
        }
        Command::Quality { graph, users, movies } => {
            let g = PropertyGraph::load(graph)?;
            let query = RatingQuery {
                user_ids: users.clone(),
                movie_ids: movies.clone(),
            };
            let (score, warning) = pipeline::quality_with_warning(&g, &query)?;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            println!("{score}");
        }
        Command::Report { graph, queries, embeddings_dir, out } => {
            let g = PropertyGraph::load(graph)?;
            let queries: Vec<Query> = io::read_json(queries)?;
            let mut sets = BTreeMap::new();
            for q in &queries {
                if let Query::DiseaseSeparation { embedding, .. } = q {
                    let dir = embeddings_dir
                        .as_ref()
                        .ok_or_else(|| Error::Config("--embeddings-dir is required for separation queries".into()))?;
                    sets.insert(embedding.clone(), pipeline::load_embedding(&dir.join(format!("{embedding}.csv")))?);
                }
            }
            let (report, _) = pipeline::report_stage(&g, &queries, &sets, &out.out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// 2 for problems found before any work starts, 3 for failures during it.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
