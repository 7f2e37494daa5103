//! `relmod`: knowledge-graph loading, dataset construction, path selection,
//! generation and evaluation from the command line.
//!
//! Exit status is 0 on success, 2 for usage or configuration errors and 1
//! for data errors.

mod commands;
mod config;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relmod_core::select::{EncodingScheme, SelectMethod};
use relmod_core::Execution;

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "relmod", version, about = "Open relation modeling pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every stage on the calling thread
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
pub struct KgArgs {
    /// Triples TSV: head_key, relation_key, tail_key
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Entity labels TSV: key, label
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Relation labels TSV: key, label
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct PathArgs {
    /// Maximum number of candidate paths per pair
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// Also walk triples backwards
    #[arg(long)]
    pub inverse: bool,
    /// Node expansions allowed per pair before enumeration stops
    #[arg(long)]
    pub expansion_budget: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct BackendArgs {
    /// Trained baseline model file
    #[arg(long, conflicts_with = "remote")]
    pub model: Option<PathBuf>,
    /// Base URL of a protocol v1 scorer
    #[arg(long)]
    pub remote: Option<String>,
    #[arg(long)]
    pub remote_timeout: Option<f64>,
    #[arg(long)]
    pub remote_retries: Option<u32>,
    #[arg(long)]
    pub auth_token: Option<String>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, deduplicate and optionally restrict a triple dump to corpus entities
    BuildKg {
        #[command(flatten)]
        kg: KgArgs,
        /// Definition corpus whose head and linked entities are kept
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print graph counts; optionally write a hop histogram over example pairs
    Stats {
        #[command(flatten)]
        kg: KgArgs,
        /// JSON-lines with head_key and tail_key fields, or head<TAB>tail
        #[arg(long, requires = "histogram_out")]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "pairs")]
        histogram_out: Option<PathBuf>,
        #[arg(long)]
        max_hops: Option<usize>,
        #[arg(long)]
        inverse: bool,
        /// Write counts here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn definition records into one relation example per linked tail
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score examples by surface and dependency coverage and drop weak ones
    Filter {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        parses: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dropped: Option<PathBuf>,
    },
    /// Split examples by head entity and encode them as dataset records
    Split {
        #[arg(long)]
        examples: PathBuf,
        #[command(flatten)]
        kg: KgArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long, value_enum)]
        encoding: Option<EncodingArg>,
        /// Train, dev and test fractions, e.g. 0.8,0.1,0.1
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Keep a random fraction of a training file
    Subsample {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List up to k shortest reasoning paths per pair
    Paths {
        #[command(flatten)]
        kg: KgArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the n-gram copy baseline on dataset records
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lm_weights: Option<Vec<f64>>,
        #[arg(long)]
        copy_weight: Option<f64>,
        #[arg(long)]
        smoothing: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a description for every input record
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose one reasoning path per entity pair
    Select {
        #[command(flatten)]
        kg: KgArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        hop_penalty: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against references
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "predictions")]
        references: Option<PathBuf>,
        /// Comma-separated: bleu, rouge_l, meteor
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        /// Output of `select`
        #[arg(long, requires = "labels")]
        selections: Option<PathBuf>,
        /// TSV: pair_id<TAB>preferred path index, or - to skip
        #[arg(long, requires = "selections")]
        labels: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum EncodingArg {
    Vanilla,
    Shortest,
    Multi,
}

impl From<EncodingArg> for EncodingScheme {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Vanilla => EncodingScheme::Vanilla,
            EncodingArg::Shortest => EncodingScheme::Shortest,
            EncodingArg::Multi => EncodingScheme::Multi,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum MethodArg {
    Shortest,
    Confidence,
    RandomWalk,
}

impl From<MethodArg> for SelectMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Shortest => SelectMethod::Shortest,
            MethodArg::Confidence => SelectMethod::Confidence,
            MethodArg::RandomWalk => SelectMethod::RandomWalk,
        }
    }
}

/// Why a command failed; decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub exec: Execution,
}

fn apply_paths(cfg: &mut PipelineConfig, p: &PathArgs) {
    if let Some(k) = p.k {
        cfg.paths.k = k;
    }
    if let Some(h) = p.max_hops {
        cfg.paths.max_hops = h;
    }
    if p.inverse {
        cfg.paths.inverse = true;
    }
    if let Some(b) = p.expansion_budget {
        cfg.paths.expansion_budget = b;
    }
}

fn apply_kg(cfg: &mut PipelineConfig, k: &KgArgs) {
    for (flag, slot) in [
        (&k.triples, &mut cfg.kg.triples),
        (&k.entities, &mut cfg.kg.entities),
        (&k.relations, &mut cfg.kg.relations),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
}

fn apply_backend(cfg: &mut PipelineConfig, b: &BackendArgs) {
    if let Some(m) = &b.model {
        cfg.scorer.model = Some(m.clone());
        cfg.remote = None;
    }
    if let Some(url) = &b.remote {
        let mut r = cfg.remote.take().unwrap_or(config::RemoteConfig {
            base_url: String::new(),
            timeout_secs: 30.0,
            max_retries: 3,
            auth_token: None,
        });
        r.base_url = url.clone();
        cfg.remote = Some(r);
    }
    if let Some(r) = cfg.remote.as_mut() {
        if let Some(t) = b.remote_timeout {
            r.timeout_secs = t;
        }
        if let Some(n) = b.remote_retries {
            r.max_retries = n;
        }
        if b.auth_token.is_some() {
            r.auth_token.clone_from(&b.auth_token);
        }
    }
    if let Some(w) = b.beam_width {
        cfg.scorer.beam_width = w;
    }
    if let Some(l) = b.max_len {
        cfg.scorer.max_len = l;
    }
}

/// Folds command-line overrides into the configuration.
fn effective_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match &cli.command {
        Command::BuildKg { kg, corpus, .. } => {
            apply_kg(&mut cfg, kg);
            if corpus.is_some() {
                cfg.corpus.definitions.clone_from(corpus);
            }
        }
        Command::Stats { kg, max_hops, inverse, .. } => {
            apply_kg(&mut cfg, kg);
            if let Some(h) = max_hops {
                cfg.paths.max_hops = *h;
            }
            cfg.paths.inverse |= inverse;
        }
        Command::Extract { corpus, kg, .. } => {
            apply_kg(&mut cfg, kg);
            if corpus.is_some() {
                cfg.corpus.definitions.clone_from(corpus);
            }
        }
        Command::Filter { parses, threshold, .. } => {
            if parses.is_some() {
                cfg.corpus.parses.clone_from(parses);
            }
            if let Some(t) = threshold {
                cfg.corpus.coverage_threshold = *t;
            }
        }
        Command::Split { kg, paths, encoding, fractions, .. } => {
            apply_kg(&mut cfg, kg);
            apply_paths(&mut cfg, paths);
            if let Some(e) = encoding {
                cfg.split.encoding = (*e).into();
            }
            if let Some(f) = fractions {
                cfg.split.fractions =
                    <[f64; 3]>::try_from(f.as_slice()).map_err(|_| usage(format!("--fractions takes 3 values, got {}", f.len())))?;
            }
        }
        Command::Subsample { fraction, .. } => {
            if let Some(f) = fraction {
                cfg.split.subsample = *f;
            }
        }
        Command::Paths { kg, paths, .. } => {
            apply_kg(&mut cfg, kg);
            apply_paths(&mut cfg, paths);
        }
        Command::Train { order, lm_weights, copy_weight, smoothing, .. } => {
            if let Some(o) = order {
                cfg.scorer.order = *o;
                if lm_weights.is_none() && cfg.scorer.lm_weights.len() != *o {
                    return Err(usage("--order changes the number of LM weights; pass --lm-weights too"));
                }
            }
            if let Some(w) = lm_weights {
                cfg.scorer.lm_weights.clone_from(w);
            }
            if let Some(g) = copy_weight {
                cfg.scorer.copy_weight = *g;
            }
            if let Some(d) = smoothing {
                cfg.scorer.smoothing = *d;
            }
        }
        Command::Generate { backend, .. } => apply_backend(&mut cfg, backend),
        Command::Select { kg, paths, backend, method, hop_penalty, .. } => {
            apply_kg(&mut cfg, kg);
            apply_paths(&mut cfg, paths);
            apply_backend(&mut cfg, backend);
            if let Some(m) = method {
                cfg.select.method = (*m).into();
            }
            if let Some(a) = hop_penalty {
                cfg.select.hop_penalty = *a;
            }
        }
        Command::Eval { metrics, .. } => {
            if let Some(ms) = metrics {
                cfg.eval.metrics = ms
                    .iter()
                    .map(|m| m.trim().parse())
                    .collect::<Result<_, String>>()
                    .map_err(usage)?;
            }
        }
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli)?;
    #[cfg(feature = "parallel")]
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let ctx = Ctx { cfg, exec };
    match cli.command {
        Command::BuildKg { out_dir, .. } => commands::build_kg(&ctx, &out_dir),
        Command::Stats { pairs, histogram_out, out, .. } => {
            commands::stats(&ctx, pairs.as_deref(), histogram_out.as_deref(), out.as_deref())
        }
        Command::Extract { out, .. } => commands::extract(&ctx, &out),
        Command::Filter { examples, out, dropped, .. } => commands::filter(&ctx, &examples, &out, dropped.as_deref()),
        Command::Split { examples, out_dir, .. } => commands::split(&ctx, &examples, &out_dir),
        Command::Subsample { train, out, .. } => commands::subsample(&ctx, &train, &out),
        Command::Paths { pairs, out, .. } => commands::paths(&ctx, &pairs, &out),
        Command::Train { train, out, .. } => commands::train(&ctx, &train, &out),
        Command::Generate { input, out, .. } => commands::generate(&ctx, &input, &out),
        Command::Select { pairs, out, .. } => commands::select(&ctx, &pairs, &out),
        Command::Eval { predictions, references, selections, labels, out, .. } => commands::eval(
            &ctx,
            predictions.as_deref().zip(references.as_deref()),
            selections.as_deref().zip(labels.as_deref()),
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
