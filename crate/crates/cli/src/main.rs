//! Command-line front end for the seedforge pipeline.

use std::fmt;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seedforge::ablation::{
    build_culture_only, build_diversity_only, build_fluency_only, build_full, build_no_properties,
    read_external, AdapterError, BuildError, DatasetManifest, Variant,
};
use seedforge::checkpoint::DirCheckpoints;
use seedforge::config::{load_config, ConfigError, PipelineConfig};
use seedforge::context::{acquire_contexts, ContextEntry, ContextError};
use seedforge::diversity::{dedup_filter, DedupError};
use seedforge::eval::report::{
    aggregate_report, render_tables, EvalError, MetricReport, PredictionRow, ReferenceRow,
    SystemPredictions,
};
use seedforge::gateway::{Gateway, ProviderError};
use seedforge::instruct::{generate_all, TaskError};
use seedforge::pipeline::{
    build_exit_code, run_pipeline, RunOptions, EXIT_CONFIG, EXIT_FAILURE, EXIT_PROVIDER,
    EXIT_SHORTFALL,
};
use seedforge::record::Topic;
use seedforge::store::{
    read_jsonl, read_manifest, read_records, write_atomic, write_manifest, write_records,
    StoreError,
};
use seedforge::topics::{generate_topic_set, TopicError};

#[derive(Parser)]
#[command(
    name = "seedforge",
    version,
    about = "Synthetic instruction data without seed examples"
)]
struct Cli {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. "info" or "seedforge=debug".
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate general and cultural topics.
    Topics {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        general: Option<usize>,
        #[arg(long)]
        cultural: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Acquire one context per topic.
    Contexts {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long, default_value_t = 0)]
        round: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate instruction records for every context.
    Generate {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to log generations that stayed malformed after retrying.
        #[arg(long)]
        failures: Option<PathBuf>,
    },
    /// Remove near-duplicate records.
    Dedup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        removals: Option<PathBuf>,
    },
    /// Build one of the property-controlled dataset variants.
    Ablate {
        /// full, fluency, diversity, culture or none.
        #[arg(long)]
        variant: Variant,
        #[command(flatten)]
        seed: SeedArg,
        /// Target record count; defaults to the configured size.
        #[arg(long)]
        size: Option<usize>,
        /// Record file; the manifest header is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Full-variant manifest to derive the culture variant from.
        #[arg(long)]
        from: Option<PathBuf>,
        /// External JSONL corpus for the no-properties variant.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long, default_value = "ultrachat")]
        source_name: String,
        /// General topic count for the generated variants.
        #[arg(long)]
        general: Option<usize>,
        /// Cultural topic count for the full variant.
        #[arg(long)]
        cultural: Option<usize>,
        /// Originals sampled by the culture and no-properties variants.
        #[arg(long)]
        sample: Option<usize>,
        /// Checkpoint directory; omit to build without checkpoints.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Score prediction files against references.
    Eval {
        /// Prediction JSONL, one per system; the file stem names the system.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        tokenizer: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Skip the embedding-based metric.
        #[arg(long)]
        no_bert: bool,
    },
    /// Render an evaluation report as tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run topics through dedup as one resumable job.
    Run {
        #[command(flatten)]
        seed: SeedArg,
        /// Target record count; defaults to the configured size.
        #[arg(long)]
        size: Option<usize>,
        /// Record file; the manifest header is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Lock file and checkpoints live here.
        #[arg(long, default_value = ".seedforge")]
        work_dir: PathBuf,
        /// Stop after the named stage (topics, contexts, instructions, dedup).
        #[arg(long)]
        stop_after: Option<String>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn provider_code(e: &ProviderError) -> i32 {
    match e {
        ProviderError::Config(_) => EXIT_CONFIG,
        _ => EXIT_PROVIDER,
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        Failure::new(provider_code(&e), e)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(EXIT_FAILURE, e)
    }
}

impl From<AdapterError> for Failure {
    fn from(e: AdapterError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<TopicError> for Failure {
    fn from(e: TopicError) -> Self {
        let code = match &e {
            TopicError::Provider(p) => provider_code(p),
            TopicError::Exhausted { .. } => EXIT_SHORTFALL,
            TopicError::InvalidCount => EXIT_CONFIG,
        };
        Failure::new(code, e)
    }
}

impl From<ContextError> for Failure {
    fn from(e: ContextError) -> Self {
        let code = match &e {
            ContextError::Provider(p) => provider_code(p),
            ContextError::Policy(_) | ContextError::UnknownStyle(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        let code = match &e {
            TaskError::Provider(p) => provider_code(p),
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

impl From<DedupError> for Failure {
    fn from(e: DedupError) -> Self {
        let code = match &e {
            DedupError::Provider(p) => provider_code(p),
            DedupError::Threshold(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        Failure::new(build_exit_code(&e), e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Provider(p) => provider_code(p),
            EvalError::Tokenizer(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e)
    }
}

fn write_jsonl<T: serde::Serialize>(items: &[T], path: &Path) -> Result<(), Failure> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
        out.push(b'\n');
    }
    Ok(write_atomic(path, &out)?)
}

fn read_items<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, v)| v).collect())
}

fn with_seed(cfg: &mut PipelineConfig, seed: &SeedArg) {
    if let Some(s) = seed.seed {
        cfg.seed = s;
    }
}

fn manifest_summary(m: &DatasetManifest, hash: &str, path: &Path) {
    println!(
        "{} {} records, flags {}, manifest hash {hash}, written to {}",
        m.variant,
        m.records.len(),
        m.flags,
        path.display()
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Topics {
            seed,
            general,
            cultural,
            out,
        } => {
            with_seed(&mut cfg, &seed);
            let settings = cfg.build_settings();
            let set = generate_topic_set(
                general.unwrap_or(cfg.topics.general),
                cultural.unwrap_or(cfg.topics.cultural),
                &gateway(&cfg)?,
                cfg.seed,
                &settings.topics,
            )?;
            write_jsonl(&set.topics, &out)?;
            println!("{} topics written to {}", set.topics.len(), out.display());
        }
        Command::Contexts {
            seed,
            topics,
            round,
            out,
        } => {
            with_seed(&mut cfg, &seed);
            let topics: Vec<Topic> = read_items(&topics)?;
            let indexed: Vec<(usize, Topic)> = topics.into_iter().enumerate().collect();
            let docs = acquire_contexts(
                &indexed,
                round,
                &gateway(&cfg)?,
                &cfg.build_settings().context,
                cfg.seed,
            )?;
            let entries: Vec<ContextEntry> = docs
                .into_iter()
                .map(|(i, context)| ContextEntry {
                    id: format!("t{i:05}-r{round}"),
                    context,
                })
                .collect();
            write_jsonl(&entries, &out)?;
            println!("{} contexts written to {}", entries.len(), out.display());
        }
        Command::Generate {
            seed,
            contexts,
            out,
            failures,
        } => {
            with_seed(&mut cfg, &seed);
            let entries: Vec<ContextEntry> = read_items(&contexts)?;
            let pairs: Vec<_> = entries.into_iter().map(|e| (e.id, e.context)).collect();
            let generated = generate_all(
                &pairs,
                &gateway(&cfg)?,
                &cfg.build_settings().tasks,
                cfg.seed,
            )?;
            write_records(&generated.records, &out)?;
            if let Some(f) = failures {
                write_jsonl(&generated.failures, &f)?;
            }
            println!(
                "{} records written to {} ({} failed generations)",
                generated.records.len(),
                out.display(),
                generated.failures.len()
            );
        }
        Command::Dedup {
            input,
            threshold,
            out,
            removals,
        } => {
            if let Some(t) = threshold {
                cfg.dedup.threshold = t;
                cfg.validate()?;
            }
            let records = read_records(&input)?;
            let n = records.len();
            let (kept, log) = dedup_filter(records, &cfg.dedup_config(), &gateway(&cfg)?)?;
            write_records(&kept, &out)?;
            if let Some(r) = removals {
                write_jsonl(&log.removed, &r)?;
            }
            println!(
                "kept {} of {n} records, written to {}",
                kept.len(),
                out.display()
            );
        }
        Command::Ablate {
            variant,
            seed,
            size,
            out,
            from,
            external,
            source_name,
            general,
            cultural,
            sample,
            work_dir,
        } => {
            with_seed(&mut cfg, &seed);
            let settings = cfg.build_settings();
            let size = size.unwrap_or(cfg.size);
            let sample = sample.unwrap_or(cfg.ablation.sampled);
            let gw = gateway(&cfg)?;
            let cp: Box<dyn seedforge::checkpoint::Checkpoints> = match &work_dir {
                Some(d) => Box::new(DirCheckpoints::new(d.join("checkpoints"))),
                None => Box::new(seedforge::checkpoint::NoCheckpoints),
            };
            let _lock = work_dir
                .as_deref()
                .map(seedforge::store::RunLock::acquire)
                .transpose()?;
            let mut manifest = match variant {
                Variant::Full => build_full(
                    &gw,
                    cfg.seed,
                    size,
                    general.unwrap_or(cfg.topics.general),
                    cultural.unwrap_or(cfg.topics.cultural),
                    &settings,
                    cp.as_ref(),
                )?,
                Variant::Fluency => build_fluency_only(
                    &gw,
                    cfg.seed,
                    size,
                    general.unwrap_or(cfg.ablation.fluency_topics),
                    &settings,
                    cp.as_ref(),
                )?,
                Variant::Diversity => build_diversity_only(
                    &gw,
                    cfg.seed,
                    size,
                    general.unwrap_or(cfg.ablation.diversity_topics),
                    &settings,
                    cp.as_ref(),
                )?,
                Variant::Culture => {
                    let from = from.ok_or_else(|| {
                        Failure::new(EXIT_CONFIG, "--from <full manifest> is required")
                    })?;
                    let (full, _) = read_manifest(&from)?;
                    build_culture_only(&full, &gw, cfg.seed, sample, &settings)?
                }
                Variant::None => {
                    let path = external.ok_or_else(|| {
                        Failure::new(EXIT_CONFIG, "--external <corpus.jsonl> is required")
                    })?;
                    let rows = read_external(&path, &source_name, &cfg.ablation.external_language)?;
                    build_no_properties(&rows, &source_name, &gw, cfg.seed, sample, &settings)?
                }
            };
            manifest.config =
                Some(serde_json::to_value(&cfg).map_err(|e| Failure::new(EXIT_FAILURE, e))?);
            let header = write_manifest(&manifest, &out, Some(gw.stats()))?;
            manifest_summary(&manifest, &header.manifest_hash, &out);
        }
        Command::Eval {
            preds,
            refs,
            tokenizer,
            out,
            no_bert,
        } => {
            let mut opts = cfg.eval_options();
            if let Some(t) = tokenizer {
                cfg.eval.tokenizer = t.clone();
                cfg.validate()?;
                opts.tokenizer = t;
            }
            opts.bert_score = !no_bert;
            let references: Vec<ReferenceRow> = read_items(&refs)?;
            let mut systems = Vec::new();
            for p in &preds {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                let predictions: Vec<PredictionRow> = read_items(p)?;
                systems.push(SystemPredictions { name, predictions });
            }
            let gw = if no_bert { None } else { Some(gateway(&cfg)?) };
            let report = aggregate_report(&references, &systems, gw.as_ref(), &opts)?;
            let mut text =
                serde_json::to_vec_pretty(&report).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
            text.push(b'\n');
            write_atomic(&out, &text)?;
            print!("{}", render_tables(&report));
        }
        Command::Report { input, out } => {
            let bytes = std::fs::read(&input)
                .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", input.display())))?;
            let report: MetricReport = serde_json::from_slice(&bytes)
                .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", input.display())))?;
            let text = render_tables(&report);
            match out {
                Some(p) => write_atomic(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Run {
            seed,
            size,
            out,
            work_dir,
            stop_after,
        } => {
            with_seed(&mut cfg, &seed);
            if let Some(s) = size {
                cfg.size = s;
                cfg.validate()?;
            }
            let gw = gateway(&cfg)?;
            let opts = RunOptions {
                work_dir,
                out,
                stop_after,
            };
            let outcome =
                run_pipeline(&cfg, &gw, &opts).map_err(|e| Failure::new(e.exit_code(), e))?;
            manifest_summary(
                &outcome.manifest,
                &outcome.header.manifest_hash,
                &outcome.path,
            );
        }
    }
    Ok(())
}

fn gateway(cfg: &PipelineConfig) -> Result<Gateway, Failure> {
    Ok(cfg.gateway()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
