//! Command-line entry point.
//!
//! Subcommands mirror the pipeline stages (ingest, cluster, sample,
//! harmonize, eval, diverge) plus `run` for the whole pipeline from one
//! config file. Exit codes: 0 success, 1 config error, 2 stage failure,
//! 3 cache miss in replay mode.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use echo_cli::config::{ConfigError, RunConfig, StrategyPreset};
use echo_cli::pipeline::{self, run_pipeline, PipelineError};
use echo_cli::report::render_accuracy_table;
use echo_core::corpus::{load_corpus, DatasetKind};
use echo_core::embedding::EmbedderSpec;
use echo_core::evaluator::{evaluate, EvalOptions, Strategy};
use echo_core::gateway::{CacheMode, Gateway, MockModel, Provider, ReplayCache, RequestTemplate};
use echo_core::harmonizer::{harmonize_with_snapshots, HarmonizeOptions};
use echo_core::metrics::{divergence, DivergenceReport};
use echo_core::sampling::{
    load_demonstrations, sample_demonstrations, save_demonstrations, SelectionCriteria,
    SelectionStrategy, Tokenizer,
};

#[derive(Parser)]
#[command(
    name = "echo-cot",
    about = "Construct, harmonize, and evaluate chain-of-thought demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GatewayArgs {
    /// Model provider: openai, mock, or replay-only.
    #[arg(long, default_value = "openai")]
    provider: String,
    /// OpenAI-compatible base URL (the API key comes from OPENAI_API_KEY).
    #[arg(long, default_value = "https://api.openai.com/v1")]
    base_url: String,
    #[arg(long, default_value = "gpt-3.5-turbo-0301")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Maximum in-flight requests.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// record, replay, or passthrough.
    #[arg(long, default_value = "record")]
    cache_mode: String,
    #[arg(long)]
    cache_path: Option<PathBuf>,
    /// Constant completion for the mock provider.
    #[arg(long)]
    mock_response: Option<String>,
}

impl GatewayArgs {
    fn cache_mode(&self) -> Result<CacheMode, CliError> {
        match self.cache_mode.as_str() {
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            "passthrough" => Ok(CacheMode::Passthrough),
            other => Err(CliError::Config(ConfigError::Invalid(format!(
                "unknown cache mode {other:?}; expected record, replay, or passthrough"
            )))),
        }
    }

    fn build(&self) -> Result<(Gateway, RequestTemplate), CliError> {
        let mode = self.cache_mode()?;
        let cache = match (&self.cache_path, mode) {
            (Some(path), _) => ReplayCache::open(mode, path).map_err(|e| {
                CliError::Stage(PipelineError {
                    stage: "gateway",
                    message: e.to_string(),
                    cache_miss: false,
                    checkpoint: None,
                })
            })?,
            (None, CacheMode::Passthrough) => ReplayCache::disabled(),
            (None, _) => {
                return Err(CliError::Config(ConfigError::Invalid(
                    "--cache-path is required unless --cache-mode passthrough".into(),
                )))
            }
        };
        let provider = match self.provider.as_str() {
            "mock" => Provider::Mock(MockModel::constant(
                self.mock_response
                    .clone()
                    .unwrap_or_else(|| "First, consider the problem. The answer is 1.".into()),
            )),
            "replay-only" => Provider::ReplayOnly,
            "openai" => Provider::OpenAi {
                base_url: self.base_url.clone(),
                api_key: std::env::var(echo_cli::config::API_KEY_ENV).ok(),
            },
            other => {
                return Err(CliError::Config(ConfigError::Invalid(format!(
                    "unknown provider {other:?}; expected openai, mock, or replay-only"
                ))))
            }
        };
        let gateway = Gateway::new(provider, cache, self.concurrency);
        let template = RequestTemplate {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop: None,
        };
        Ok((gateway, template))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a benchmark file into the canonical corpus format.
    Ingest {
        /// Native benchmark file.
        #[arg(long)]
        input: PathBuf,
        /// Dataset kind (gsm8k, aqua, svamp, ..., or generic).
        #[arg(long)]
        kind: String,
        /// Canonical corpus output path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Embed and cluster a corpus; emits the cluster report.
    Cluster {
        /// Canonical corpus file.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deterministic-local embedding dimension.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sample demonstrations from a clustered corpus via Zero-shot-CoT.
    Sample {
        #[arg(long)]
        corpus: PathBuf,
        /// Cluster report from the `cluster` subcommand.
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        k: usize,
        /// centroid, random, or same-cluster.
        #[arg(long, default_value = "centroid")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        target_cluster: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        max_question_tokens: usize,
        #[arg(long, default_value_t = 5)]
        max_rationale_steps: usize,
        #[command(flatten)]
        gateway: GatewayArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the unification loop over a demonstrations file.
    Harmonize {
        #[arg(long)]
        demos: PathBuf,
        /// Unification iterations (T).
        #[arg(long)]
        iterations: u32,
        /// Demonstrations kept after unification (m).
        #[arg(long)]
        output_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Where per-iteration snapshots are written.
        #[arg(long)]
        snapshots_dir: Option<PathBuf>,
        #[command(flatten)]
        gateway: GatewayArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate a corpus under a prompting strategy.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Dataset kind of the corpus file.
        #[arg(long, default_value = "generic")]
        kind: String,
        /// zero-shot, zero-shot-cot, few-shot, few-shot-cot, auto-cot, echo.
        #[arg(long)]
        preset: String,
        /// Demonstrations file (required for demonstration-based presets).
        #[arg(long)]
        demos: Option<PathBuf>,
        #[command(flatten)]
        gateway: GatewayArgs,
        /// Evaluation report output path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute demonstration-set divergence; several files give a series.
    Diverge {
        /// Demonstration files, e.g. per-iteration snapshots in order.
        #[arg(long, required = true, num_args = 1..)]
        demos: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Plot-ready (iteration, divergence) table output; stdout if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        iterations: Option<u32>,
        /// Halve the demonstration count.
        #[arg(long)]
        half: bool,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        cache_mode: Option<String>,
        #[arg(long)]
        cache_path: Option<PathBuf>,
    },
}

enum CliError {
    Config(ConfigError),
    Stage(PipelineError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Stage(e)
    }
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| {
        CliError::Stage(PipelineError {
            stage: name,
            message: e.to_string(),
            cache_miss: false,
            checkpoint: None,
        })
    }
}

fn gateway_stage<E: std::error::Error + 'static>(name: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| {
        let cache_miss = {
            let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(&e);
            let mut hit = false;
            while let Some(err) = cur {
                if let Some(g) = err.downcast_ref::<echo_core::gateway::GatewayError>() {
                    if matches!(g, echo_core::gateway::GatewayError::CacheMiss { .. }) {
                        hit = true;
                        break;
                    }
                }
                cur = err.source();
            }
            hit
        };
        CliError::Stage(PipelineError {
            stage: name,
            message: e.to_string(),
            cache_miss,
            checkpoint: None,
        })
    }
}

async fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            input,
            kind,
            output,
        } => {
            let kind: DatasetKind = kind.parse().map_err(stage("ingest"))?;
            let corpus = load_corpus(&input, kind).map_err(stage("ingest"))?;
            if let Some(expected) = kind.expected_test_size() {
                if corpus.len() != expected {
                    eprintln!(
                        "note: {} has {} records; the published test split has {expected}",
                        kind.label(),
                        corpus.len()
                    );
                }
            }
            corpus.save(&output).map_err(stage("ingest"))?;
            println!("{} records → {}", corpus.len(), output.display());
            Ok(())
        }
        Command::Cluster {
            corpus,
            k,
            seed,
            dim,
            output,
        } => {
            let corpus = load_corpus(&corpus, DatasetKind::Generic).map_err(stage("ingest"))?;
            let config = RunConfig {
                k: Some(k),
                m: Some(k.min(corpus.len())),
                seed,
                embedder: echo_cli::config::EmbedderConfig {
                    dim,
                    ..Default::default()
                },
                ..RunConfig::default()
            };
            let resolved = config.resolve()?;
            let cache = ReplayCache::disabled();
            let report = pipeline::cluster_corpus(&corpus, &resolved, &cache).await?;
            pipeline::save_json(&report, &output).map_err(stage("cluster"))?;
            println!(
                "{} records → {} clusters → {}",
                corpus.len(),
                report.ordered.len(),
                output.display()
            );
            Ok(())
        }
        Command::Sample {
            corpus,
            clusters,
            k,
            strategy,
            target_cluster,
            seed,
            max_question_tokens,
            max_rationale_steps,
            gateway,
            output,
        } => {
            let corpus = load_corpus(&corpus, DatasetKind::Generic).map_err(stage("ingest"))?;
            let text = std::fs::read_to_string(&clusters).map_err(stage("sample"))?;
            let report: pipeline::ClusterReport =
                serde_json::from_str(&text).map_err(stage("sample"))?;
            let strategy = match strategy.as_str() {
                "centroid" => SelectionStrategy::Centroid,
                "random" => SelectionStrategy::Random { seed },
                "same-cluster" => SelectionStrategy::SameCluster {
                    cluster_index: target_cluster,
                },
                other => {
                    return Err(CliError::Config(ConfigError::Invalid(format!(
                        "unknown strategy {other:?}"
                    ))))
                }
            };
            let criteria = SelectionCriteria {
                max_question_tokens,
                max_rationale_steps,
                tokenizer: Tokenizer::Whitespace,
            };
            let (gw, template) = gateway.build()?;
            let demos = sample_demonstrations(
                &report.ordered,
                &corpus,
                &criteria,
                &strategy,
                &gw,
                &template,
                k,
            )
            .await
            .map_err(gateway_stage("sample"))?;
            save_demonstrations(&demos, &output).map_err(stage("sample"))?;
            println!(
                "{} demonstrations ({} gateway calls) → {}",
                demos.len(),
                gw.count_inferences(),
                output.display()
            );
            Ok(())
        }
        Command::Harmonize {
            demos,
            iterations,
            output_count,
            seed,
            checkpoint_dir,
            snapshots_dir,
            gateway,
            output,
        } => {
            let initial = load_demonstrations(&demos).map_err(stage("harmonize"))?;
            let (gw, template) = gateway.build()?;
            let options = HarmonizeOptions { checkpoint_dir };
            if let Some(dir) = &snapshots_dir {
                std::fs::create_dir_all(dir).map_err(stage("harmonize"))?;
                save_demonstrations(&initial, dir.join("iter-000.jsonl"))
                    .map_err(stage("harmonize"))?;
            }
            let snapshots = snapshots_dir.clone();
            let final_demos = harmonize_with_snapshots(
                initial,
                iterations,
                output_count,
                seed,
                &gw,
                &template,
                &options,
                |t, demos| {
                    if let Some(dir) = &snapshots {
                        save_demonstrations(demos, dir.join(format!("iter-{t:03}.jsonl")))
                            .map_err(echo_core::harmonizer::HarmonizerError::File)?;
                    }
                    Ok(())
                },
            )
            .await
            .map_err(gateway_stage("harmonize"))?;
            save_demonstrations(&final_demos, &output).map_err(stage("harmonize"))?;
            println!(
                "{} demonstrations after {} iterations ({} unification calls) → {}",
                final_demos.len(),
                iterations,
                gw.count_inferences(),
                output.display()
            );
            Ok(())
        }
        Command::Eval {
            corpus,
            kind,
            preset,
            demos,
            gateway,
            output,
        } => {
            let kind: DatasetKind = kind.parse().map_err(stage("ingest"))?;
            let corpus = load_corpus(&corpus, kind).map_err(stage("ingest"))?;
            let preset: StrategyPreset = preset.parse()?;
            let strategy = match preset {
                StrategyPreset::ZeroShot => Strategy::ZeroShot,
                StrategyPreset::ZeroShotCot => Strategy::ZeroShotCoT,
                StrategyPreset::FewShot => {
                    let path = demos.ok_or_else(|| {
                        CliError::Config(ConfigError::Invalid("--demos required".into()))
                    })?;
                    Strategy::few_shot(load_demonstrations(&path).map_err(stage("eval"))?)
                        .map_err(stage("eval"))?
                }
                StrategyPreset::FewShotCot | StrategyPreset::AutoCot | StrategyPreset::Echo => {
                    let path = demos.ok_or_else(|| {
                        CliError::Config(ConfigError::Invalid("--demos required".into()))
                    })?;
                    Strategy::few_shot_cot(load_demonstrations(&path).map_err(stage("eval"))?)
                        .map_err(stage("eval"))?
                }
            };
            let (gw, template) = gateway.build()?;
            let options = EvalOptions {
                concurrency: gateway.concurrency,
                strict: false,
            };
            let report = evaluate(&corpus, &strategy, &gw, &template, &options)
                .await
                .map_err(gateway_stage("eval"))?;
            report.save(&output).map_err(stage("eval"))?;
            println!(
                "accuracy {:.1}% ({}/{} correct, {} inferences) → {}",
                report.accuracy * 100.0,
                report.correct_count(),
                report.per_item.len(),
                report.inference_count,
                output.display()
            );
            print!(
                "{}",
                render_accuracy_table(&[(kind.label().to_string(), report.accuracy)])
            );
            Ok(())
        }
        Command::Diverge {
            demos,
            seed,
            dim,
            output,
        } => {
            let spec = EmbedderSpec::deterministic_local(seed, dim).map_err(stage("metrics"))?;
            let cache = ReplayCache::disabled();
            let mut table = String::from("iteration\tdivergence\n");
            let mut last: Option<DivergenceReport> = None;
            for (i, path) in demos.iter().enumerate() {
                let set = load_demonstrations(path).map_err(stage("metrics"))?;
                let report = divergence(&set, &spec, &cache)
                    .await
                    .map_err(stage("metrics"))?;
                table.push_str(&format!("{i}\t{}\n", report.average_divergence));
                last = Some(report);
            }
            match output {
                Some(path) => {
                    std::fs::write(&path, &table).map_err(stage("metrics"))?;
                    println!("{} rows → {}", demos.len(), path.display());
                }
                None => print!("{table}"),
            }
            if demos.len() == 1 {
                if let Some(report) = last {
                    println!("encoder: {}", report.encoder);
                }
            }
            Ok(())
        }
        Command::Run {
            config,
            seed,
            output_dir,
            preset,
            k,
            m,
            iterations,
            half,
            corpus,
            kind,
            cache_mode,
            cache_path,
        } => {
            let mut run_config = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                run_config.seed = seed;
            }
            if let Some(dir) = output_dir {
                run_config.output_dir = dir;
            }
            if let Some(preset) = preset {
                run_config.preset = preset.parse()?;
            }
            if k.is_some() {
                run_config.k = k;
            }
            if m.is_some() {
                run_config.m = m;
            }
            if let Some(t) = iterations {
                run_config.iterations = t;
            }
            if half {
                run_config.half = true;
            }
            if let Some(path) = corpus {
                run_config.corpus_path = path;
            }
            if let Some(kind) = kind {
                run_config.dataset_kind = kind;
            }
            if let Some(mode) = cache_mode {
                run_config.gateway.cache_mode = match mode.as_str() {
                    "record" => CacheMode::Record,
                    "replay" => CacheMode::Replay,
                    "passthrough" => CacheMode::Passthrough,
                    other => {
                        return Err(CliError::Config(ConfigError::Invalid(format!(
                            "unknown cache mode {other:?}"
                        ))))
                    }
                };
            }
            if cache_path.is_some() {
                run_config.gateway.cache_path = cache_path;
            }
            let resolved = run_config.resolve()?;
            let manifest = run_pipeline(&resolved).await?;
            println!(
                "run complete: preset={} dataset={} items={} accuracy={} manifest={}",
                manifest.preset,
                manifest.dataset,
                manifest.corpus_items,
                manifest
                    .accuracy
                    .map(|a| format!("{:.1}%", a * 100.0))
                    .unwrap_or_else(|| "n/a".into()),
                resolved.raw.output_dir.join("manifest.json").display()
            );
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match execute(cli.command).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Stage(e)) if e.cache_miss => {
            eprintln!("replay cache miss: {e}");
            ExitCode::from(3)
        }
        Err(CliError::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
