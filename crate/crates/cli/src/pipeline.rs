//! The end-to-end pipeline: ingest → embed → cluster → sample → harmonize →
//! eval → metrics, with per-stage call accounting and a reproducible
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use echo_core::clustering::{kmeans, order_clusters, ClusterModel, OrderedCluster, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use echo_core::corpus::{load_corpus, Corpus};
use echo_core::embedding::{embed_batch, EmbeddingVector};
use echo_core::evaluator::{evaluate, EvalOptions, EvalReport, Strategy};
use echo_core::gateway::{CacheMode, Gateway, GatewayError, ReplayCache};
use echo_core::harmonizer::{
    harmonize_with_snapshots, seed_from_manual, HarmonizeOptions,
};
use echo_core::metrics::divergence;
use echo_core::sampling::{
    load_demonstrations, sample_demonstrations, save_demonstrations, Demonstration,
};
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedConfig, StrategyPreset};
use crate::manifest::{InferenceCounts, RunManifest};
use crate::report::render_summary;

/// A stage failure: which stage, why, and where to resume from.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
    pub cache_miss: bool,
    pub checkpoint: Option<PathBuf>,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.message)?;
        if let Some(ckpt) = &self.checkpoint {
            write!(f, " (resume from {})", ckpt.display())?;
        }
        Ok(())
    }
}

impl std::error::Error for PipelineError {}

fn chain_has_cache_miss(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = cur {
        if let Some(g) = e.downcast_ref::<GatewayError>() {
            if matches!(g, GatewayError::CacheMiss { .. }) {
                return true;
            }
        }
        cur = e.source();
    }
    false
}

fn stage_error<E: std::error::Error + 'static>(
    stage: &'static str,
    checkpoint: Option<PathBuf>,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
        cache_miss: chain_has_cache_miss(&e),
        checkpoint,
    }
}

fn io_stage_error(stage: &'static str) -> impl FnOnce(std::io::Error) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
        cache_miss: false,
        checkpoint: None,
    }
}

/// Cluster report artifact: the fitted model plus each cluster's ordering.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    pub model: ClusterModel,
    pub ordered: Vec<OrderedCluster>,
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(value).expect("artifact serializes"),
    )
}

/// Embed all questions of a corpus, in record order.
pub async fn embed_corpus(
    corpus: &Corpus,
    config: &ResolvedConfig,
    cache: &ReplayCache,
) -> Result<Vec<(String, EmbeddingVector)>, echo_core::embedding::EmbeddingError> {
    let texts: Vec<String> = corpus
        .records()
        .iter()
        .map(|r| r.question.clone())
        .collect();
    let vectors = embed_batch(&texts, &config.embedder, cache).await?;
    Ok(corpus
        .records()
        .iter()
        .map(|r| r.id.clone())
        .zip(vectors)
        .collect())
}

/// Cluster a corpus and order each cluster by distance to its centroid.
pub async fn cluster_corpus(
    corpus: &Corpus,
    config: &ResolvedConfig,
    cache: &ReplayCache,
) -> Result<ClusterReport, PipelineError> {
    let points = embed_corpus(corpus, config, cache)
        .await
        .map_err(stage_error("embed", None))?;
    let model = kmeans(
        &points,
        config.k,
        config.cluster_seed(),
        DEFAULT_MAX_ITERS,
        DEFAULT_TOL,
    )
    .map_err(stage_error("cluster", None))?;
    let by_id: BTreeMap<String, EmbeddingVector> = points.into_iter().collect();
    let ordered = order_clusters(&model, &by_id).map_err(stage_error("cluster", None))?;
    Ok(ClusterReport { model, ordered })
}

struct DemoStage {
    final_demos: Option<Vec<Demonstration>>,
    sampling_calls: u64,
    unification_calls: u64,
    artifacts: BTreeMap<String, String>,
}

/// Build the demonstration set a preset evaluates with, recording artifacts
/// and per-stage call counts.
async fn build_demos(
    config: &ResolvedConfig,
    corpus: &Corpus,
    gateway: &Gateway,
    outdir: &Path,
) -> Result<DemoStage, PipelineError> {
    let mut artifacts = BTreeMap::new();
    let preset = config.raw.preset;

    if preset.needs_manual_demos() {
        let path = config.raw.manual_demos.as_ref().expect("validated");
        let demos = load_demonstrations(path).map_err(stage_error("demos", None))?;
        return Ok(DemoStage {
            final_demos: Some(demos),
            sampling_calls: 0,
            unification_calls: 0,
            artifacts,
        });
    }
    if !preset.builds_demos() {
        return Ok(DemoStage {
            final_demos: None,
            sampling_calls: 0,
            unification_calls: 0,
            artifacts,
        });
    }

    let template = config.template();
    let calls_at_start = gateway.count_inferences();

    // Either seed from a manual file or sample from the clustered corpus.
    let initial = match &config.raw.manual_demos {
        Some(path) => seed_from_manual(path).map_err(stage_error("demos", None))?,
        None => {
            let report = cluster_corpus(corpus, config, gateway.cache()).await?;
            save_json(&report, outdir.join("clusters.json"))
                .map_err(io_stage_error("cluster"))?;
            artifacts.insert("clusters".into(), "clusters.json".into());
            let demos = sample_demonstrations(
                &report.ordered,
                corpus,
                &config.criteria,
                &config.selection,
                gateway,
                &template,
                config.k,
            )
            .await
            .map_err(stage_error("sample", None))?;
            save_demonstrations(&demos, outdir.join("demos.jsonl"))
                .map_err(stage_error("sample", None))?;
            artifacts.insert("demos".into(), "demos.jsonl".into());
            demos
        }
    };
    let sampling_calls = gateway.count_inferences() - calls_at_start;

    let snapshots_dir = outdir.join("snapshots");
    std::fs::create_dir_all(&snapshots_dir).map_err(io_stage_error("harmonize"))?;
    let checkpoint_dir = outdir.join("checkpoints");
    std::fs::create_dir_all(&checkpoint_dir).map_err(io_stage_error("harmonize"))?;
    let checkpoint_file = checkpoint_dir.join("state-latest.jsonl");

    // Iteration-0 snapshot: the pre-unification set.
    save_demonstrations(&initial, snapshots_dir.join("iter-000.jsonl"))
        .map_err(stage_error("harmonize", None))?;
    artifacts.insert("snapshot-000".into(), "snapshots/iter-000.jsonl".into());

    let options = HarmonizeOptions {
        checkpoint_dir: Some(checkpoint_dir.clone()),
    };
    let mut snapshot_errors: Vec<String> = Vec::new();
    let final_demos = harmonize_with_snapshots(
        initial,
        config.iterations,
        config.m,
        config.harmonize_seed(),
        gateway,
        &template,
        &options,
        |t, demos| {
            let name = format!("iter-{t:03}.jsonl");
            if let Err(e) = save_demonstrations(demos, snapshots_dir.join(&name)) {
                snapshot_errors.push(e.to_string());
            }
            artifacts.insert(format!("snapshot-{t:03}"), format!("snapshots/{name}"));
            Ok(())
        },
    )
    .await
    .map_err(stage_error("harmonize", Some(checkpoint_file.clone())))?;
    if let Some(e) = snapshot_errors.into_iter().next() {
        return Err(PipelineError {
            stage: "harmonize",
            message: e,
            cache_miss: false,
            checkpoint: Some(checkpoint_file),
        });
    }
    if config.iterations > 0 {
        artifacts.insert("checkpoint".into(), "checkpoints/state-latest.jsonl".into());
    }
    let unification_calls = gateway.count_inferences() - calls_at_start - sampling_calls;

    save_demonstrations(&final_demos, outdir.join("harmonized.jsonl"))
        .map_err(stage_error("harmonize", None))?;
    artifacts.insert("harmonized".into(), "harmonized.jsonl".into());

    Ok(DemoStage {
        final_demos: Some(final_demos),
        sampling_calls,
        unification_calls,
        artifacts,
    })
}

fn eval_strategy(
    preset: StrategyPreset,
    demos: Option<&[Demonstration]>,
) -> Result<Strategy, PipelineError> {
    let wrap = stage_error("eval", None);
    match preset {
        StrategyPreset::ZeroShot => Ok(Strategy::ZeroShot),
        StrategyPreset::ZeroShotCot => Ok(Strategy::ZeroShotCoT),
        StrategyPreset::FewShot => {
            Strategy::few_shot(demos.expect("validated").to_vec()).map_err(wrap)
        }
        StrategyPreset::FewShotCot | StrategyPreset::AutoCot | StrategyPreset::Echo => {
            Strategy::few_shot_cot(demos.expect("validated").to_vec()).map_err(wrap)
        }
    }
}

/// Execute the full pipeline for a resolved configuration and write the run
/// manifest. Every artifact lands under `output_dir`.
pub async fn run_pipeline(config: &ResolvedConfig) -> Result<RunManifest, PipelineError> {
    let outdir = config.raw.output_dir.clone();
    std::fs::create_dir_all(&outdir).map_err(io_stage_error("ingest"))?;
    let mut artifacts: BTreeMap<String, String> = BTreeMap::new();

    // Ingest.
    let corpus =
        load_corpus(&config.raw.corpus_path, config.kind).map_err(stage_error("ingest", None))?;
    corpus
        .save(outdir.join("corpus.jsonl"))
        .map_err(stage_error("ingest", None))?;
    artifacts.insert("corpus".into(), "corpus.jsonl".into());

    // Gateway.
    let cache_path = config.cache_path();
    let cache = ReplayCache::open(config.raw.gateway.cache_mode, &cache_path)
        .map_err(stage_error("gateway", None))?;
    let gateway = Gateway::new(
        config.provider(),
        cache,
        config.raw.gateway.concurrency,
    );
    let template = config.template();
    if config.raw.gateway.cache_mode == CacheMode::Record
        && cache_path.starts_with(&outdir)
    {
        artifacts.insert("cache".into(), "cache.jsonl".into());
    }

    // Demonstrations.
    let demo_stage = build_demos(config, &corpus, &gateway, &outdir).await?;
    artifacts.extend(demo_stage.artifacts);

    // Evaluation.
    let eval_corpus = match &config.raw.eval_corpus_path {
        Some(path) => load_corpus(path, config.kind).map_err(stage_error("eval", None))?,
        None => corpus.clone(),
    };
    let strategy = eval_strategy(config.raw.preset, demo_stage.final_demos.as_deref())?;
    let eval_options = EvalOptions {
        concurrency: config.raw.gateway.concurrency,
        strict: false,
    };
    let calls_before_eval = gateway.count_inferences();
    let report = evaluate(&eval_corpus, &strategy, &gateway, &template, &eval_options)
        .await
        .map_err(stage_error("eval", None))?;
    let evaluation_calls = gateway.count_inferences() - calls_before_eval;
    report
        .save(outdir.join("eval_report.json"))
        .map_err(stage_error("eval", None))?;
    artifacts.insert("eval_report".into(), "eval_report.json".into());
    let summary = render_summary(config, &report);
    std::fs::write(outdir.join("summary.txt"), &summary).map_err(io_stage_error("eval"))?;
    artifacts.insert("summary".into(), "summary.txt".into());

    // Metrics.
    let mut final_divergence = None;
    if let Some(demos) = &demo_stage.final_demos {
        if demos.len() >= 2 {
            let div = divergence(demos, &config.embedder, gateway.cache())
                .await
                .map_err(stage_error("metrics", None))?;
            final_divergence = Some(div.average_divergence);
            save_json(&div, outdir.join("divergence.json")).map_err(io_stage_error("metrics"))?;
            artifacts.insert("divergence".into(), "divergence.json".into());

            // Per-iteration series from the snapshots, when present.
            let mut series = Vec::new();
            for t in 0..=config.iterations {
                let path = outdir.join(format!("snapshots/iter-{t:03}.jsonl"));
                if !path.exists() {
                    continue;
                }
                let snapshot = load_demonstrations(&path).map_err(stage_error("metrics", None))?;
                if snapshot.len() < 2 {
                    continue;
                }
                let d = divergence(&snapshot, &config.embedder, gateway.cache())
                    .await
                    .map_err(stage_error("metrics", None))?;
                series.push((t, d.average_divergence));
            }
            if !series.is_empty() {
                let mut tsv = String::from("iteration\tdivergence\n");
                for (t, d) in &series {
                    tsv.push_str(&format!("{t}\t{d}\n"));
                }
                std::fs::write(outdir.join("divergence_series.tsv"), tsv)
                    .map_err(io_stage_error("metrics"))?;
                artifacts.insert("divergence_series".into(), "divergence_series.tsv".into());
            }
        }
    }

    // Manifest.
    artifacts.insert("manifest".into(), "manifest.json".into());
    let stats = gateway.stats();
    let manifest = RunManifest {
        config_hash: config.config_hash(),
        preset: config.raw.preset.label().to_string(),
        dataset: config.kind.label().to_string(),
        corpus_items: corpus.len(),
        k: config.k,
        m: config.m,
        iterations: config.iterations,
        seeds: config.seeds.clone(),
        cache_mode: format!("{:?}", config.raw.gateway.cache_mode).to_lowercase(),
        cache_stats: stats,
        inference_counts: InferenceCounts {
            sampling: demo_stage.sampling_calls,
            unification: demo_stage.unification_calls,
            evaluation: evaluation_calls,
            total: stats.total_calls,
        },
        artifacts,
        accuracy: Some(report.accuracy),
        divergence: final_divergence,
    };
    manifest
        .save(outdir.join("manifest.json"))
        .map_err(io_stage_error("manifest"))?;
    Ok(manifest)
}

/// Load an evaluation report back (for summary tables over multiple runs).
pub fn load_report(path: impl AsRef<Path>) -> std::io::Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
