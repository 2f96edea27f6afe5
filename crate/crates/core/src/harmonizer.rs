//! Demonstration unification: for T iterations, regenerate each
//! demonstration's rationale with the remaining shuffled demonstrations as
//! in-context examples, updating online so later regenerations within an
//! iteration see earlier ones. Finally keep the first m demonstrations.
//!
//! Visit order is a fresh seeded permutation per iteration; the context
//! shuffle of each regeneration call draws its own seed from the iteration
//! stream. With a replay cache the whole loop is a pure function of
//! (demos, T, m, seed, cache contents).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, RequestTemplate};
use crate::sampling::{
    fisher_yates, load_demonstrations, save_demonstrations, Demonstration, Generation,
    SamplingError,
};
use crate::seeds::derive_seed_parts;

#[derive(Debug, Error)]
pub enum HarmonizerError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("unification requires at least one context demonstration")]
    NoContext,
    #[error("target demonstration also appears in the context set")]
    TargetInContext,
    #[error("output count m={m} out of range 1..={k}")]
    BadOutputCount { m: usize, k: usize },
    #[error("harmonization needs at least 2 demonstrations, got {0}")]
    TooFewDemos(usize),
    #[error("model returned an empty rationale for {question:?}")]
    EmptyRationale { question: String },
    #[error("manual seed file contains a non-manual demonstration at index {index}")]
    NotManual { index: usize },
    #[error(transparent)]
    File(#[from] SamplingError),
    #[error("checkpoint write {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

/// The ordered demonstration set plus loop position and seed.
#[derive(Debug, Clone)]
pub struct HarmonizationState {
    pub demos: Vec<Demonstration>,
    pub iteration: u32,
    pub rng_seed: u64,
    pub m: usize,
    pub total_iterations: u32,
}

impl HarmonizationState {
    pub fn new(
        demos: Vec<Demonstration>,
        total_iterations: u32,
        m: usize,
        rng_seed: u64,
    ) -> Result<Self, HarmonizerError> {
        if m == 0 || m > demos.len() {
            return Err(HarmonizerError::BadOutputCount { m, k: demos.len() });
        }
        Ok(HarmonizationState {
            demos,
            iteration: 0,
            rng_seed,
            m,
            total_iterations,
        })
    }

    pub fn k(&self) -> usize {
        self.demos.len()
    }
}

/// Render one in-context demonstration block.
pub fn demo_block(demo: &Demonstration) -> String {
    format!(
        "Q: {}\nA: Let's think step by step. {}\n\n",
        demo.question, demo.rationale
    )
}

/// Build the regeneration prompt for one demonstration: the other
/// demonstrations, shuffled by `order_seed`, then the target question with
/// the bare trigger. Single user message at the template's temperature.
pub fn build_unification_prompt(
    target: &Demonstration,
    others: &[Demonstration],
    order_seed: u64,
    template: &RequestTemplate,
) -> Result<ChatRequest, HarmonizerError> {
    if others.is_empty() {
        return Err(HarmonizerError::NoContext);
    }
    if others.iter().any(|d| d.origin == target.origin) {
        return Err(HarmonizerError::TargetInContext);
    }
    let mut order: Vec<usize> = (0..others.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    fisher_yates(&mut order, &mut rng);
    let mut prompt = String::new();
    for i in order {
        prompt.push_str(&demo_block(&others[i]));
    }
    prompt.push_str(&format!(
        "Q: {}\nA: Let's think step by step.",
        target.question
    ));
    Ok(template.user_request(prompt))
}

/// Options threaded through the loop: state checkpoints after every demo
/// update, if a directory is given.
#[derive(Debug, Clone, Default)]
pub struct HarmonizeOptions {
    pub checkpoint_dir: Option<PathBuf>,
}

fn write_checkpoint(dir: &Path, state: &HarmonizationState) -> Result<(), HarmonizerError> {
    let path = dir.join("state-latest.jsonl");
    std::fs::create_dir_all(dir)
        .map_err(|e| HarmonizerError::Checkpoint {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
        .and_then(|_| {
            save_demonstrations(&state.demos, &path).map_err(|e| HarmonizerError::Checkpoint {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })
}

/// One full iteration: every demonstration regenerated exactly once, in a
/// seeded random order, against the current (online-updated) set. Issues
/// exactly k gateway calls.
pub async fn harmonize_step(
    mut state: HarmonizationState,
    gateway: &Gateway,
    template: &RequestTemplate,
    options: &HarmonizeOptions,
) -> Result<HarmonizationState, HarmonizerError> {
    let k = state.k();
    if k < 2 {
        return Err(HarmonizerError::TooFewDemos(k));
    }
    let step_seed = derive_seed_parts(state.rng_seed, &[u64::from(state.iteration)]);
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let mut visit_order: Vec<usize> = (0..k).collect();
    fisher_yates(&mut visit_order, &mut rng);

    for idx in visit_order {
        let context_seed = rng.next_u64();
        let others: Vec<Demonstration> = state
            .demos
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, d)| d.clone())
            .collect();
        let req = build_unification_prompt(&state.demos[idx], &others, context_seed, template)?;
        let resp = gateway.complete(&req).await?;
        let rationale = resp.text.trim_end().to_string();
        if rationale.is_empty() {
            return Err(HarmonizerError::EmptyRationale {
                question: state.demos[idx].question.clone(),
            });
        }
        state.demos[idx].rationale = rationale;
        state.demos[idx].generation = Generation::Harmonized(state.iteration + 1);
        if let Some(dir) = &options.checkpoint_dir {
            write_checkpoint(dir, &state)?;
        }
    }
    state.iteration += 1;
    Ok(state)
}

/// Run T unification iterations and keep the first m demonstrations of the
/// final state (positional truncation). T=0 returns the first m inputs
/// unchanged — exactly the un-unified baseline configuration.
pub async fn harmonize(
    demos: Vec<Demonstration>,
    iterations: u32,
    m: usize,
    seed: u64,
    gateway: &Gateway,
    template: &RequestTemplate,
    options: &HarmonizeOptions,
) -> Result<Vec<Demonstration>, HarmonizerError> {
    harmonize_with_snapshots(demos, iterations, m, seed, gateway, template, options, |_, _| Ok(()))
        .await
}

/// Like [`harmonize`], invoking `on_iteration(t, demos)` after each completed
/// iteration (t = 1..=T) so callers can persist per-iteration snapshots.
#[allow(clippy::too_many_arguments)]
pub async fn harmonize_with_snapshots(
    demos: Vec<Demonstration>,
    iterations: u32,
    m: usize,
    seed: u64,
    gateway: &Gateway,
    template: &RequestTemplate,
    options: &HarmonizeOptions,
    mut on_iteration: impl FnMut(u32, &[Demonstration]) -> Result<(), HarmonizerError>,
) -> Result<Vec<Demonstration>, HarmonizerError> {
    let mut state = HarmonizationState::new(demos, iterations, m, seed)?;
    for _ in 0..iterations {
        state = harmonize_step(state, gateway, template, options).await?;
        on_iteration(state.iteration, &state.demos)?;
    }
    let m = state.m;
    let mut demos = state.demos;
    demos.truncate(m);
    Ok(demos)
}

/// Load a manual demonstration file (generation tag `manual`) as a starting
/// set for harmonization.
pub fn seed_from_manual(path: impl AsRef<Path>) -> Result<Vec<Demonstration>, HarmonizerError> {
    let demos = load_demonstrations(path)?;
    for (index, demo) in demos.iter().enumerate() {
        if demo.generation != Generation::Manual {
            return Err(HarmonizerError::NotManual { index });
        }
    }
    Ok(demos)
}
