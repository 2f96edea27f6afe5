//! Inference over a test corpus under a chosen prompting strategy, with
//! per-answer-type extraction and accuracy accounting.
//!
//! Strategies cover the full baseline set: direct answering, the bare
//! step-by-step trigger (two-stage: reason, then ask for the answer),
//! few-shot with answers only, and few-shot chain-of-thought. The automatic
//! and harmonized demonstration pipelines are both `FewShotCoT` — they differ
//! only in how the demonstration set was produced.

use futures::stream::{self, StreamExt, TryStreamExt};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_answer, normalize_numeral, AnswerType, Corpus, QuestionRecord};
use crate::gateway::{content_key, ChatRequest, Gateway, GatewayError, RequestTemplate};
use crate::harmonizer::demo_block;
use crate::sampling::Demonstration;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("few-shot strategies need a non-empty demonstration set")]
    NoDemonstrations,
    #[error("demonstration {index} has no extracted answer (required for answers-only prompts)")]
    MissingDemoAnswer { index: usize },
    #[error("item {id}: {source}")]
    Item {
        id: String,
        #[source]
        source: GatewayError,
    },
    #[error("report io {path}: {detail}")]
    Io { path: String, detail: String },
}

/// A prompting strategy. The demonstration-based variants carry their demo
/// sets fixed at construction, so prompt building is a pure function.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    ZeroShot,
    ZeroShotCoT,
    FewShot(Vec<Demonstration>),
    FewShotCoT(Vec<Demonstration>),
}

impl Strategy {
    pub fn few_shot(demos: Vec<Demonstration>) -> Result<Self, EvalError> {
        if demos.is_empty() {
            return Err(EvalError::NoDemonstrations);
        }
        for (index, d) in demos.iter().enumerate() {
            if d.extracted_answer.is_none() {
                return Err(EvalError::MissingDemoAnswer { index });
            }
        }
        Ok(Strategy::FewShot(demos))
    }

    pub fn few_shot_cot(demos: Vec<Demonstration>) -> Result<Self, EvalError> {
        if demos.is_empty() {
            return Err(EvalError::NoDemonstrations);
        }
        Ok(Strategy::FewShotCoT(demos))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero-shot",
            Strategy::ZeroShotCoT => "zero-shot-cot",
            Strategy::FewShot(_) => "few-shot",
            Strategy::FewShotCoT(_) => "few-shot-cot",
        }
    }
}

/// Either a single request, or a reasoning request whose output feeds a
/// second answer-extraction request.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptPlan {
    Single(ChatRequest),
    TwoStage(ChatRequest),
}

/// Build the inference prompt(s) for one question under a strategy.
pub fn build_inference_prompt(
    strategy: &Strategy,
    record: &QuestionRecord,
    template: &RequestTemplate,
) -> PromptPlan {
    match strategy {
        Strategy::ZeroShot => {
            PromptPlan::Single(template.user_request(format!(
                "Q: {}\nA: The answer is",
                record.question
            )))
        }
        Strategy::ZeroShotCoT => {
            PromptPlan::TwoStage(template.user_request(format!(
                "Q: {}\nA: Let's think step by step.",
                record.question
            )))
        }
        Strategy::FewShotCoT(demos) => {
            let mut prompt = String::new();
            for demo in demos {
                prompt.push_str(&demo_block(demo));
            }
            prompt.push_str(&format!(
                "Q: {}\nA: Let's think step by step.",
                record.question
            ));
            PromptPlan::Single(template.user_request(prompt))
        }
        Strategy::FewShot(demos) => {
            let mut prompt = String::new();
            for demo in demos {
                let answer = demo.extracted_answer.as_deref().unwrap_or_default();
                prompt.push_str(&format!(
                    "Q: {}\nA: The answer is {}.\n\n",
                    demo.question, answer
                ));
            }
            prompt.push_str(&format!("Q: {}\nA:", record.question));
            PromptPlan::Single(template.user_request(prompt))
        }
    }
}

/// Second stage of the two-stage protocol: append the reasoning output to
/// the first prompt and ask for the answer.
pub fn build_extraction_followup(
    stage1: &ChatRequest,
    stage1_output: &str,
    template: &RequestTemplate,
) -> ChatRequest {
    let stage1_text = &stage1.messages[0].content;
    template.user_request(format!(
        "{} {}\nTherefore, the answer is",
        stage1_text,
        stage1_output.trim()
    ))
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

static NUMBER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"-?(?:\d+(?:\.\d+)?|\.\d+)").expect("number regex compiles"));
static YESNO_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("yes/no regex compiles"));
static QUOTED_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r#""([^"]+)""#).expect("quote regex compiles"));

/// Extract the final answer from a completion, per answer type. Total: a
/// completion that matches no pattern yields `None` (counted incorrect),
/// never an error.
pub fn extract_answer(completion: &str, answer_type: &AnswerType) -> Option<String> {
    match answer_type {
        AnswerType::Numeral => {
            let cleaned: String = completion
                .chars()
                .filter(|c| *c != '$' && *c != ',')
                .collect();
            NUMBER_RE
                .find_iter(&cleaned)
                .last()
                .map(|m| normalize_numeral(m.as_str()))
        }
        AnswerType::MultipleChoice { options } => {
            let chars: Vec<char> = completion.chars().collect();
            let mut found = None;
            for (i, &c) in chars.iter().enumerate() {
                if !options.contains(&c) {
                    continue;
                }
                let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
                let next_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
                if prev_ok && next_ok {
                    found = Some(c.to_string());
                }
            }
            found
        }
        AnswerType::YesNo => YESNO_RE
            .find_iter(completion)
            .last()
            .map(|m| m.as_str().to_ascii_lowercase()),
        AnswerType::FreeString => {
            if let Some(m) = QUOTED_RE.captures_iter(completion).last() {
                let inner = m.get(1).expect("group 1").as_str().trim();
                if !inner.is_empty() {
                    return Some(inner.to_string());
                }
            }
            let tail = completion.rsplit(" is ").next()?;
            if tail.len() == completion.len() {
                return None; // no " is " present
            }
            let trimmed = tail
                .trim()
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .trim();
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            }
        }
    }
}

/// Compare an extraction against the normalized gold answer. Numerals also
/// accept parsed-value equality within 1e-6 relative tolerance, absorbing
/// format differences like "15.0" vs "15".
pub fn answers_match(extracted: &str, gold: &str, answer_type: &AnswerType) -> bool {
    let extracted = normalize_answer(extracted, answer_type);
    if extracted == gold {
        return true;
    }
    if let AnswerType::Numeral = answer_type {
        if let (Ok(a), Ok(g)) = (extracted.parse::<f64>(), gold.parse::<f64>()) {
            if a == g {
                return true;
            }
            return (a - g).abs() <= 1e-6 * g.abs();
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub raw_completion: String,
    pub extracted: Option<String>,
    pub gold: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub corpus: String,
    pub per_item: Vec<ItemResult>,
    pub accuracy: f64,
    pub inference_count: u64,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn correct_count(&self) -> usize {
        self.per_item.iter().filter(|i| i.correct).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), EvalError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| EvalError::Io {
            path: path.as_ref().display().to_string(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Items evaluated concurrently (the gateway semaphore still bounds
    /// in-flight requests).
    pub concurrency: usize,
    /// Abort the batch on the first gateway failure instead of recording the
    /// item as incorrect.
    pub strict: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            concurrency: 4,
            strict: false,
        }
    }
}

fn fingerprint(strategy: &Strategy, corpus: &Corpus, template: &RequestTemplate) -> String {
    let demos = match strategy {
        Strategy::FewShot(d) | Strategy::FewShotCoT(d) => d
            .iter()
            .map(|d| {
                serde_json::json!({
                    "question": d.question,
                    "rationale": d.rationale,
                    "answer": d.extracted_answer,
                })
            })
            .collect::<Vec<_>>(),
        _ => Vec::new(),
    };
    content_key(&serde_json::json!({
        "strategy": strategy.name(),
        "demos": demos,
        "model": template.model,
        "temperature": template.temperature,
        "max_tokens": template.max_tokens,
        "corpus": corpus.name,
        "items": corpus.len(),
    }))
}

async fn evaluate_item(
    record: &QuestionRecord,
    strategy: &Strategy,
    gateway: &Gateway,
    template: &RequestTemplate,
) -> Result<ItemResult, GatewayError> {
    let (raw, answer_text) = match build_inference_prompt(strategy, record, template) {
        PromptPlan::Single(req) => {
            let resp = gateway.complete(&req).await?;
            (resp.text.clone(), resp.text)
        }
        PromptPlan::TwoStage(stage1) => {
            let r1 = gateway.complete(&stage1).await?;
            let stage2 = build_extraction_followup(&stage1, &r1.text, template);
            let r2 = gateway.complete(&stage2).await?;
            let transcript = format!(
                "{}\nTherefore, the answer is{}",
                r1.text.trim_end(),
                r2.text
            );
            (transcript, r2.text)
        }
    };
    let extracted = extract_answer(&answer_text, &record.answer_type);
    let correct = extracted
        .as_deref()
        .map(|e| answers_match(e, &record.gold_answer, &record.answer_type))
        .unwrap_or(false);
    Ok(ItemResult {
        id: record.id.clone(),
        raw_completion: raw,
        extracted,
        gold: record.gold_answer.clone(),
        correct,
        error: None,
    })
}

/// Evaluate every record under the strategy. Items run concurrently; the
/// report restores corpus order. Gateway failures mark their item incorrect
/// with an error note unless `strict` is set.
pub async fn evaluate(
    corpus: &Corpus,
    strategy: &Strategy,
    gateway: &Gateway,
    template: &RequestTemplate,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let calls_before = gateway.count_inferences();
    let strict = options.strict;
    let per_item: Vec<ItemResult> = stream::iter(corpus.records())
        .map(|record| async move {
            match evaluate_item(record, strategy, gateway, template).await {
                Ok(item) => Ok(item),
                Err(e) if strict => Err(EvalError::Item {
                    id: record.id.clone(),
                    source: e,
                }),
                Err(e) => Ok(ItemResult {
                    id: record.id.clone(),
                    raw_completion: String::new(),
                    extracted: None,
                    gold: record.gold_answer.clone(),
                    correct: false,
                    error: Some(e.to_string()),
                }),
            }
        })
        .buffered(options.concurrency.max(1))
        .try_collect()
        .await?;
    let correct = per_item.iter().filter(|i| i.correct).count();
    Ok(EvalReport {
        strategy: strategy.name().to_string(),
        corpus: corpus.name.clone(),
        accuracy: correct as f64 / per_item.len() as f64,
        per_item,
        inference_count: gateway.count_inferences() - calls_before,
        config_fingerprint: fingerprint(strategy, corpus, template),
    })
}
