//! Demonstration sampling: one Zero-shot-CoT demonstration per cluster,
//! filtered by the selection criteria (question length and rationale step
//! count), under three selection strategies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

use crate::clustering::OrderedCluster;
use crate::corpus::{Corpus, QuestionRecord};
use crate::evaluator::extract_answer;
use crate::gateway::{Gateway, GatewayError, RequestTemplate};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("model returned an empty rationale for record {id:?}")]
    EmptyRationale { id: String },
    #[error("no qualifying candidate in cluster {cluster}")]
    NoQualifyingCandidate { cluster: usize },
    #[error("needed {wanted} qualifying demonstrations, found {found}")]
    InsufficientCandidates { wanted: usize, found: usize },
    #[error("unknown tokenizer {name:?}")]
    UnknownTokenizer { name: String },
    #[error("centroid strategy requires k == cluster count ({clusters}), got k={k}")]
    ClusterCountMismatch { k: usize, clusters: usize },
    #[error("cluster {cluster} references unknown record {id:?}")]
    UnknownRecord { cluster: usize, id: String },
    #[error("demonstrations file {path}: {detail}")]
    File { path: String, detail: String },
}

/// How a demonstration's rationale came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generation {
    ZeroShotCoT,
    Manual,
    Harmonized(u32),
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generation::ZeroShotCoT => f.write_str("zero-shot-cot"),
            Generation::Manual => f.write_str("manual"),
            Generation::Harmonized(i) => write!(f, "harmonized:{i}"),
        }
    }
}

impl FromStr for Generation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot-cot" => Ok(Generation::ZeroShotCoT),
            "manual" => Ok(Generation::Manual),
            other => match other.strip_prefix("harmonized:") {
                Some(n) => n
                    .parse::<u32>()
                    .map(Generation::Harmonized)
                    .map_err(|_| format!("bad harmonized iteration in {other:?}")),
                None => Err(format!("unknown generation tag {other:?}")),
            },
        }
    }
}

impl Serialize for Generation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Generation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a demonstration came from: its cluster and source record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoOrigin {
    pub cluster_index: usize,
    pub record_id: String,
}

/// A question paired with its rationale — the unit the harmonizer rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    pub origin: DemoOrigin,
    pub generation: Generation,
}

/// The two filters a sampled demonstration must pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCriteria {
    pub max_question_tokens: usize,
    pub max_rationale_steps: usize,
    pub tokenizer: Tokenizer,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        SelectionCriteria {
            max_question_tokens: 60,
            max_rationale_steps: 5,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tokenizer {
    Whitespace,
    Custom(String),
}

/// How candidate records are drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SelectionStrategy {
    /// One demonstration per cluster, walking members nearest-first.
    Centroid,
    /// Seeded corpus-wide shuffle, first k qualifying records.
    Random { seed: u64 },
    /// All demonstrations from a single cluster's ordering.
    SameCluster { cluster_index: usize },
}

/// Number of step separators (newlines) in a rationale. Consecutive
/// separators both count.
pub fn count_steps(rationale: &str) -> usize {
    rationale.matches('\n').count()
}

/// Token count of a question under the criteria's tokenizer.
pub fn question_token_count(
    question: &str,
    criteria: &SelectionCriteria,
) -> Result<usize, SamplingError> {
    match &criteria.tokenizer {
        Tokenizer::Whitespace => Ok(question.split_whitespace().count()),
        Tokenizer::Custom(name) if name == "whitespace" => {
            Ok(question.split_whitespace().count())
        }
        Tokenizer::Custom(name) => Err(SamplingError::UnknownTokenizer { name: name.clone() }),
    }
}

/// The Zero-shot-CoT trigger prompt for a question.
pub fn zero_shot_prompt(question: &str) -> String {
    format!("Q: {question}\nA: Let's think step by step.")
}

/// Generate a rationale for a record via the bare Zero-shot-CoT trigger.
/// The completion is kept verbatim apart from a trailing-whitespace trim.
pub async fn generate_zero_shot_rationale(
    record: &QuestionRecord,
    gateway: &Gateway,
    template: &RequestTemplate,
) -> Result<String, SamplingError> {
    let req = template.user_request(zero_shot_prompt(&record.question));
    let resp = gateway.complete(&req).await?;
    let rationale = resp.text.trim_end().to_string();
    if rationale.is_empty() {
        return Err(SamplingError::EmptyRationale {
            id: record.id.clone(),
        });
    }
    Ok(rationale)
}

/// Check a candidate against the criteria, generating its rationale only if
/// the (cheap) question-token check passes. Returns the accepted
/// demonstration or None if either criterion fails.
async fn try_candidate(
    record: &QuestionRecord,
    cluster_index: usize,
    criteria: &SelectionCriteria,
    gateway: &Gateway,
    template: &RequestTemplate,
) -> Result<Option<Demonstration>, SamplingError> {
    if question_token_count(&record.question, criteria)? > criteria.max_question_tokens {
        return Ok(None);
    }
    let rationale = generate_zero_shot_rationale(record, gateway, template).await?;
    if count_steps(&rationale) > criteria.max_rationale_steps {
        return Ok(None);
    }
    let extracted = extract_answer(&rationale, &record.answer_type);
    Ok(Some(Demonstration {
        question: record.question.clone(),
        rationale,
        extracted_answer: extracted,
        origin: DemoOrigin {
            cluster_index,
            record_id: record.id.clone(),
        },
        generation: Generation::ZeroShotCoT,
    }))
}

/// Sample k demonstrations under the given strategy. Centroid emits exactly
/// one demonstration per cluster, in ascending cluster order; Random emits in
/// draw order; SameCluster walks a single cluster's ordering.
pub async fn sample_demonstrations(
    clusters: &[OrderedCluster],
    corpus: &Corpus,
    criteria: &SelectionCriteria,
    strategy: &SelectionStrategy,
    gateway: &Gateway,
    template: &RequestTemplate,
    k: usize,
) -> Result<Vec<Demonstration>, SamplingError> {
    let by_id: BTreeMap<&str, &QuestionRecord> = corpus
        .records()
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let cluster_of: BTreeMap<&str, usize> = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |(id, _)| (id.as_str(), c.cluster_index)))
        .collect();
    let lookup = |cluster: usize, id: &str| -> Result<&QuestionRecord, SamplingError> {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| SamplingError::UnknownRecord {
                cluster,
                id: id.to_string(),
            })
    };

    match strategy {
        SelectionStrategy::Centroid => {
            if k != clusters.len() {
                return Err(SamplingError::ClusterCountMismatch {
                    k,
                    clusters: clusters.len(),
                });
            }
            let lookup = &lookup;
            let walks = clusters.iter().map(|cluster| async move {
                for (id, _) in &cluster.members {
                    let record = lookup(cluster.cluster_index, id)?;
                    if let Some(demo) =
                        try_candidate(record, cluster.cluster_index, criteria, gateway, template)
                            .await?
                    {
                        return Ok(demo);
                    }
                }
                Err(SamplingError::NoQualifyingCandidate {
                    cluster: cluster.cluster_index,
                })
            });
            futures::future::try_join_all(walks).await
        }
        SelectionStrategy::Random { seed } => {
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            fisher_yates(&mut order, &mut rng);
            let mut demos = Vec::with_capacity(k);
            for i in order {
                if demos.len() == k {
                    break;
                }
                let record = &corpus.records()[i];
                let cluster = cluster_of.get(record.id.as_str()).copied().unwrap_or(0);
                if let Some(demo) =
                    try_candidate(record, cluster, criteria, gateway, template).await?
                {
                    demos.push(demo);
                }
            }
            if demos.len() < k {
                return Err(SamplingError::InsufficientCandidates {
                    wanted: k,
                    found: demos.len(),
                });
            }
            Ok(demos)
        }
        SelectionStrategy::SameCluster { cluster_index } => {
            let cluster = clusters
                .iter()
                .find(|c| c.cluster_index == *cluster_index)
                .ok_or(SamplingError::NoQualifyingCandidate {
                    cluster: *cluster_index,
                })?;
            let mut demos = Vec::with_capacity(k);
            for (id, _) in &cluster.members {
                if demos.len() == k {
                    break;
                }
                let record = lookup(*cluster_index, id)?;
                if let Some(demo) =
                    try_candidate(record, *cluster_index, criteria, gateway, template).await?
                {
                    demos.push(demo);
                }
            }
            if demos.len() < k {
                return Err(SamplingError::InsufficientCandidates {
                    wanted: k,
                    found: demos.len(),
                });
            }
            Ok(demos)
        }
    }
}

/// In-place seeded shuffle. Hand-rolled so the permutation never shifts
/// under dependency upgrades.
pub(crate) fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Demonstrations file format: one JSON record per line
// ---------------------------------------------------------------------------

pub fn save_demonstrations(
    demos: &[Demonstration],
    path: impl AsRef<Path>,
) -> Result<(), SamplingError> {
    let mut out = String::new();
    for demo in demos {
        out.push_str(&serde_json::to_string(demo).expect("demonstration serializes"));
        out.push('\n');
    }
    fs::write(path.as_ref(), out).map_err(|e| SamplingError::File {
        path: path.as_ref().display().to_string(),
        detail: e.to_string(),
    })
}

pub fn load_demonstrations(path: impl AsRef<Path>) -> Result<Vec<Demonstration>, SamplingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SamplingError::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut demos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(line).map_err(|e| SamplingError::File {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        if demo.question.trim().is_empty() || demo.rationale.trim().is_empty() {
            return Err(SamplingError::File {
                path: path.display().to_string(),
                detail: format!("line {}: empty question or rationale", i + 1),
            });
        }
        demos.push(demo);
    }
    if demos.is_empty() {
        return Err(SamplingError::File {
            path: path.display().to_string(),
            detail: "empty demonstrations file".into(),
        });
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnswerType;
    use crate::gateway::MockModel;

    fn record(id: &str, question: &str) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            question: question.into(),
            gold_answer: "1".into(),
            answer_type: AnswerType::Numeral,
            source_dataset: "test".into(),
        }
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn step_counting_tallies_newline_separators() {
        assert_eq!(count_steps("a\nb\nc"), 2);
        assert_eq!(count_steps("single line"), 0);
        assert_eq!(count_steps("x\n\ny"), 2);
        assert_eq!(count_steps(""), 0);
    }

    #[test]
    fn whitespace_token_counts() {
        let criteria = SelectionCriteria::default();
        assert_eq!(question_token_count("How many apples?", &criteria).unwrap(), 3);
        assert_eq!(question_token_count("", &criteria).unwrap(), 0);
        assert_eq!(question_token_count(&words(61), &criteria).unwrap(), 61);
        assert!(question_token_count(&words(61), &criteria).unwrap() > criteria.max_question_tokens);
        assert_eq!(question_token_count(&words(60), &criteria).unwrap(), 60);
    }

    #[test]
    fn unknown_custom_tokenizer_is_an_error() {
        let criteria = SelectionCriteria {
            tokenizer: Tokenizer::Custom("bpe-8k".into()),
            ..SelectionCriteria::default()
        };
        assert!(matches!(
            question_token_count("q", &criteria),
            Err(SamplingError::UnknownTokenizer { .. })
        ));
    }

    #[tokio::test]
    async fn zero_shot_prompt_is_bit_exact() {
        let captured = std::sync::Arc::new(std::sync::Mutex::new(String::new()));
        let captured_clone = captured.clone();
        let gw = Gateway::mock(MockModel::from_fn(move |req| {
            *captured_clone.lock().unwrap() = req.messages[0].content.clone();
            "First, 2+2=4.".to_string()
        }));
        let template = RequestTemplate::new("m");
        let rec = record("r1", "Sam had 9 dimes in his bank. His dad gave him 7 more dimes. How many dimes does Sam have now?");
        let rationale = generate_zero_shot_rationale(&rec, &gw, &template)
            .await
            .unwrap();
        assert_eq!(rationale, "First, 2+2=4.");
        let prompt = captured.lock().unwrap().clone();
        assert!(prompt.starts_with("Q: Sam had 9 dimes"));
        assert!(prompt.ends_with("Let's think step by step."));
        assert_eq!(
            prompt,
            format!("Q: {}\nA: Let's think step by step.", rec.question)
        );
    }

    #[tokio::test]
    async fn empty_completion_is_an_error() {
        let gw = Gateway::mock(MockModel::constant("   \n "));
        let template = RequestTemplate::new("m");
        let err = generate_zero_shot_rationale(&record("r1", "q?"), &gw, &template)
            .await
            .unwrap_err();
        assert!(matches!(err, SamplingError::EmptyRationale { .. }));
    }

    fn fixture_corpus_and_clusters() -> (Corpus, Vec<OrderedCluster>) {
        let corpus = Corpus::new(
            "fixture",
            vec![
                record("c0-long", &format!("{}?", words(61))),
                record("c0-ok", "Five plus four?"),
                record("c1-ok", "Two plus two?"),
            ],
        )
        .unwrap();
        let clusters = vec![
            OrderedCluster {
                cluster_index: 0,
                members: vec![("c0-long".into(), 0.1), ("c0-ok".into(), 0.2)],
            },
            OrderedCluster {
                cluster_index: 1,
                members: vec![("c1-ok".into(), 0.0)],
            },
        ];
        (corpus, clusters)
    }

    #[tokio::test]
    async fn overlong_question_falls_through_to_next_member() {
        let (corpus, clusters) = fixture_corpus_and_clusters();
        let gw = Gateway::mock(MockModel::constant("Add them.\nThe answer is 9."));
        let template = RequestTemplate::new("m");
        let demos = sample_demonstrations(
            &clusters,
            &corpus,
            &SelectionCriteria::default(),
            &SelectionStrategy::Centroid,
            &gw,
            &template,
            2,
        )
        .await
        .unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[0].origin.record_id, "c0-ok");
        assert_eq!(demos[0].origin.cluster_index, 0);
        assert_eq!(demos[1].origin.record_id, "c1-ok");
        // The 61-token question never reached the model.
        assert_eq!(gw.count_inferences(), 2);
    }

    #[tokio::test]
    async fn six_step_rationales_disqualify_the_cluster() {
        let (corpus, clusters) = fixture_corpus_and_clusters();
        let gw = Gateway::mock(MockModel::constant("a\nb\nc\nd\ne\nf\ng"));
        let template = RequestTemplate::new("m");
        let err = sample_demonstrations(
            &clusters,
            &corpus,
            &SelectionCriteria::default(),
            &SelectionStrategy::Centroid,
            &gw,
            &template,
            2,
        )
        .await
        .unwrap_err();
        match err {
            SamplingError::NoQualifyingCandidate { cluster } => assert_eq!(cluster, 0),
            other => panic!("expected NoQualifyingCandidate, got {other:?}"),
        }
    }

    #[tokio::test]
    async fn emitted_demonstrations_always_satisfy_the_criteria() {
        let (corpus, clusters) = fixture_corpus_and_clusters();
        let gw = Gateway::mock(MockModel::constant("one\ntwo\nthree"));
        let template = RequestTemplate::new("m");
        let criteria = SelectionCriteria::default();
        let demos = sample_demonstrations(
            &clusters,
            &corpus,
            &criteria,
            &SelectionStrategy::Centroid,
            &gw,
            &template,
            2,
        )
        .await
        .unwrap();
        for demo in &demos {
            assert!(
                question_token_count(&demo.question, &criteria).unwrap()
                    <= criteria.max_question_tokens
            );
            assert!(count_steps(&demo.rationale) <= criteria.max_rationale_steps);
        }
        // Centroid strategy: one demo per cluster, distinct origins.
        let origins: Vec<usize> = demos.iter().map(|d| d.origin.cluster_index).collect();
        assert_eq!(origins, vec![0, 1]);
    }

    #[tokio::test]
    async fn random_strategy_is_seed_deterministic() {
        let (corpus, clusters) = fixture_corpus_and_clusters();
        let template = RequestTemplate::new("m");
        let strategy = SelectionStrategy::Random { seed: 99 };
        let run = |_: ()| async {
            let gw = Gateway::mock(MockModel::constant("ok"));
            sample_demonstrations(
                &clusters,
                &corpus,
                &SelectionCriteria::default(),
                &strategy,
                &gw,
                &template,
                2,
            )
            .await
            .unwrap()
        };
        let a = run(()).await;
        let b = run(()).await;
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[tokio::test]
    async fn same_cluster_strategy_stays_in_the_target_cluster() {
        let (corpus, clusters) = fixture_corpus_and_clusters();
        let gw = Gateway::mock(MockModel::constant("ok"));
        let template = RequestTemplate::new("m");
        let demos = sample_demonstrations(
            &clusters,
            &corpus,
            &SelectionCriteria::default(),
            &SelectionStrategy::SameCluster { cluster_index: 0 },
            &gw,
            &template,
            1,
        )
        .await
        .unwrap();
        assert_eq!(demos.len(), 1);
        assert_eq!(demos[0].origin.cluster_index, 0);
        assert_eq!(demos[0].origin.record_id, "c0-ok");
    }

    #[test]
    fn demonstrations_file_round_trips() {
        let demos = vec![Demonstration {
            question: "Two plus two?".into(),
            rationale: "2 + 2 = 4.".into(),
            extracted_answer: Some("4".into()),
            origin: DemoOrigin {
                cluster_index: 3,
                record_id: "x".into(),
            },
            generation: Generation::Harmonized(2),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demonstrations(&demos, &path).unwrap();
        let loaded = load_demonstrations(&path).unwrap();
        assert_eq!(loaded, demos);
    }

    #[test]
    fn generation_tag_round_trips_as_string() {
        for tag in [
            Generation::ZeroShotCoT,
            Generation::Manual,
            Generation::Harmonized(7),
        ] {
            let s = tag.to_string();
            assert_eq!(s.parse::<Generation>().unwrap(), tag);
        }
        assert!("harmonic".parse::<Generation>().is_err());
    }
}
