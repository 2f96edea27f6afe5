//! Benchmark ingestion: a uniform question-record stream with validated
//! answer-type semantics.
//!
//! Native benchmark files are converted once at ingest into the canonical
//! interchange format — UTF-8, one JSON record per line with fields
//! `id`, `question`, `answer`, `type` (plus `options` for multiple choice
//! and `source` for provenance). Gold answers are normalized at load so
//! later extraction comparisons can be string-equal.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown dataset kind {given:?}; supported kinds: {supported}")]
    UnknownKind { given: String, supported: String },
    #[error("empty corpus")]
    Empty,
    #[error("malformed record at line {line}, field {field:?}: {detail}")]
    Malformed {
        line: usize,
        field: String,
        detail: String,
    },
    #[error("record {id:?}: {detail}")]
    InvalidRecord { id: String, detail: String },
    #[error("duplicate record id {id:?}")]
    DuplicateId { id: String },
}

/// The answer-type semantics a gold answer (and model extraction) must obey.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerType {
    Numeral,
    MultipleChoice { options: Vec<char> },
    YesNo,
    FreeString,
}

impl AnswerType {
    pub fn multiple_choice(options: Vec<char>) -> Result<Self, CorpusError> {
        if options.is_empty() {
            return Err(CorpusError::InvalidRecord {
                id: String::new(),
                detail: "multiple-choice option set is empty".into(),
            });
        }
        let mut seen = HashSet::new();
        for &label in &options {
            if !label.is_ascii_uppercase() {
                return Err(CorpusError::InvalidRecord {
                    id: String::new(),
                    detail: format!("option label {label:?} is not a single uppercase letter"),
                });
            }
            if !seen.insert(label) {
                return Err(CorpusError::InvalidRecord {
                    id: String::new(),
                    detail: format!("duplicate option label {label:?}"),
                });
            }
        }
        Ok(AnswerType::MultipleChoice { options })
    }

    fn label(&self) -> &'static str {
        match self {
            AnswerType::Numeral => "numeral",
            AnswerType::MultipleChoice { .. } => "multiple_choice",
            AnswerType::YesNo => "yes_no",
            AnswerType::FreeString => "string",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub answer_type: AnswerType,
    pub source_dataset: String,
}

/// An ordered, validated set of question records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    records: Vec<QuestionRecord>,
}

impl Corpus {
    /// Validates every record: non-empty question, normalized gold answer
    /// conforming to its answer type, unique ids, non-empty record list.
    pub fn new(name: impl Into<String>, records: Vec<QuestionRecord>) -> Result<Self, CorpusError> {
        if records.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut ids = HashSet::new();
        for rec in &records {
            validate_record(rec)?;
            if !ids.insert(rec.id.clone()) {
                return Err(CorpusError::DuplicateId { id: rec.id.clone() });
            }
        }
        Ok(Corpus {
            name: name.into(),
            records,
        })
    }

    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QuestionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Canonical serialization: one JSON record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            let wire = WireRecord::from(rec);
            out.push_str(&serde_json::to_string(&wire).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path.as_ref(), self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

fn validate_record(rec: &QuestionRecord) -> Result<(), CorpusError> {
    let err = |detail: String| CorpusError::InvalidRecord {
        id: rec.id.clone(),
        detail,
    };
    if rec.id.is_empty() {
        return Err(err("empty id".into()));
    }
    if rec.question.trim().is_empty() {
        return Err(err("empty question".into()));
    }
    match &rec.answer_type {
        AnswerType::Numeral => {
            if rec.gold_answer.parse::<f64>().is_err() {
                return Err(err(format!(
                    "gold answer {:?} is not a parseable number",
                    rec.gold_answer
                )));
            }
        }
        AnswerType::MultipleChoice { options } => {
            let mut chars = rec.gold_answer.chars();
            let label = chars.next();
            if chars.next().is_some() || label.is_none_or(|c| !options.contains(&c)) {
                return Err(err(format!(
                    "gold answer {:?} is not one of the declared labels {:?}",
                    rec.gold_answer, options
                )));
            }
        }
        AnswerType::YesNo => {
            if rec.gold_answer != "yes" && rec.gold_answer != "no" {
                return Err(err(format!(
                    "gold answer {:?} is not \"yes\" or \"no\"",
                    rec.gold_answer
                )));
            }
        }
        AnswerType::FreeString => {
            if rec.gold_answer.trim().is_empty() {
                return Err(err("empty gold answer".into()));
            }
        }
    }
    Ok(())
}

/// Normalize a raw gold answer (or extracted answer) to the canonical form
/// for its answer type. Idempotent: normalizing twice equals normalizing once.
pub fn normalize_answer(raw: &str, answer_type: &AnswerType) -> String {
    match answer_type {
        AnswerType::Numeral => normalize_numeral(raw),
        AnswerType::MultipleChoice { .. } => raw
            .trim()
            .trim_start_matches('(')
            .trim_end_matches('.')
            .trim_end_matches(')')
            .trim()
            .to_ascii_uppercase(),
        AnswerType::YesNo => raw.trim().trim_end_matches('.').to_ascii_lowercase(),
        AnswerType::FreeString => raw.trim().to_string(),
    }
}

/// Strip currency symbols and thousands separators, drop a leading `+` and
/// trailing `.`; keep the sign and the decimal point.
pub fn normalize_numeral(raw: &str) -> String {
    let stripped: String = raw
        .trim()
        .chars()
        .filter(|c| *c != '$' && *c != ',')
        .collect();
    let stripped = stripped.trim().trim_start_matches('+');
    stripped.trim_end_matches('.').to_string()
}

// ---------------------------------------------------------------------------
// Canonical wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WireRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    question: String,
    answer: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

impl From<&QuestionRecord> for WireRecord {
    fn from(rec: &QuestionRecord) -> Self {
        let options = match &rec.answer_type {
            AnswerType::MultipleChoice { options } => {
                Some(options.iter().map(|c| c.to_string()).collect())
            }
            _ => None,
        };
        WireRecord {
            id: Some(rec.id.clone()),
            question: rec.question.clone(),
            answer: rec.gold_answer.clone(),
            kind: rec.answer_type.label().to_string(),
            options,
            source: Some(rec.source_dataset.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset kinds and loading
// ---------------------------------------------------------------------------

/// The supported benchmark formats plus the canonical `generic` format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    SingleEq,
    AddSub,
    MultiArith,
    Gsm8k,
    Aqua,
    Svamp,
    Csqa,
    StrategyQa,
    LastLetters,
    CoinFlip,
    Generic,
}

pub const SUPPORTED_KINDS: &[&str] = &[
    "singleeq",
    "addsub",
    "multiarith",
    "gsm8k",
    "aqua",
    "svamp",
    "csqa",
    "strategyqa",
    "letter",
    "coin",
    "generic",
];

impl DatasetKind {
    pub fn label(&self) -> &'static str {
        match self {
            DatasetKind::SingleEq => "singleeq",
            DatasetKind::AddSub => "addsub",
            DatasetKind::MultiArith => "multiarith",
            DatasetKind::Gsm8k => "gsm8k",
            DatasetKind::Aqua => "aqua",
            DatasetKind::Svamp => "svamp",
            DatasetKind::Csqa => "csqa",
            DatasetKind::StrategyQa => "strategyqa",
            DatasetKind::LastLetters => "letter",
            DatasetKind::CoinFlip => "coin",
            DatasetKind::Generic => "generic",
        }
    }

    /// Published test-split sizes, used by callers to sanity-check ingests.
    pub fn expected_test_size(&self) -> Option<usize> {
        match self {
            DatasetKind::SingleEq => Some(508),
            DatasetKind::AddSub => Some(395),
            DatasetKind::MultiArith => Some(600),
            DatasetKind::Gsm8k => Some(1319),
            DatasetKind::Aqua => Some(254),
            DatasetKind::Svamp => Some(1000),
            DatasetKind::Csqa => Some(1221),
            DatasetKind::StrategyQa => Some(2290),
            DatasetKind::LastLetters => Some(254),
            DatasetKind::CoinFlip => Some(1000),
            DatasetKind::Generic => None,
        }
    }

    /// Default demonstration count for the dataset.
    pub fn default_demo_count(&self) -> usize {
        match self {
            DatasetKind::Aqua | DatasetKind::CoinFlip | DatasetKind::LastLetters => 4,
            DatasetKind::StrategyQa => 6,
            DatasetKind::Csqa => 7,
            _ => 8,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DatasetKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "singleeq" | "single_eq" => Ok(DatasetKind::SingleEq),
            "addsub" | "add_sub" => Ok(DatasetKind::AddSub),
            "multiarith" | "multi_arith" => Ok(DatasetKind::MultiArith),
            "gsm8k" => Ok(DatasetKind::Gsm8k),
            "aqua" | "aqua_rat" => Ok(DatasetKind::Aqua),
            "svamp" => Ok(DatasetKind::Svamp),
            "csqa" | "commonsenseqa" => Ok(DatasetKind::Csqa),
            "strategyqa" | "strategy_qa" => Ok(DatasetKind::StrategyQa),
            "letter" | "last_letters" | "lastletters" => Ok(DatasetKind::LastLetters),
            "coin" | "coin_flip" | "coinflip" => Ok(DatasetKind::CoinFlip),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(CorpusError::UnknownKind {
                given: other.to_string(),
                supported: SUPPORTED_KINDS.join(", "),
            }),
        }
    }
}

/// Load a benchmark file and convert it into a validated, normalized corpus.
pub fn load_corpus(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(CorpusError::Empty);
    }
    let records = match kind {
        DatasetKind::Generic => parse_generic(&text)?,
        DatasetKind::Gsm8k => parse_gsm8k(&text)?,
        DatasetKind::Aqua => parse_aqua(&text)?,
        DatasetKind::Csqa => parse_csqa(&text)?,
        DatasetKind::Svamp => parse_svamp(&text)?,
        DatasetKind::SingleEq | DatasetKind::AddSub | DatasetKind::MultiArith => {
            parse_math_json(&text, kind)?
        }
        DatasetKind::StrategyQa => parse_strategyqa(&text)?,
        DatasetKind::LastLetters => parse_examples_json(&text, kind, AnswerType::FreeString)?,
        DatasetKind::CoinFlip => parse_examples_json(&text, kind, AnswerType::YesNo)?,
    };
    let name = match kind {
        DatasetKind::Generic => {
            let mut sources: Vec<&str> = records.iter().map(|r| r.source_dataset.as_str()).collect();
            sources.dedup();
            if sources.len() == 1 {
                sources[0].to_string()
            } else {
                "generic".to_string()
            }
        }
        other => other.label().to_string(),
    };
    Corpus::new(name, records)
}

/// Merge two corpora. Record order is `a` then `b`; id collisions are
/// resolved by prefixing the colliding ids with their source dataset.
pub fn merge_corpora(a: &Corpus, b: &Corpus) -> Result<Corpus, CorpusError> {
    let ids_a: HashSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    let mut merged = a.records.clone();
    for rec in &b.records {
        let mut rec = rec.clone();
        if ids_a.contains(rec.id.as_str()) {
            // Disambiguate both sides of the collision.
            let idx = merged
                .iter()
                .position(|r| r.id == rec.id)
                .expect("collision partner present");
            let partner = &mut merged[idx];
            partner.id = format!("{}:{}", partner.source_dataset, partner.id);
            rec.id = format!("{}:{}", rec.source_dataset, rec.id);
        }
        merged.push(rec);
    }
    Corpus::new(format!("{}+{}", a.name, b.name), merged)
}

// ---------------------------------------------------------------------------
// Format adapters
// ---------------------------------------------------------------------------

fn json_line(line: &str, line_no: usize) -> Result<serde_json::Value, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        line: line_no,
        field: "<record>".into(),
        detail: e.to_string(),
    })
}

fn field_str<'a>(
    value: &'a serde_json::Value,
    field: &str,
    line_no: usize,
) -> Result<&'a str, CorpusError> {
    value
        .get(field)
        .and_then(|v| v.as_str())
        .ok_or_else(|| CorpusError::Malformed {
            line: line_no,
            field: field.to_string(),
            detail: "missing or not a string".into(),
        })
}

fn parse_generic(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            field: "<record>".into(),
            detail: e.to_string(),
        })?;
        let answer_type = match wire.kind.as_str() {
            "numeral" => AnswerType::Numeral,
            "multiple_choice" => {
                let opts = wire.options.clone().unwrap_or_else(|| {
                    vec!["A".into(), "B".into(), "C".into(), "D".into(), "E".into()]
                });
                let labels: Result<Vec<char>, _> = opts
                    .iter()
                    .map(|s| {
                        let mut cs = s.chars();
                        match (cs.next(), cs.next()) {
                            (Some(c), None) => Ok(c),
                            _ => Err(CorpusError::Malformed {
                                line: line_no,
                                field: "options".into(),
                                detail: format!("label {s:?} is not a single letter"),
                            }),
                        }
                    })
                    .collect();
                AnswerType::multiple_choice(labels?).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    field: "options".into(),
                    detail: e.to_string(),
                })?
            }
            "yes_no" => AnswerType::YesNo,
            "string" => AnswerType::FreeString,
            other => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    field: "type".into(),
                    detail: format!(
                        "unknown answer type {other:?} (expected numeral, multiple_choice, yes_no, or string)"
                    ),
                })
            }
        };
        let source = wire.source.unwrap_or_else(|| "generic".to_string());
        records.push(QuestionRecord {
            id: wire.id.unwrap_or_else(|| format!("{source}-{line_no:05}")),
            question: wire.question,
            gold_answer: normalize_answer(&wire.answer, &answer_type),
            answer_type,
            source_dataset: source,
        });
    }
    Ok(records)
}

fn parse_gsm8k(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v = json_line(line, line_no)?;
        let question = field_str(&v, "question", line_no)?.trim().to_string();
        let answer = field_str(&v, "answer", line_no)?;
        let gold = answer
            .rsplit("#### ")
            .next()
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "answer".into(),
                detail: "missing #### answer marker".into(),
            })?
            .trim();
        records.push(QuestionRecord {
            id: format!("gsm8k-{line_no:05}"),
            question,
            gold_answer: normalize_numeral(gold),
            answer_type: AnswerType::Numeral,
            source_dataset: "gsm8k".into(),
        });
    }
    Ok(records)
}

fn parse_aqua(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v = json_line(line, line_no)?;
        let stem = field_str(&v, "question", line_no)?.trim();
        let options = v
            .get("options")
            .and_then(|o| o.as_array())
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "options".into(),
                detail: "missing or not an array".into(),
            })?;
        // Options arrive as "A)text"; the full option list is folded into the
        // question text because it is part of what the model sees.
        let mut labels = Vec::new();
        let mut rendered = String::from(" Answer Choices:");
        for opt in options {
            let s = opt.as_str().ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "options".into(),
                detail: "option is not a string".into(),
            })?;
            let (label, body) = s.split_once(')').ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "options".into(),
                detail: format!("option {s:?} missing ')' separator"),
            })?;
            let label_char = label.trim().chars().next().ok_or_else(|| {
                CorpusError::Malformed {
                    line: line_no,
                    field: "options".into(),
                    detail: format!("option {s:?} has an empty label"),
                }
            })?;
            labels.push(label_char.to_ascii_uppercase());
            rendered.push_str(&format!(" ({}) {}", label_char.to_ascii_uppercase(), body.trim()));
        }
        let answer_type =
            AnswerType::multiple_choice(labels).map_err(|e| CorpusError::Malformed {
                line: line_no,
                field: "options".into(),
                detail: e.to_string(),
            })?;
        let correct = field_str(&v, "correct", line_no)?;
        records.push(QuestionRecord {
            id: format!("aqua-{line_no:05}"),
            question: format!("{stem}{rendered}"),
            gold_answer: normalize_answer(correct, &answer_type),
            answer_type,
            source_dataset: "aqua".into(),
        });
    }
    Ok(records)
}

fn parse_csqa(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v = json_line(line, line_no)?;
        let q = v.get("question").ok_or_else(|| CorpusError::Malformed {
            line: line_no,
            field: "question".into(),
            detail: "missing".into(),
        })?;
        let stem = field_str(q, "stem", line_no)?.trim();
        let choices = q
            .get("choices")
            .and_then(|c| c.as_array())
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "question.choices".into(),
                detail: "missing or not an array".into(),
            })?;
        let mut labels = Vec::new();
        let mut rendered = String::from(" Answer Choices:");
        for choice in choices {
            let label = field_str(choice, "label", line_no)?;
            let body = field_str(choice, "text", line_no)?;
            let label_char = label.trim().chars().next().ok_or_else(|| {
                CorpusError::Malformed {
                    line: line_no,
                    field: "question.choices".into(),
                    detail: "empty choice label".into(),
                }
            })?;
            labels.push(label_char.to_ascii_uppercase());
            rendered.push_str(&format!(" ({}) {}", label_char.to_ascii_uppercase(), body.trim()));
        }
        let answer_type =
            AnswerType::multiple_choice(labels).map_err(|e| CorpusError::Malformed {
                line: line_no,
                field: "question.choices".into(),
                detail: e.to_string(),
            })?;
        let key = field_str(&v, "answerKey", line_no)?;
        records.push(QuestionRecord {
            id: format!("csqa-{line_no:05}"),
            question: format!("{stem}{rendered}"),
            gold_answer: normalize_answer(key, &answer_type),
            answer_type,
            source_dataset: "csqa".into(),
        });
    }
    Ok(records)
}

fn top_level_array(text: &str) -> Result<Vec<serde_json::Value>, CorpusError> {
    serde_json::from_str::<Vec<serde_json::Value>>(text).map_err(|e| CorpusError::Malformed {
        line: 1,
        field: "<file>".into(),
        detail: format!("expected a top-level JSON array: {e}"),
    })
}

/// Render an answer float the way benchmark golds are written: integral
/// values without the decimal part.
fn format_gold_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn parse_math_json(text: &str, kind: DatasetKind) -> Result<Vec<QuestionRecord>, CorpusError> {
    let items = top_level_array(text)?;
    let mut records = Vec::new();
    for (i, v) in items.iter().enumerate() {
        let line_no = i + 1;
        let question = field_str(v, "sQuestion", line_no)?.trim().to_string();
        let solutions = v
            .get("lSolutions")
            .and_then(|s| s.as_array())
            .and_then(|s| s.first())
            .and_then(|s| s.as_f64())
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "lSolutions".into(),
                detail: "missing or not a numeric array".into(),
            })?;
        records.push(QuestionRecord {
            id: format!("{}-{line_no:05}", kind.label()),
            question,
            gold_answer: normalize_numeral(&format_gold_number(solutions)),
            answer_type: AnswerType::Numeral,
            source_dataset: kind.label().into(),
        });
    }
    Ok(records)
}

fn parse_svamp(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let items = top_level_array(text)?;
    let mut records = Vec::new();
    for (i, v) in items.iter().enumerate() {
        let line_no = i + 1;
        let body = field_str(v, "Body", line_no)?.trim();
        let question = field_str(v, "Question", line_no)?.trim();
        let answer = v
            .get("Answer")
            .and_then(|a| a.as_f64())
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "Answer".into(),
                detail: "missing or not a number".into(),
            })?;
        records.push(QuestionRecord {
            id: format!("svamp-{line_no:05}"),
            question: format!("{body} {question}"),
            gold_answer: normalize_numeral(&format_gold_number(answer)),
            answer_type: AnswerType::Numeral,
            source_dataset: "svamp".into(),
        });
    }
    Ok(records)
}

fn parse_strategyqa(text: &str) -> Result<Vec<QuestionRecord>, CorpusError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line: 1,
        field: "<file>".into(),
        detail: e.to_string(),
    })?;
    let examples = v
        .get("examples")
        .and_then(|e| e.as_array())
        .ok_or_else(|| CorpusError::Malformed {
            line: 1,
            field: "examples".into(),
            detail: "missing or not an array".into(),
        })?;
    let mut records = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let line_no = i + 1;
        let question = field_str(ex, "input", line_no)?.trim().to_string();
        let scores = ex
            .get("target_scores")
            .ok_or_else(|| CorpusError::Malformed {
                line: line_no,
                field: "target_scores".into(),
                detail: "missing".into(),
            })?;
        let yes = scores.get("Yes").and_then(|s| s.as_f64()).unwrap_or(0.0);
        records.push(QuestionRecord {
            id: format!("strategyqa-{line_no:05}"),
            question,
            gold_answer: if yes > 0.0 { "yes" } else { "no" }.to_string(),
            answer_type: AnswerType::YesNo,
            source_dataset: "strategyqa".into(),
        });
    }
    Ok(records)
}

fn parse_examples_json(
    text: &str,
    kind: DatasetKind,
    answer_type: AnswerType,
) -> Result<Vec<QuestionRecord>, CorpusError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line: 1,
        field: "<file>".into(),
        detail: e.to_string(),
    })?;
    let examples = v
        .get("examples")
        .and_then(|e| e.as_array())
        .ok_or_else(|| CorpusError::Malformed {
            line: 1,
            field: "examples".into(),
            detail: "missing or not an array".into(),
        })?;
    let mut records = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let line_no = i + 1;
        let question = field_str(ex, "question", line_no)?.trim().to_string();
        let answer = field_str(ex, "answer", line_no)?;
        records.push(QuestionRecord {
            id: format!("{}-{line_no:05}", kind.label()),
            question,
            gold_answer: normalize_answer(answer, &answer_type),
            answer_type: answer_type.clone(),
            source_dataset: kind.label().into(),
        });
    }
    Ok(records)
}
