//! Shared fixtures for pipeline and acceptance tests.

use echo_cli::config::{RunConfig, StrategyPreset};
use echo_core::gateway::CacheMode;
use std::path::{Path, PathBuf};

/// Vocabulary families so the fixture corpus clusters meaningfully.
const FAMILIES: [(&str, &str); 8] = [
    ("apples", "Ann has {a} apples and buys {b} more. How many apples does Ann have now?"),
    ("marbles", "Max owns {a} marbles and loses {b}. How many marbles remain with Max?"),
    ("pages", "A book has {a} pages and Sam reads {b} pages. How many pages are left to read?"),
    ("coins", "Lily saves {a} coins and spends {b} coins. How many coins does Lily keep?"),
    ("trees", "The park has {a} trees and workers plant {b} more trees. How many trees stand in the park?"),
    ("cards", "Ben holds {a} cards and gives away {b} cards. How many cards does Ben still hold?"),
    ("fish", "The tank contains {a} fish and {b} fish are added. How many fish swim in the tank?"),
    ("stars", "Mia draws {a} stars and erases {b} stars. How many stars are on Mia's sheet?"),
];

/// Write an n-question generic corpus cycling over the vocabulary families.
/// Gold answers rotate over 1, 2, 3.
pub fn write_fixture_corpus(path: &Path, n: usize) {
    let mut out = String::new();
    for i in 0..n {
        let (family, template) = FAMILIES[i % FAMILIES.len()];
        let question = template
            .replace("{a}", &(i % 7 + 2).to_string())
            .replace("{b}", &(i % 3 + 1).to_string());
        let record = serde_json::json!({
            "id": format!("{family}-{i:03}"),
            "question": question,
            "answer": (i % 3 + 1).to_string(),
            "type": "numeral",
            "source": "fixture",
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// A mock-backed run configuration over a fixture corpus.
pub fn mock_config(corpus: PathBuf, output_dir: PathBuf) -> RunConfig {
    let mut config = RunConfig {
        corpus_path: corpus,
        dataset_kind: "generic".into(),
        preset: StrategyPreset::Echo,
        k: Some(4),
        m: Some(4),
        iterations: 1,
        seed: 7,
        output_dir,
        ..RunConfig::default()
    };
    config.embedder.dim = 16;
    config.gateway.provider = "mock".into();
    config.gateway.cache_mode = CacheMode::Record;
    config.gateway.mock_response =
        Some("First, consider the problem. The answer is 1.".into());
    config
}

/// Recursively collect all file paths under a directory, relative to it.
#[allow(dead_code)] // each test binary compiles this module separately
pub fn files_under(dir: &Path) -> Vec<String> {
    fn walk(dir: &Path, base: &Path, into: &mut Vec<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, into);
            } else {
                into.push(
                    path.strip_prefix(base)
                        .unwrap()
                        .to_string_lossy()
                        .replace('\\', "/"),
                );
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort();
    files
}
