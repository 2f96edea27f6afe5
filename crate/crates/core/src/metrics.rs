//! Diagnostic quantities for demonstration sets: pairwise rationale
//! divergence and the inference-cost overhead of the unification loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, embed_batch, EmbedderSpec, EmbeddingError, EmbeddingVector};
use crate::gateway::ReplayCache;
use crate::sampling::Demonstration;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("divergence needs at least 2 demonstrations, got {0}")]
    TooFewDemos(usize),
    #[error("encoder mismatch: {a:?} vs {b:?}")]
    EncoderMismatch { a: String, b: String },
    #[error("baseline inference count n must be positive")]
    ZeroBaseline,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Pairwise similarity structure of a demonstration set's rationales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub encoder: String,
    /// Full symmetric cosine matrix (diagonal 1).
    pub pairwise_similarities: Vec<Vec<f64>>,
    /// 1 − mean of the off-diagonal pairwise cosines; in [0, 2].
    pub average_divergence: f64,
}

/// Divergence of a demonstration set: embed the rationale texts (rationales
/// only — questions are fixed across iterations) and average the unordered
/// pairwise cosines.
pub async fn divergence(
    demos: &[Demonstration],
    embedder: &EmbedderSpec,
    cache: &ReplayCache,
) -> Result<DivergenceReport, MetricsError> {
    if demos.len() < 2 {
        return Err(MetricsError::TooFewDemos(demos.len()));
    }
    let texts: Vec<String> = demos.iter().map(|d| d.rationale.clone()).collect();
    let vectors = embed_batch(&texts, embedder, cache).await?;
    divergence_from_embeddings(&embedder.encoder_name(), &vectors)
}

/// Divergence over already-computed vectors (also the injection point for
/// tests with hand-built geometry).
pub fn divergence_from_embeddings(
    encoder: &str,
    vectors: &[EmbeddingVector],
) -> Result<DivergenceReport, MetricsError> {
    if vectors.len() < 2 {
        return Err(MetricsError::TooFewDemos(vectors.len()));
    }
    let n = vectors.len();
    let mut matrix = vec![vec![1.0f64; n]; n];
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = cosine_similarity(&vectors[i], &vectors[j])?;
            matrix[i][j] = sim;
            matrix[j][i] = sim;
            sum += sim;
            pairs += 1;
        }
    }
    Ok(DivergenceReport {
        encoder: encoder.to_string(),
        pairwise_similarities: matrix,
        average_divergence: 1.0 - sum / pairs as f64,
    })
}

/// Divergence drop from a baseline set to a generated set: absolute delta
/// and the fraction of the baseline it represents.
pub fn divergence_delta(
    manual: &DivergenceReport,
    generated: &DivergenceReport,
) -> Result<(f64, f64), MetricsError> {
    if manual.encoder != generated.encoder {
        return Err(MetricsError::EncoderMismatch {
            a: manual.encoder.clone(),
            b: generated.encoder.clone(),
        });
    }
    let delta = manual.average_divergence - generated.average_divergence;
    Ok((delta, delta / manual.average_divergence))
}

/// Fractional extra inference count of the unification loop relative to the
/// n-item evaluation baseline: (T·k) / n.
pub fn cost_overhead(n: usize, iterations: u32, k: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((iterations as usize * k) as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{DemoOrigin, Generation};
    use proptest::prelude::*;

    fn demo(rationale: &str) -> Demonstration {
        Demonstration {
            question: "q?".into(),
            rationale: rationale.into(),
            extracted_answer: None,
            origin: DemoOrigin {
                cluster_index: 0,
                record_id: "r".into(),
            },
            generation: Generation::ZeroShotCoT,
        }
    }

    fn report(avg: f64, encoder: &str) -> DivergenceReport {
        DivergenceReport {
            encoder: encoder.into(),
            pairwise_similarities: vec![],
            average_divergence: avg,
        }
    }

    #[tokio::test]
    async fn identical_rationales_have_zero_divergence() {
        let demos: Vec<Demonstration> = (0..5).map(|_| demo("the same text")).collect();
        let spec = EmbedderSpec::deterministic_local(3, 16).unwrap();
        let cache = ReplayCache::disabled();
        let report = divergence(&demos, &spec, &cache).await.unwrap();
        assert!(report.average_divergence.abs() < 1e-9);
    }

    #[test]
    fn orthogonal_vectors_have_unit_divergence() {
        let vectors = vec![
            EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
            EmbeddingVector::new(vec![0.0, 1.0]).unwrap(),
        ];
        let report = divergence_from_embeddings("injected", &vectors).unwrap();
        assert_eq!(report.average_divergence, 1.0);
        assert_eq!(report.pairwise_similarities[0][1], 0.0);
        assert_eq!(report.pairwise_similarities[1][0], 0.0);
    }

    #[test]
    fn delta_reproduces_published_derived_rows() {
        // RoBERTa column: 0.758 → 0.660.
        let (delta, pct) = divergence_delta(&report(0.758, "e"), &report(0.660, "e")).unwrap();
        assert_eq!(format!("{delta:.3}"), "0.098");
        assert_eq!(format!("{:.1}", pct * 100.0), "12.9");
        // T5-XL column: 0.245 → 0.201.
        let (delta, pct) = divergence_delta(&report(0.245, "e"), &report(0.201, "e")).unwrap();
        assert_eq!(format!("{delta:.3}"), "0.044");
        assert_eq!(format!("{:.1}", pct * 100.0), "18.0");
    }

    #[test]
    fn equal_reports_give_zero_delta() {
        let (delta, pct) = divergence_delta(&report(0.4, "e"), &report(0.4, "e")).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(pct, 0.0);
    }

    #[test]
    fn encoder_mismatch_is_an_error() {
        assert!(matches!(
            divergence_delta(&report(0.4, "a"), &report(0.3, "b")),
            Err(MetricsError::EncoderMismatch { .. })
        ));
    }

    #[test]
    fn cost_overhead_examples() {
        let c = cost_overhead(1319, 4, 19).unwrap();
        assert!((0.057..=0.059).contains(&c), "got {c}");
        assert_eq!(cost_overhead(100, 0, 10).unwrap(), 0.0);
        assert_eq!(cost_overhead(100, 2, 10).unwrap(), 0.20);
        assert!(matches!(
            cost_overhead(0, 1, 1),
            Err(MetricsError::ZeroBaseline)
        ));
    }

    #[tokio::test]
    async fn divergence_is_permutation_invariant() {
        let demos = vec![
            demo("add the numbers together"),
            demo("subtract the smaller value"),
            demo("count the remaining items"),
        ];
        let mut shuffled = demos.clone();
        shuffled.rotate_left(1);
        let spec = EmbedderSpec::deterministic_local(5, 16).unwrap();
        let cache = ReplayCache::disabled();
        let a = divergence(&demos, &spec, &cache).await.unwrap();
        let b = divergence(&shuffled, &spec, &cache).await.unwrap();
        assert!((a.average_divergence - b.average_divergence).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn duplicated_rationale_sets_have_zero_divergence(k in 2usize..7) {
            let vectors: Vec<EmbeddingVector> = (0..k)
                .map(|_| EmbeddingVector::new(vec![0.3, -0.4, 0.5]).unwrap())
                .collect();
            let report = divergence_from_embeddings("dup", &vectors).unwrap();
            prop_assert!(report.average_divergence.abs() < 1e-9);
        }

        #[test]
        fn cost_overhead_is_linear_in_t_and_k(
            n in 1usize..5000,
            t in 0u32..16,
            k in 0usize..50,
        ) {
            let base = cost_overhead(n, t, k).unwrap();
            let doubled_t = cost_overhead(n, t * 2, k).unwrap();
            let doubled_k = cost_overhead(n, t, k * 2).unwrap();
            prop_assert!((doubled_t - 2.0 * base).abs() < 1e-12);
            prop_assert!((doubled_k - 2.0 * base).abs() < 1e-12);
        }
    }
}
