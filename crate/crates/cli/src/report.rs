//! Human-readable run summaries and the grouped accuracy table.

use echo_core::corpus::DatasetKind;
use echo_core::evaluator::EvalReport;

use crate::config::ResolvedConfig;

fn domain_of(kind: &str) -> &'static str {
    match kind {
        "multiarith" | "gsm8k" | "singleeq" | "addsub" | "aqua" | "svamp" => "arithmetic",
        "csqa" | "strategyqa" => "commonsense",
        "letter" | "coin" => "symbolic",
        _ => "other",
    }
}

/// One-run summary written next to the evaluation report.
pub fn render_summary(config: &ResolvedConfig, report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("preset:     {}\n", config.raw.preset));
    out.push_str(&format!("dataset:    {}\n", config.kind.label()));
    out.push_str(&format!("model:      {}\n", config.raw.gateway.model));
    out.push_str(&format!(
        "demos:      k={} m={} iterations={}\n",
        config.k, config.m, config.iterations
    ));
    out.push_str(&format!("items:      {}\n", report.per_item.len()));
    out.push_str(&format!("correct:    {}\n", report.correct_count()));
    out.push_str(&format!("accuracy:   {:.1}%\n", report.accuracy * 100.0));
    out.push_str(&format!("inferences: {}\n", report.inference_count));
    out.push_str(&format!("fingerprint: {}\n", report.config_fingerprint));
    out
}

/// Accuracy table over several (dataset, accuracy) rows, grouped by domain
/// with per-domain averages and an overall average.
pub fn render_accuracy_table(rows: &[(String, f64)]) -> String {
    let mut out = String::new();
    let mut overall = Vec::new();
    for domain in ["arithmetic", "commonsense", "symbolic", "other"] {
        let members: Vec<&(String, f64)> = rows
            .iter()
            .filter(|(kind, _)| domain_of(kind) == domain)
            .collect();
        if members.is_empty() {
            continue;
        }
        out.push_str(&format!("{domain}\n"));
        let mut sum = 0.0;
        for (kind, acc) in &members {
            let label = kind
                .parse::<DatasetKind>()
                .map(|k| k.label().to_string())
                .unwrap_or_else(|_| kind.clone());
            out.push_str(&format!("  {label:<12} {:>6.1}\n", acc * 100.0));
            sum += acc;
            overall.push(*acc);
        }
        out.push_str(&format!("  {:<12} {:>6.1}\n", "avg.", sum / members.len() as f64 * 100.0));
    }
    if !overall.is_empty() {
        out.push_str(&format!(
            "{:<14} {:>6.1}\n",
            "overall",
            overall.iter().sum::<f64>() / overall.len() as f64 * 100.0
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_groups_by_domain_and_averages() {
        let rows = vec![
            ("gsm8k".to_string(), 0.784),
            ("svamp".to_string(), 0.811),
            ("strategyqa".to_string(), 0.599),
            ("coin".to_string(), 0.994),
        ];
        let table = render_accuracy_table(&rows);
        assert!(table.contains("arithmetic"));
        assert!(table.contains("gsm8k"));
        assert!(table.contains("78.4"));
        assert!(table.contains("commonsense"));
        assert!(table.contains("symbolic"));
        assert!(table.contains("overall"));
        // Arithmetic average of 78.4 and 81.1 is 79.75 → printed 79.8.
        assert!(table.contains("79.8"), "table:\n{table}");
    }
}
