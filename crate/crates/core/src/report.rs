//! Run persistence and report emission: deterministic JSON/CSV/SVG files,
//! all embedding the config snapshot hash, plus before/after comparison.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::AuditRun;
use crate::category::Category;
use crate::error::{Error, Result};
use crate::metrics::Task;
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn parse(name: &str) -> Result<Format> {
        match name.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Validation(format!("unknown report format `{other}`"))),
        }
    }

    pub fn parse_list(list: &str) -> Result<Vec<Format>> {
        let mut formats = BTreeSet::new();
        for part in list.split(',').filter(|p| !p.trim().is_empty()) {
            formats.insert(Format::parse(part)?);
        }
        Ok(formats.into_iter().collect())
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Flat CSV: one row per category x metric, Base first then enumeration
/// order, aggregates last.
pub fn fairness_flat_csv(run: &AuditRun) -> String {
    let mut out = format!("# config {}\ncategory,metric,value\n", run.config_hash);
    for row in &run.fairness.per_category {
        let cat = row.category.key();
        out.push_str(&format!("{cat},{},{}\n", run.fairness.metric_name, opt(row.metric)));
        out.push_str(&format!("{cat},positive_rate,{}\n", opt(row.positive_rate)));
        out.push_str(&format!("{cat},tpr,{}\n", opt(row.tpr)));
        out.push_str(&format!("{cat},n,{}\n", row.n));
    }
    out.push_str(&format!("all,dp_gap,{}\n", opt(run.fairness.dp_gap)));
    out.push_str(&format!("all,dp_score,{}\n", opt(run.fairness.dp_score)));
    out.push_str(&format!("all,eo_gap,{}\n", opt(run.fairness.eo_gap)));
    out.push_str(&format!("all,eo_score,{}\n", opt(run.fairness.eo_score)));
    out
}

/// Wide CSV mirroring the published table layout: one column per category.
pub fn fairness_wide_csv(run: &AuditRun) -> String {
    let mut out = format!("# config {}\n", run.config_hash);
    out.push_str("metric");
    for row in &run.fairness.per_category {
        out.push_str(&format!(",{}", csv_field(row.category.label())));
    }
    out.push('\n');
    for (name, getter) in [
        (
            run.fairness.metric_name.as_str(),
            Box::new(|r: &crate::metrics::CategoryMetrics| r.metric)
                as Box<dyn Fn(&crate::metrics::CategoryMetrics) -> Option<f64>>,
        ),
        ("positive_rate", Box::new(|r: &crate::metrics::CategoryMetrics| r.positive_rate)),
        ("tpr", Box::new(|r: &crate::metrics::CategoryMetrics| r.tpr)),
    ] {
        out.push_str(name);
        for row in &run.fairness.per_category {
            out.push_str(&format!(",{}", opt(getter(row))));
        }
        out.push('\n');
    }
    out.push_str("n");
    for row in &run.fairness.per_category {
        out.push_str(&format!(",{}", row.n));
    }
    out.push('\n');
    out
}

/// Correlation matrix as a CSV grid; missing entries stay empty.
pub fn correlation_csv(run: &AuditRun) -> String {
    let mut out = format!("# config {}\ncategory", run.config_hash);
    for cat in &run.correlation.categories {
        out.push_str(&format!(",{}", cat.key()));
    }
    out.push('\n');
    for (i, cat) in run.correlation.categories.iter().enumerate() {
        out.push_str(cat.key());
        for entry in &run.correlation.entries[i] {
            out.push(',');
            if let Some(v) = entry {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    config_snapshot: std::collections::BTreeMap<String, String>,
    task: Task,
    partial: bool,
    completed_cells: usize,
    total_cells: usize,
    failure_counts: std::collections::BTreeMap<String, usize>,
    cost: Option<crate::gateway::cost::CostSummary>,
    duration_ms: u64,
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Persist the run directory: manifest plus the deterministic outcome table.
/// The manifest carries wall-clock duration and is the one file allowed to
/// differ between identical reruns.
pub fn save_run(run: &AuditRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        config_hash: run.config_hash.clone(),
        config_snapshot: run.config_snapshot.clone(),
        task: run.task,
        partial: run.partial,
        completed_cells: run.completed_cells,
        total_cells: run.total_cells,
        failure_counts: run.failure_counts.clone(),
        cost: run.cost.clone(),
        duration_ms: run.duration_ms,
    };
    write(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    let table = serde_json::json!({
        "config_hash": run.config_hash,
        "table": run.table,
    });
    write(&dir.join("outcome_table.json"), &serde_json::to_string_pretty(&table)?)?;
    if let Some(run_file) = &run.run_file {
        write(&dir.join("runfile.trec"), run_file)?;
    }
    Ok(())
}

/// Emit the requested report formats into the run directory.
pub fn emit_report(run: &AuditRun, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            Format::Csv => {
                let flat = dir.join("fairness.csv");
                write(&flat, &fairness_flat_csv(run))?;
                written.push(flat);
                let wide = dir.join("metrics_by_category.csv");
                write(&wide, &fairness_wide_csv(run))?;
                written.push(wide);
                let corr = dir.join("correlation.csv");
                write(&corr, &correlation_csv(run))?;
                written.push(corr);
            }
            Format::Json => {
                let fairness = dir.join("fairness.json");
                let body = serde_json::json!({
                    "config_hash": run.config_hash,
                    "fairness": run.fairness,
                    "failure_counts": run.failure_counts,
                });
                write(&fairness, &serde_json::to_string_pretty(&body)?)?;
                written.push(fairness);
            }
            Format::Svg => {
                let axes: Vec<(String, Option<f64>)> = run
                    .fairness
                    .per_category
                    .iter()
                    .map(|r| (r.category.label().to_string(), r.metric))
                    .collect();
                let radar_path = dir.join("radar.svg");
                write(
                    &radar_path,
                    &svg::radar(&run.fairness.metric_name, &axes, &run.config_hash),
                )?;
                written.push(radar_path);

                let heatmap_path = dir.join("heatmap.svg");
                write(
                    &heatmap_path,
                    &svg::heatmap("category correlation", &run.correlation, &run.config_hash),
                )?;
                written.push(heatmap_path);

                let labels: Vec<String> = run
                    .fairness
                    .per_category
                    .iter()
                    .map(|r| r.category.label().to_string())
                    .collect();
                let pos: Vec<Option<f64>> = run
                    .fairness
                    .per_category
                    .iter()
                    .map(|r| r.positive_rate)
                    .collect();
                let tpr: Vec<Option<f64>> =
                    run.fairness.per_category.iter().map(|r| r.tpr).collect();
                let caption = format!(
                    "DP score {} | EO score {}",
                    opt(run.fairness.dp_score),
                    opt(run.fairness.eo_score)
                );
                let bars_path = dir.join("bars.svg");
                write(
                    &bars_path,
                    &svg::grouped_bars(
                        "positive rate and TPR by category",
                        &labels,
                        ("positive rate", &pos),
                        ("TPR", &tpr),
                        &caption,
                        &run.config_hash,
                    ),
                )?;
                written.push(bars_path);
            }
        }
    }
    Ok(written)
}

/// Reload a persisted run (manifest + outcome table) and recompute the
/// derived reports, so emission is regenerable bit-identically.
pub fn load_run(dir: &Path) -> Result<AuditRun> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    let table_text = std::fs::read_to_string(dir.join("outcome_table.json"))?;
    #[derive(Deserialize)]
    struct TableFile {
        table: crate::metrics::OutcomeTable,
    }
    let table_file: TableFile = serde_json::from_str(&table_text)?;
    let run_file = {
        let path = dir.join("runfile.trec");
        path.exists()
            .then(|| std::fs::read_to_string(&path))
            .transpose()?
    };
    // CTM fairness needs qrels; reloading audits metrics from the table only
    // covers QA exactly and CTM rankings/NDCG (stored per cell).
    let strict = manifest
        .config_snapshot
        .get("strict_paper")
        .map(|v| v == "true")
        .unwrap_or(false);
    let qrels = match manifest.config_snapshot.get("qrels_path") {
        Some(path) if std::path::Path::new(path).exists() => {
            Some(crate::corpus::load_qrels(std::path::Path::new(path))?)
        }
        _ => None,
    };
    let fairness = crate::metrics::build_fairness_report(&table_file.table, qrels.as_ref())?;
    let correlation = crate::metrics::correlation_matrix(&table_file.table, strict);
    Ok(AuditRun {
        config_hash: manifest.config_hash,
        config_snapshot: manifest.config_snapshot,
        task: manifest.task,
        table: table_file.table,
        fairness,
        correlation,
        failure_counts: manifest.failure_counts,
        cost: manifest.cost,
        duration_ms: manifest.duration_ms,
        partial: manifest.partial,
        completed_cells: manifest.completed_cells,
        total_cells: manifest.total_cells,
        run_file,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Improved,
    Worsened,
    Unchanged,
}

fn direction_of(change: f64, lower_is_better: bool) -> Direction {
    if change.abs() <= 1e-9 {
        Direction::Unchanged
    } else if (change < 0.0) == lower_is_better {
        Direction::Improved
    } else {
        Direction::Worsened
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricChange {
    pub metric: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub abs_change: Option<f64>,
    pub pct_change: Option<f64>,
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub before_hash: String,
    pub after_hash: String,
    pub aggregates: Vec<MetricChange>,
    pub per_category: Vec<MetricChange>,
}

fn change(metric: &str, before: Option<f64>, after: Option<f64>, lower_is_better: bool) -> MetricChange {
    let (abs_change, pct_change, direction) = match (before, after) {
        (Some(b), Some(a)) => {
            let abs = a - b;
            let pct = if b.abs() > 1e-12 {
                Some(100.0 * abs / b)
            } else {
                None
            };
            (Some(abs), pct, Some(direction_of(abs, lower_is_better)))
        }
        _ => (None, None, None),
    };
    MetricChange {
        metric: metric.to_string(),
        before,
        after,
        abs_change,
        pct_change,
        direction,
    }
}

/// Compare two runs sharing task, datasets, and categories.
pub fn compare_runs(before: &AuditRun, after: &AuditRun) -> Result<CompareReport> {
    let mut differences = Vec::new();
    if before.task != after.task {
        differences.push("task".to_string());
    }
    for key in ["qa_path", "topics_path", "trials_path", "qrels_path", "categories"] {
        if before.config_snapshot.get(key) != after.config_snapshot.get(key) {
            differences.push(key.to_string());
        }
    }
    if before.table.categories != after.table.categories {
        differences.push("audited categories".to_string());
    }
    if !differences.is_empty() {
        return Err(Error::Comparability(differences.join(", ")));
    }

    let aggregates = vec![
        change("dp_gap", before.fairness.dp_gap, after.fairness.dp_gap, true),
        change("eo_gap", before.fairness.eo_gap, after.fairness.eo_gap, true),
        change("dp_score", before.fairness.dp_score, after.fairness.dp_score, false),
        change("eo_score", before.fairness.eo_score, after.fairness.eo_score, false),
    ];
    let lower_is_better = matches!(before.task, Task::Qa); // error rate vs NDCG
    let mut per_category = Vec::new();
    for row in &before.fairness.per_category {
        let after_row = after
            .fairness
            .per_category
            .iter()
            .find(|r| r.category == row.category);
        per_category.push(change(
            &format!("{}:{}", before.fairness.metric_name, row.category.key()),
            row.metric,
            after_row.and_then(|r| r.metric),
            lower_is_better,
        ));
    }
    Ok(CompareReport {
        before_hash: before.config_hash.clone(),
        after_hash: after.config_hash.clone(),
        aggregates,
        per_category,
    })
}

/// Render the comparison as an aligned text table.
pub fn compare_text(report: &CompareReport) -> String {
    let mut out = format!(
        "before {}  after {}\n{:<28} {:>10} {:>10} {:>10} {:>9} {:>10}\n",
        &report.before_hash[..12.min(report.before_hash.len())],
        &report.after_hash[..12.min(report.after_hash.len())],
        "metric",
        "before",
        "after",
        "change",
        "pct",
        "direction"
    );
    for row in report.aggregates.iter().chain(report.per_category.iter()) {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let pct = row
            .pct_change
            .map(|x| format!("{x:+.1}%"))
            .unwrap_or_else(|| "-".into());
        let dir = row
            .direction
            .map(|d| format!("{d:?}").to_lowercase())
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<28} {:>10} {:>10} {:>10} {:>9} {:>10}\n",
            row.metric,
            fmt(row.before),
            fmt(row.after),
            fmt(row.abs_change),
            pct,
            dir
        ));
    }
    out
}

/// Fixed category column order: Base first, then enumeration order.
pub fn ordered_categories(categories: &[Category]) -> Vec<Category> {
    let mut ordered: Vec<Category> = crate::category::ALL_CATEGORIES
        .iter()
        .copied()
        .filter(|c| categories.contains(c))
        .collect();
    for c in categories {
        if !ordered.contains(c) {
            ordered.push(*c);
        }
    }
    ordered
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{CategoryMetrics, CorrelationMatrix, FairnessReport, OutcomeTable};

    fn dummy_run(dp_gap: f64, eo_gap: f64) -> AuditRun {
        AuditRun {
            config_hash: "abcdef012345".into(),
            config_snapshot: [("task".to_string(), "qa".to_string())].into_iter().collect(),
            task: Task::Qa,
            table: OutcomeTable::new(Task::Qa, vec![Category::Base, Category::Male]),
            fairness: FairnessReport {
                task: Task::Qa,
                metric_name: "error_rate".into(),
                per_category: vec![CategoryMetrics {
                    category: Category::Base,
                    n: 10,
                    metric: Some(0.1),
                    positive_rate: Some(0.9),
                    tpr: Some(1.0),
                }],
                dp_gap: Some(dp_gap),
                dp_score: Some(1.0 - dp_gap),
                eo_gap: Some(eo_gap),
                eo_score: Some(1.0 - eo_gap),
                undefined: vec![],
            },
            correlation: CorrelationMatrix {
                categories: vec![Category::Male],
                entries: vec![vec![Some(0.0)]],
            },
            failure_counts: Default::default(),
            cost: None,
            duration_ms: 5,
            partial: false,
            completed_cells: 10,
            total_cells: 10,
            run_file: None,
        }
    }

    #[test]
    fn csv_outputs_embed_config_hash() {
        let run = dummy_run(0.1, 0.2);
        assert!(fairness_flat_csv(&run).starts_with("# config abcdef012345"));
        assert!(fairness_wide_csv(&run).starts_with("# config abcdef012345"));
        assert!(correlation_csv(&run).starts_with("# config abcdef012345"));
    }

    #[test]
    fn identical_runs_compare_unchanged() {
        let run = dummy_run(0.1, 0.2);
        let report = compare_runs(&run, &run).unwrap();
        for row in &report.aggregates {
            assert_eq!(row.direction, Some(Direction::Unchanged));
            assert_eq!(row.abs_change, Some(0.0));
        }
    }

    #[test]
    fn gap_reduction_reports_expected_percentages() {
        // eo 0.10 -> 0.072 is -28%; dp 0.10 -> 0.068 is -32%.
        let before = dummy_run(0.10, 0.10);
        let after = dummy_run(0.068, 0.072);
        let report = compare_runs(&before, &after).unwrap();
        let dp = &report.aggregates[0];
        let eo = &report.aggregates[1];
        assert!((dp.pct_change.unwrap() + 32.0).abs() < 1e-9);
        assert!((eo.pct_change.unwrap() + 28.0).abs() < 1e-9);
        assert_eq!(dp.direction, Some(Direction::Improved));
        assert_eq!(eo.direction, Some(Direction::Improved));
    }

    #[test]
    fn mismatched_configs_are_not_comparable() {
        let a = dummy_run(0.1, 0.1);
        let mut b = dummy_run(0.1, 0.1);
        b.config_snapshot
            .insert("qa_path".to_string(), "other.jsonl".to_string());
        b.task = Task::Ctm;
        let err = compare_runs(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("task") && msg.contains("qa_path"), "{msg}");
    }

    #[test]
    fn empty_format_list_writes_nothing() {
        let run = dummy_run(0.1, 0.1);
        let dir = tempfile::tempdir().unwrap();
        let written = emit_report(&run, &[], dir.path()).unwrap();
        assert!(written.is_empty());
    }
}
