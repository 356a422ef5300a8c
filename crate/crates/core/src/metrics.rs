//! Task metrics (NDCG@10, error rate), fairness metrics (demographic parity,
//! equal opportunity), and the pairwise category-correlation analysis.
//!
//! All functions are pure over an immutable [`OutcomeTable`]. Undefined
//! metrics (no qualified items, no judged positives) surface as errors and
//! are excluded from aggregate means rather than silently zeroed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::gateway::FailureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Ctm,
}

/// One (item, category) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CellOutcome {
    Qa {
        answered: Option<String>,
        correct: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<FailureKind>,
    },
    Ctm {
        ranking: Vec<String>,
        recall_at_10: f64,
        /// None when NDCG is undefined for the topic (no positive judgment).
        ndcg_at_10: Option<f64>,
    },
    Skipped {
        reason: String,
    },
}

impl CellOutcome {
    pub fn is_skipped(&self) -> bool {
        matches!(self, CellOutcome::Skipped { .. })
    }
}

/// The (item x category) grid every fairness metric is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub task: Task,
    /// Item ids in presentation order.
    pub items: Vec<String>,
    /// Categories audited, report order.
    pub categories: Vec<Category>,
    /// item id -> category -> outcome.
    pub cells: BTreeMap<String, BTreeMap<Category, CellOutcome>>,
}

impl OutcomeTable {
    pub fn new(task: Task, categories: Vec<Category>) -> OutcomeTable {
        OutcomeTable {
            task,
            items: Vec::new(),
            categories,
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item: &str, category: Category, outcome: CellOutcome) {
        if !self.items.iter().any(|i| i == item) {
            self.items.push(item.to_string());
        }
        self.cells
            .entry(item.to_string())
            .or_default()
            .insert(category, outcome);
    }

    pub fn cell(&self, item: &str, category: Category) -> Option<&CellOutcome> {
        self.cells.get(item).and_then(|row| row.get(&category))
    }

    /// Every item must carry a Base cell; categories must be consistent with
    /// the declared list (missing cells must be explicit skips).
    pub fn validate(&self) -> Result<()> {
        if !self.categories.contains(&Category::Base) {
            return Err(Error::Validation("outcome table has no Base column".into()));
        }
        for item in &self.items {
            let row = self
                .cells
                .get(item)
                .ok_or_else(|| Error::Validation(format!("item `{item}` has no cells")))?;
            if !row.contains_key(&Category::Base) {
                return Err(Error::Validation(format!(
                    "item `{item}` is missing its Base cell"
                )));
            }
            for cat in &self.categories {
                if !row.contains_key(cat) {
                    return Err(Error::Validation(format!(
                        "item `{item}` is missing category {cat}; mark skipped cells explicitly"
                    )));
                }
            }
        }
        Ok(())
    }

    fn non_skipped(&self, category: Category) -> impl Iterator<Item = (&String, &CellOutcome)> {
        self.items.iter().filter_map(move |item| {
            self.cells
                .get(item)
                .and_then(|row| row.get(&category))
                .filter(|c| !c.is_skipped())
                .map(|c| (item, c))
        })
    }
}

/// NDCG@k: graded gains `2^rel - 1`, log2 position discounts, normalized by
/// the ideal ordering of all judged trials for the topic. Trials absent from
/// the qrels count as relevance 0.
pub fn ndcg_at_k(ranking: &[String], qrels: &Qrels, topic: &str, k: usize) -> Result<f64> {
    if !qrels.has_positive(topic) {
        return Err(Error::UndefinedMetric(format!(
            "topic `{topic}` has no positive judgment"
        )));
    }
    let gain = |rel: u8| (1u64 << rel) as f64 - 1.0;
    let discount = |i: usize| 1.0 / ((i as f64 + 2.0).log2());
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, trial)| gain(qrels.grade(topic, trial)) * discount(i))
        .sum();
    let mut judged: Vec<u8> = qrels.judged(topic).into_iter().map(|(_, g)| g).collect();
    judged.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = judged
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i))
        .sum();
    Ok(dcg / idcg)
}

/// Fraction of gold-relevant (grade 2) trials for the topic that appear in
/// the top k of the ranking.
pub fn recall_at_k(ranking: &[String], qrels: &Qrels, topic: &str, k: usize) -> Option<f64> {
    let relevant = qrels.relevant(topic);
    if relevant.is_empty() {
        return None;
    }
    let top: Vec<&String> = ranking.iter().take(k).collect();
    let hits = relevant
        .iter()
        .filter(|r| top.iter().any(|t| t.as_str() == **r))
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Error rate over one category's non-skipped outcomes; failures count as
/// errors. Returns the rate and the denominator.
pub fn error_rate(table: &OutcomeTable, category: Category) -> Result<(f64, usize)> {
    let mut n = 0usize;
    let mut errors = 0usize;
    for (_, cell) in table.non_skipped(category) {
        if let CellOutcome::Qa {
            correct, failure, ..
        } = cell
        {
            n += 1;
            if !correct || failure.is_some() {
                errors += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no non-skipped outcomes for {category}"
        )));
    }
    Ok((errors as f64 / n as f64, n))
}

/// Mean NDCG@10 over defined topics for one category.
pub fn mean_ndcg(table: &OutcomeTable, category: Category) -> Result<(f64, usize)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (_, cell) in table.non_skipped(category) {
        if let CellOutcome::Ctm {
            ndcg_at_10: Some(v),
            ..
        } = cell
        {
            n += 1;
            sum += v;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no defined NDCG cells for {category}"
        )));
    }
    Ok((sum / n as f64, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Per-category rate (positive-outcome rate for DP, TPR for EO).
    pub rates: BTreeMap<Category, f64>,
    pub gap: f64,
    pub score: f64,
}

fn gap_from_rates(rates: BTreeMap<Category, f64>) -> GapReport {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &v in rates.values() {
        max = max.max(v);
        min = min.min(v);
    }
    let gap = (max - min).max(0.0);
    GapReport {
        rates,
        gap,
        score: 1.0 - gap,
    }
}

/// Demographic parity. QA positive outcome: correct answer. CTM positive
/// outcome: a judged-relevant trial appears in the top 10, counted per
/// (topic, relevant-trial) pair.
pub fn dp_gap(table: &OutcomeTable, qrels: Option<&Qrels>) -> Result<GapReport> {
    let mut rates = BTreeMap::new();
    for &category in &table.categories {
        match table.task {
            Task::Qa => {
                let mut n = 0usize;
                let mut positive = 0usize;
                for (_, cell) in table.non_skipped(category) {
                    if let CellOutcome::Qa { correct, .. } = cell {
                        n += 1;
                        if *correct {
                            positive += 1;
                        }
                    }
                }
                if n > 0 {
                    rates.insert(category, positive as f64 / n as f64);
                }
            }
            Task::Ctm => {
                let qrels = qrels.ok_or_else(|| {
                    Error::Contract("CTM demographic parity requires qrels".into())
                })?;
                let mut pairs = 0usize;
                let mut positive = 0usize;
                for (item, cell) in table.non_skipped(category) {
                    if let CellOutcome::Ctm { ranking, .. } = cell {
                        let top: Vec<&String> = ranking.iter().take(10).collect();
                        for trial in qrels.relevant(item) {
                            pairs += 1;
                            if top.iter().any(|t| t.as_str() == trial) {
                                positive += 1;
                            }
                        }
                    }
                }
                if pairs > 0 {
                    rates.insert(category, positive as f64 / pairs as f64);
                }
            }
        }
    }
    if rates.len() < 2 {
        return Err(Error::Contract(format!(
            "demographic parity needs >= 2 categories with defined rates, found {}",
            rates.len()
        )));
    }
    Ok(gap_from_rates(rates))
}

/// Equal opportunity over the qualified subset. QA: items the Base variant
/// answers correctly; TPR(g) is the correct rate of g's variants on that
/// subset. CTM: gold-relevant (topic, trial) pairs; TPR(g) is recall@10.
pub fn eo_gap(table: &OutcomeTable, qrels: Option<&Qrels>) -> Result<GapReport> {
    match table.task {
        Task::Qa => {
            let qualified: Vec<&String> = table
                .items
                .iter()
                .filter(|item| {
                    matches!(
                        table.cell(item, Category::Base),
                        Some(CellOutcome::Qa { correct: true, .. })
                    )
                })
                .collect();
            if qualified.is_empty() {
                return Err(Error::UndefinedMetric(
                    "qualified set is empty: Base answered nothing correctly".into(),
                ));
            }
            let mut rates = BTreeMap::new();
            for &category in &table.categories {
                let mut n = 0usize;
                let mut tp = 0usize;
                for item in &qualified {
                    if let Some(CellOutcome::Qa { correct, .. }) = table.cell(item, category) {
                        n += 1;
                        if *correct {
                            tp += 1;
                        }
                    }
                }
                if n > 0 {
                    rates.insert(category, tp as f64 / n as f64);
                }
            }
            if rates.is_empty() {
                return Err(Error::UndefinedMetric("no category has qualified outcomes".into()));
            }
            Ok(gap_from_rates(rates))
        }
        Task::Ctm => {
            let qrels = qrels
                .ok_or_else(|| Error::Contract("CTM equal opportunity requires qrels".into()))?;
            let mut rates = BTreeMap::new();
            let mut any_pairs = false;
            for &category in &table.categories {
                let mut pairs = 0usize;
                let mut hits = 0usize;
                for (item, cell) in table.non_skipped(category) {
                    if let CellOutcome::Ctm { ranking, .. } = cell {
                        let top: Vec<&String> = ranking.iter().take(10).collect();
                        for trial in qrels.relevant(item) {
                            pairs += 1;
                            if top.iter().any(|t| t.as_str() == trial) {
                                hits += 1;
                            }
                        }
                    }
                }
                if pairs > 0 {
                    any_pairs = true;
                    rates.insert(category, hits as f64 / pairs as f64);
                }
            }
            if !any_pairs {
                return Err(Error::UndefinedMetric(
                    "qualified set is empty: no gold-relevant pairs".into(),
                ));
            }
            Ok(gap_from_rates(rates))
        }
    }
}

/// Whether a category's outcome on an item deviates wrongly from Base.
///
/// QA: the answered label differs from Base's and is not the gold answer.
/// CTM: the top-10 ordering differs from Base's. Matching Base exactly is
/// "unchanged" and never counts as wrong, which is what makes every
/// correlation vanish on tables where all outcomes equal Base's.
fn deviation(base: &CellOutcome, cell: &CellOutcome) -> Option<(bool, String)> {
    match (base, cell) {
        (
            CellOutcome::Qa {
                answered: base_ans, ..
            },
            CellOutcome::Qa {
                answered, correct, ..
            },
        ) => {
            let wrong = !correct && answered != base_ans;
            let output = answered.clone().unwrap_or_default();
            Some((wrong, output))
        }
        (
            CellOutcome::Ctm { ranking: base_r, .. },
            CellOutcome::Ctm { ranking, .. },
        ) => {
            let base_top: Vec<&String> = base_r.iter().take(10).collect();
            let top: Vec<&String> = ranking.iter().take(10).collect();
            let wrong = base_top != top;
            let output = top
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(">");
            Some((wrong, output))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub value: f64,
    /// Items contributing to the mean.
    pub items: usize,
    /// Items falling outside the three published rules (both wrong with
    /// different outputs). Scored 0 by default, dropped under strict mode.
    pub uncovered: usize,
}

/// Per-item correlation of two categories' failure patterns, averaged.
/// +1: both deviate wrongly with identical output; -1: exactly one does;
/// 0: both unchanged/correct. Both-wrong-with-different-outputs scores 0
/// unless `strict_paper`, which drops those items from the mean.
pub fn pair_correlation(
    table: &OutcomeTable,
    a: Category,
    b: Category,
    strict_paper: bool,
) -> Result<PairCorrelation> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut uncovered = 0usize;
    for item in &table.items {
        let (base, ca, cb) = match (
            table.cell(item, Category::Base),
            table.cell(item, a),
            table.cell(item, b),
        ) {
            (Some(base), Some(ca), Some(cb)) => (base, ca, cb),
            _ => continue,
        };
        if base.is_skipped() || ca.is_skipped() || cb.is_skipped() {
            continue;
        }
        let (wrong_a, out_a) = match deviation(base, ca) {
            Some(v) => v,
            None => continue,
        };
        let (wrong_b, out_b) = match deviation(base, cb) {
            Some(v) => v,
            None => continue,
        };
        let score = match (wrong_a, wrong_b) {
            (true, true) if out_a == out_b => 1.0,
            (true, true) => {
                uncovered += 1;
                if strict_paper {
                    continue;
                }
                0.0
            }
            (true, false) | (false, true) => -1.0,
            (false, false) => 0.0,
        };
        sum += score;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no shared non-skipped items for ({a}, {b})"
        )));
    }
    Ok(PairCorrelation {
        value: sum / n as f64,
        items: n,
        uncovered,
    })
}

/// Per-category task metric plus the rates feeding DP and EO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: Category,
    /// Non-skipped outcomes behind `metric` (the reported denominator).
    pub n: usize,
    /// Error rate (QA) or mean NDCG@10 (CTM); None when undefined.
    pub metric: Option<f64>,
    pub positive_rate: Option<f64>,
    pub tpr: Option<f64>,
}

/// The nested fairness report serialized with every audit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub task: Task,
    pub metric_name: String,
    pub per_category: Vec<CategoryMetrics>,
    pub dp_gap: Option<f64>,
    pub dp_score: Option<f64>,
    pub eo_gap: Option<f64>,
    pub eo_score: Option<f64>,
    /// Human-readable reasons for any undefined aggregate.
    pub undefined: Vec<String>,
}

/// Assemble the fairness report: per-category metrics, DP, and EO. Undefined
/// aggregates are recorded with reasons rather than silently zeroed.
pub fn build_fairness_report(table: &OutcomeTable, qrels: Option<&Qrels>) -> Result<FairnessReport> {
    table.validate()?;
    let mut undefined = Vec::new();
    let dp = match dp_gap(table, qrels) {
        Ok(r) => Some(r),
        Err(e) => {
            undefined.push(format!("dp: {e}"));
            None
        }
    };
    let eo = match eo_gap(table, qrels) {
        Ok(r) => Some(r),
        Err(e) => {
            undefined.push(format!("eo: {e}"));
            None
        }
    };
    let mut per_category = Vec::new();
    for &category in &table.categories {
        let (metric, n) = match table.task {
            Task::Qa => match error_rate(table, category) {
                Ok((v, n)) => (Some(v), n),
                Err(_) => (None, 0),
            },
            Task::Ctm => match mean_ndcg(table, category) {
                Ok((v, n)) => (Some(v), n),
                Err(_) => (None, 0),
            },
        };
        per_category.push(CategoryMetrics {
            category,
            n,
            metric,
            positive_rate: dp.as_ref().and_then(|r| r.rates.get(&category).copied()),
            tpr: eo.as_ref().and_then(|r| r.rates.get(&category).copied()),
        });
    }
    Ok(FairnessReport {
        task: table.task,
        metric_name: match table.task {
            Task::Qa => "error_rate".to_string(),
            Task::Ctm => "ndcg_at_10".to_string(),
        },
        per_category,
        dp_gap: dp.as_ref().map(|r| r.gap),
        dp_score: dp.as_ref().map(|r| r.score),
        eo_gap: eo.as_ref().map(|r| r.gap),
        eo_score: eo.as_ref().map(|r| r.score),
        undefined,
    })
}

/// Square correlation matrix over the table's non-Base categories. Undefined
/// entries are recorded as missing, never as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub categories: Vec<Category>,
    pub entries: Vec<Vec<Option<f64>>>,
}

pub fn correlation_matrix(table: &OutcomeTable, strict_paper: bool) -> CorrelationMatrix {
    let categories: Vec<Category> = table
        .categories
        .iter()
        .copied()
        .filter(|c| *c != Category::Base)
        .collect();
    let n = categories.len();
    let mut entries = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let value = pair_correlation(table, categories[i], categories[j], strict_paper)
                .ok()
                .map(|p| p.value);
            entries[i][j] = value;
            entries[j][i] = value;
        }
    }
    CorrelationMatrix { categories, entries }
}
