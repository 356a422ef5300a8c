//! Canonical dataset formats for the two tasks: JSON-lines QA items, patient
//! topics, trial documents, and TREC-style qrels. Raw upstream dumps are
//! pre-converted by users; these loaders only accept the canonical schemas.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::category::{Axis, Category};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::perturb;

/// One multiple-choice medical question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    /// Option label (single uppercase letter) -> option text, order preserved.
    pub options: IndexMap<String, String>,
    /// Gold option label.
    #[serde(rename = "answer")]
    pub gold: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl QAItem {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("QA item with empty id".into()));
        }
        if self.options.len() < 2 {
            return Err(Error::Validation(format!(
                "QA item {}: fewer than 2 options",
                self.id
            )));
        }
        for label in self.options.keys() {
            let ok = label.len() == 1 && label.chars().all(|c| c.is_ascii_uppercase());
            if !ok {
                return Err(Error::Validation(format!(
                    "QA item {}: option label `{label}` is not a single uppercase letter",
                    self.id
                )));
            }
        }
        if !self.options.contains_key(&self.gold) {
            return Err(Error::Validation(format!(
                "QA item {}: answer `{}` is not among options",
                self.id, self.gold
            )));
        }
        Ok(())
    }
}

/// A patient case note used as a CTM query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTopic {
    pub id: String,
    pub text: String,
}

/// Sex restriction stated by a trial's eligibility criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexRestriction {
    Male,
    Female,
    #[default]
    None,
}

/// One clinical trial document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDoc {
    pub id: String,
    pub title: String,
    pub summary: String,
    pub inclusion: Vec<String>,
    pub exclusion: Vec<String>,
    #[serde(default, deserialize_with = "deserialize_sex_restriction")]
    pub sex_restriction: SexRestriction,
}

// Accepts "male" | "female" | null; absent handled by serde default.
fn deserialize_sex_restriction<'de, D>(de: D) -> std::result::Result<SexRestriction, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let opt = Option::<SexRestriction>::deserialize(de)?;
    Ok(opt.unwrap_or_default())
}

impl TrialDoc {
    pub fn criteria_count(&self) -> usize {
        self.inclusion.len() + self.exclusion.len()
    }

    /// Inclusion criteria followed by exclusion criteria, the prompt order.
    pub fn criteria(&self) -> impl Iterator<Item = &str> {
        self.inclusion
            .iter()
            .chain(self.exclusion.iter())
            .map(|s| s.as_str())
    }
}

/// TREC-style relevance judgments: (topic, trial) -> grade.
///
/// Grades follow the clinical-trials convention: 0 not relevant, 1 excluded
/// but related, 2 eligible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    pub grades: BTreeMap<(String, String), u8>,
}

impl Qrels {
    pub fn grade(&self, topic: &str, trial: &str) -> u8 {
        self.grades
            .get(&(topic.to_string(), trial.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// All judged (trial, grade) pairs for a topic.
    pub fn judged(&self, topic: &str) -> Vec<(&str, u8)> {
        self.grades
            .iter()
            .filter(|((t, _), _)| t == topic)
            .map(|((_, d), g)| (d.as_str(), *g))
            .collect()
    }

    /// Trials judged eligible (grade 2) for a topic.
    pub fn relevant(&self, topic: &str) -> Vec<&str> {
        self.grades
            .iter()
            .filter(|((t, _), g)| t == topic && **g == 2)
            .map(|((_, d), _)| d.as_str())
            .collect()
    }

    pub fn has_positive(&self, topic: &str) -> bool {
        self.grades.iter().any(|((t, _), g)| t == topic && *g > 0)
    }
}

/// Accepted QA input layouts. Both use the canonical schema; the tag records
/// the source dataset in each item's meta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QaFormat {
    MedQaJsonl,
    MedMcqaJsonl,
}

impl QaFormat {
    pub fn tag(self) -> &'static str {
        match self {
            QaFormat::MedQaJsonl => "medqa",
            QaFormat::MedMcqaJsonl => "medmcqa",
        }
    }

    pub fn parse(name: &str) -> Option<QaFormat> {
        match name {
            "medqa-jsonl" => Some(QaFormat::MedQaJsonl),
            "medmcqa-jsonl" => Some(QaFormat::MedMcqaJsonl),
            _ => None,
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Validation(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((idx + 1, line));
        }
    }
    Ok(lines)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Load QA items from a canonical JSON-lines file, preserving input order.
pub fn load_qa(path: &Path, format: QaFormat) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in read_lines(path)? {
        let mut item: QAItem = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        item.validate()?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate QA item id `{}` at {}:{line_no}",
                item.id,
                path.display()
            )));
        }
        item.meta
            .entry("dataset".to_string())
            .or_insert_with(|| format.tag().to_string());
        items.push(item);
    }
    Ok(items)
}

/// Load patient topics from a canonical JSON-lines file.
pub fn load_topics(path: &Path) -> Result<Vec<PatientTopic>> {
    let mut topics = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in read_lines(path)? {
        let topic: PatientTopic = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if topic.text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "topic `{}` at {}:{line_no} has blank text",
                topic.id,
                path.display()
            )));
        }
        if !seen.insert(topic.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate topic id `{}`",
                topic.id
            )));
        }
        topics.push(topic);
    }
    Ok(topics)
}

/// Load trial documents from a canonical JSON-lines file.
pub fn load_trials(path: &Path) -> Result<Vec<TrialDoc>> {
    let mut trials = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in read_lines(path)? {
        let trial: TrialDoc = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if trial.inclusion.is_empty() && trial.exclusion.is_empty() {
            return Err(Error::Validation(format!(
                "trial `{}` at {}:{line_no} has no criteria",
                trial.id,
                path.display()
            )));
        }
        if !seen.insert(trial.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate trial id `{}`",
                trial.id
            )));
        }
        trials.push(trial);
    }
    Ok(trials)
}

/// Load qrels from whitespace-separated lines `topic-id 0 trial-id grade`.
/// Later duplicate (topic, trial) lines override earlier ones with a warning.
pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for (line_no, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: u8 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad grade `{}`", fields[3])))?;
        if grade > 2 {
            return Err(Error::Validation(format!(
                "grade {grade} outside {{0,1,2}} at {}:{line_no}",
                path.display()
            )));
        }
        let key = (fields[0].to_string(), fields[2].to_string());
        if let Some(old) = qrels.grades.insert(key, grade) {
            log::warn!(
                "qrels {}:{line_no}: duplicate judgment for ({}, {}); {} overrides {}",
                path.display(),
                fields[0],
                fields[2],
                grade,
                old
            );
        }
    }
    Ok(qrels)
}

/// Serialize QA items back to canonical JSON-lines. `save_qa` then `load_qa`
/// is the identity, and re-saving a loaded file is byte-identical.
pub fn save_qa(path: &Path, items: &[QAItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item)?).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn save_topics(path: &Path, topics: &[PatientTopic]) -> Result<()> {
    let mut out = String::new();
    for topic in topics {
        writeln!(out, "{}", serde_json::to_string(topic)?).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn save_trials(path: &Path, trials: &[TrialDoc]) -> Result<()> {
    let mut out = String::new();
    for trial in trials {
        writeln!(out, "{}", serde_json::to_string(trial)?).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn save_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut out = String::new();
    for ((topic, trial), grade) in &qrels.grades {
        writeln!(out, "{topic} 0 {trial} {grade}").expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

/// Split items into (kept, removed): an item is removed when its question or
/// gold-option text matches any demographic-essential lexicon pattern.
pub fn filter_demographic_essential(
    items: Vec<QAItem>,
    lexicon: &Lexicon,
) -> (Vec<QAItem>, Vec<QAItem>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for item in items {
        let gold_text = item.options.get(&item.gold).cloned().unwrap_or_default();
        if lexicon.matches_essential(&item.question) || lexicon.matches_essential(&gold_text) {
            removed.push(item);
        } else {
            kept.push(item);
        }
    }
    (kept, removed)
}

/// Count and share of one detected category within an axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryCount {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

/// Per-axis composition: each text is assigned to exactly one bucket, the
/// axis category of its earliest detected span, or Not Mentioned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisComposition {
    pub axis: Axis,
    pub rows: Vec<CategoryCount>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower word count of the bucket (width 10).
    pub lo: usize,
    pub count: usize,
}

/// Composition and length statistics for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionReport {
    pub dataset: String,
    pub total: usize,
    pub axes: Vec<AxisComposition>,
    pub word_count_histogram: Vec<HistogramBucket>,
}

pub const HISTOGRAM_BUCKET_WIDTH: usize = 10;

/// Composition report over arbitrary texts (QA questions, patient notes, or
/// trial summaries).
pub fn composition_stats<'a>(
    dataset: &str,
    texts: impl IntoIterator<Item = &'a str>,
    lexicon: &Lexicon,
) -> CompositionReport {
    let texts: Vec<&str> = texts.into_iter().collect();
    let total = texts.len();
    let axes_order = [Axis::Sex, Axis::Race, Axis::Sdoh];
    let mut counts: BTreeMap<Axis, BTreeMap<Option<Category>, usize>> = BTreeMap::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();

    for text in &texts {
        let spans = perturb::detect_attributes(text, lexicon);
        for axis in axes_order {
            let first = spans.iter().find(|s| s.category.axis() == axis);
            *counts
                .entry(axis)
                .or_default()
                .entry(first.map(|s| s.category))
                .or_insert(0) += 1;
        }
        let words = text.split_whitespace().count();
        let lo = (words / HISTOGRAM_BUCKET_WIDTH) * HISTOGRAM_BUCKET_WIDTH;
        *histogram.entry(lo).or_insert(0) += 1;
    }

    let axes = axes_order
        .iter()
        .map(|&axis| {
            let axis_counts = counts.get(&axis).cloned().unwrap_or_default();
            let mut rows = Vec::new();
            for cat in crate::category::ALL_CATEGORIES
                .iter()
                .filter(|c| c.axis() == axis)
            {
                let count = axis_counts.get(&Some(*cat)).copied().unwrap_or(0);
                rows.push(CategoryCount {
                    label: cat.label().to_string(),
                    count,
                    percent: percent(count, total),
                });
            }
            let not_mentioned = axis_counts.get(&None).copied().unwrap_or(0);
            rows.push(CategoryCount {
                label: "Not Mentioned".to_string(),
                count: not_mentioned,
                percent: percent(not_mentioned, total),
            });
            AxisComposition { axis, rows }
        })
        .collect();

    CompositionReport {
        dataset: dataset.to_string(),
        total,
        axes,
        word_count_histogram: histogram
            .into_iter()
            .map(|(lo, count)| HistogramBucket { lo, count })
            .collect(),
    }
}

/// Composition report over a QA corpus (question texts).
pub fn corpus_stats(dataset: &str, items: &[QAItem], lexicon: &Lexicon) -> CompositionReport {
    composition_stats(dataset, items.iter().map(|i| i.question.as_str()), lexicon)
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_qa_parses_canonical_lines() {
        let f = temp_file(
            r#"{"id":"q1","question":"What is the first-line agent?","options":{"A":"x","B":"y"},"answer":"A"}"#,
        );
        let items = load_qa(f.path(), QaFormat::MedQaJsonl).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].id, "q1");
        assert_eq!(items[0].gold, "A");
        assert_eq!(items[0].meta.get("dataset").unwrap(), "medqa");
    }

    #[test]
    fn load_qa_empty_file_is_empty() {
        let f = temp_file("");
        assert!(load_qa(f.path(), QaFormat::MedQaJsonl).unwrap().is_empty());
    }

    #[test]
    fn load_qa_rejects_answer_outside_options() {
        let f = temp_file(
            r#"{"id":"q1","question":"?","options":{"A":"x","B":"y","C":"z","D":"w"},"answer":"E"}"#,
        );
        assert!(matches!(
            load_qa(f.path(), QaFormat::MedQaJsonl),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn load_qa_rejects_duplicate_ids() {
        let f = temp_file(concat!(
            r#"{"id":"q1","question":"?","options":{"A":"x","B":"y"},"answer":"A"}"#,
            "\n",
            r#"{"id":"q1","question":"?","options":{"A":"x","B":"y"},"answer":"B"}"#,
        ));
        assert!(matches!(
            load_qa(f.path(), QaFormat::MedQaJsonl),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn load_qa_reports_line_number_on_malformed_input() {
        let f = temp_file(concat!(
            r#"{"id":"q1","question":"?","options":{"A":"x","B":"y"},"answer":"A"}"#,
            "\n",
            "not json",
        ));
        match load_qa(f.path(), QaFormat::MedQaJsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_topics_preserves_order_and_rejects_blank_text() {
        let f = temp_file(concat!(
            r#"{"id":"t1","text":"A 58-year-old with chest pain."}"#,
            "\n",
            r#"{"id":"t2","text":"A 40-year-old with cough."}"#,
        ));
        let topics = load_topics(f.path()).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].id, "t1");
        assert_eq!(topics[1].id, "t2");

        let bad = temp_file(r#"{"id":"t1","text":"  "}"#);
        assert!(matches!(load_topics(bad.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn load_trials_defaults_and_preserves_sex_restriction() {
        let f = temp_file(concat!(
            r#"{"id":"n1","title":"T","summary":"S","inclusion":["a","b","c"],"exclusion":["d"]}"#,
            "\n",
            r#"{"id":"n2","title":"T","summary":"S","inclusion":["a"],"exclusion":[],"sex_restriction":"female"}"#,
            "\n",
            r#"{"id":"n3","title":"T","summary":"S","inclusion":["a"],"exclusion":[],"sex_restriction":null}"#,
        ));
        let trials = load_trials(f.path()).unwrap();
        assert_eq!(trials[0].criteria_count(), 4);
        assert_eq!(trials[0].sex_restriction, SexRestriction::None);
        assert_eq!(trials[1].sex_restriction, SexRestriction::Female);
        assert_eq!(trials[2].sex_restriction, SexRestriction::None);

        let bad = temp_file(r#"{"id":"n1","title":"T","summary":"S","inclusion":[],"exclusion":[]}"#);
        assert!(matches!(load_trials(bad.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn load_qrels_parses_and_overrides_duplicates() {
        let f = temp_file("t1 0 n42 2\nt1 0 n43 0\nt1 0 n42 1\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.grade("t1", "n42"), 1); // last one wins
        assert_eq!(qrels.grade("t1", "n43"), 0);

        let bad = temp_file("t1 0 n42 3\n");
        assert!(matches!(load_qrels(bad.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn save_then_load_round_trips_byte_identically() {
        let f = temp_file("");
        let items = vec![QAItem {
            id: "q1".into(),
            question: "What next?".into(),
            options: [("A".to_string(), "x".to_string()), ("B".to_string(), "y".to_string())]
                .into_iter()
                .collect(),
            gold: "B".into(),
            meta: BTreeMap::new(),
        }];
        save_qa(f.path(), &items).unwrap();
        let first = std::fs::read(f.path()).unwrap();
        let loaded = load_qa(f.path(), QaFormat::MedQaJsonl).unwrap();
        // meta acquires the dataset tag on load; strip it to compare payloads.
        let mut stripped = loaded.clone();
        stripped[0].meta.clear();
        assert_eq!(stripped, items);
        save_qa(f.path(), &items).unwrap();
        assert_eq!(std::fs::read(f.path()).unwrap(), first);
    }

    #[test]
    fn filter_splits_on_essential_topics() {
        let lex = Lexicon::default_lexicon().unwrap();
        let make = |id: &str, q: &str| QAItem {
            id: id.into(),
            question: q.into(),
            options: [("A".to_string(), "yes".to_string()), ("B".to_string(), "no".to_string())]
                .into_iter()
                .collect(),
            gold: "A".into(),
            meta: BTreeMap::new(),
        };
        let items = vec![
            make("q1", "When should prostate cancer screening begin?"),
            make("q2", "What is the starting dose of metformin?"),
        ];
        let (kept, removed) = filter_demographic_essential(items, &lex);
        assert_eq!(kept.len(), 1);
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].id, "q1");

        let (kept, removed) = filter_demographic_essential(Vec::new(), &lex);
        assert!(kept.is_empty() && removed.is_empty());
    }

    #[test]
    fn stats_all_unmentioned_is_100_percent() {
        let lex = Lexicon::default_lexicon().unwrap();
        let report = composition_stats(
            "test",
            ["metformin dosing question", "lisinopril titration question"],
            &lex,
        );
        for axis in &report.axes {
            let nm = axis.rows.last().unwrap();
            assert_eq!(nm.label, "Not Mentioned");
            assert_eq!(nm.count, 2);
            assert!((nm.percent - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_percentage_arithmetic_matches_published_rounding() {
        // 75 mentions of 6149 items prints as 1.2% at one decimal.
        assert_eq!(format!("{:.1}", percent(75, 6149)), "1.2");
    }

    #[test]
    fn stats_percentages_recompute_from_counts() {
        let lex = Lexicon::default_lexicon().unwrap();
        let texts = vec![
            "A Hispanic man with fever",
            "A woman with cough",
            "metformin dosing",
            "A Black woman with fatigue",
        ];
        let report = composition_stats("t", texts.iter().copied(), &lex);
        for axis in &report.axes {
            let total_count: usize = axis.rows.iter().map(|r| r.count).sum();
            assert_eq!(total_count, report.total);
            let pct_sum: f64 = axis.rows.iter().map(|r| r.percent).sum();
            assert!((pct_sum - 100.0).abs() < 0.1);
            for row in &axis.rows {
                assert!((row.percent - percent(row.count, report.total)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn histogram_buckets_by_tens() {
        let lex = Lexicon::default_lexicon().unwrap();
        let text = vec!["w ".repeat(25).trim().to_string(); 10];
        let report = composition_stats("t", text.iter().map(|s| s.as_str()), &lex);
        assert_eq!(report.word_count_histogram.len(), 1);
        assert_eq!(report.word_count_histogram[0].lo, 20);
        assert_eq!(report.word_count_histogram[0].count, 10);
    }
}
