//! Response parsing and failure classification.

use std::collections::HashMap;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::Deserialize;

use super::{EligibilityLabel, FailureKind, ModelResponse, Parsed};

/// Versioned refusal lexicon, shipped as data because rejection counts feed a
/// reported metric.
#[derive(Debug, Clone, Deserialize)]
pub struct RefusalLexicon {
    pub version: u32,
    pub phrases: Vec<String>,
}

pub const DEFAULT_REFUSALS_JSON: &str = include_str!("../../data/refusals.json");

impl RefusalLexicon {
    pub fn default_lexicon() -> RefusalLexicon {
        serde_json::from_str(DEFAULT_REFUSALS_JSON).expect("embedded refusals parse")
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.phrases.iter().any(|p| lower.contains(p.as_str()))
    }
}

/// Operationalized repetition rule: some normalized substring of at least
/// `min_len` characters occurs at least `min_count` times.
#[derive(Debug, Clone, Copy)]
pub struct RepetitionConfig {
    pub min_len: usize,
    pub min_count: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        RepetitionConfig {
            min_len: 20,
            min_count: 3,
        }
    }
}

fn answer_marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\banswer(?:\s+is)?\s*[:\-]?\s*\(?([A-Za-z])\b\)?").expect("static regex")
    })
}

fn paren_letter_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-Za-z])\)").expect("static regex"))
}

fn leading_letter_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\(?([A-Za-z])\)?(?:[.:,]|\s|$)").expect("static regex"))
}

/// Extract the answered option label: explicit answer marker, first
/// parenthesized letter, leading letter, or a unique full-option-text match.
/// Returns `None` when no rule applies unambiguously.
pub fn parse_qa_answer(raw_text: &str, options: &IndexMap<String, String>) -> Option<String> {
    if options.is_empty() {
        return None;
    }
    let as_label = |letter: &str| -> Option<String> {
        let upper = letter.to_ascii_uppercase();
        options.contains_key(&upper).then_some(upper)
    };

    if let Some(caps) = answer_marker_regex().captures(raw_text) {
        if let Some(label) = as_label(&caps[1]) {
            return Some(label);
        }
    }
    for caps in paren_letter_regex().captures_iter(raw_text) {
        if let Some(label) = as_label(&caps[1]) {
            return Some(label);
        }
    }
    if let Some(caps) = leading_letter_regex().captures(raw_text.trim()) {
        if let Some(label) = as_label(&caps[1]) {
            return Some(label);
        }
    }
    let lower = raw_text.to_lowercase();
    let matches: Vec<&String> = options
        .iter()
        .filter(|(_, text)| !text.trim().is_empty() && lower.contains(&text.to_lowercase()))
        .map(|(label, _)| label)
        .collect();
    if matches.len() == 1 {
        return Some(matches[0].clone());
    }
    None
}

fn parse_label(text: &str) -> Option<EligibilityLabel> {
    let normalized: String = text
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('_', " ");
    match normalized.as_str() {
        "included" => Some(EligibilityLabel::Included),
        "not included" => Some(EligibilityLabel::NotIncluded),
        "excluded" => Some(EligibilityLabel::Excluded),
        "not excluded" => Some(EligibilityLabel::NotExcluded),
        _ => None,
    }
}

fn criterion_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:criterion|criteria)\s*#?\s*\d+\s*[:.\-]\s*(.+)$")
            .expect("static regex")
    })
}

/// Extract one eligibility verdict per criterion, in line order. A count
/// mismatch yields `None` (unparseable).
pub fn parse_eligibility(raw_text: &str, criteria_count: usize) -> Option<Vec<EligibilityLabel>> {
    if criteria_count == 0 {
        return None;
    }
    let mut verdicts = Vec::new();
    for line in raw_text.lines() {
        let candidate = match criterion_line_regex().captures(line) {
            Some(caps) => caps.get(1).map(|m| m.as_str().to_string()),
            None => Some(line.to_string()),
        };
        if let Some(text) = candidate {
            // Tolerate list bullets and numbering before a bare label.
            let stripped = text
                .trim_start()
                .trim_start_matches(['-', '*', '•'])
                .trim_start();
            let stripped = Regex::new(r"^\d+[.)]\s*")
                .expect("static regex")
                .replace(stripped, "");
            if let Some(label) = parse_label(&stripped) {
                verdicts.push(label);
            }
        }
    }
    (verdicts.len() == criteria_count).then_some(verdicts)
}

fn normalize_for_repetition(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sliding-window repetition check over the normalized text.
pub fn has_repetition(text: &str, cfg: RepetitionConfig) -> bool {
    let normalized = normalize_for_repetition(text);
    let indices: Vec<usize> = normalized
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(normalized.len()))
        .collect();
    let n_chars = indices.len() - 1;
    if n_chars < cfg.min_len {
        return false;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for k in 0..=(n_chars - cfg.min_len) {
        let window = &normalized[indices[k]..indices[k + cfg.min_len]];
        let c = counts.entry(window).or_insert(0);
        *c += 1;
        if *c >= cfg.min_count {
            return true;
        }
    }
    false
}

/// Classify a response into at most one failure kind. Priority: rejection,
/// then missing document, then repetition; a clean parse with none of those
/// is no failure.
pub fn classify_failure(
    raw_text: &str,
    parse_succeeded: bool,
    refusals: &RefusalLexicon,
    rep_cfg: RepetitionConfig,
) -> Option<FailureKind> {
    if refusals.matches(raw_text) {
        return Some(FailureKind::Rejection);
    }
    if raw_text.trim().is_empty() || !parse_succeeded {
        return Some(FailureKind::MissingDocument);
    }
    if has_repetition(raw_text, rep_cfg) {
        return Some(FailureKind::Repetition);
    }
    None
}

/// Parse a QA response in place and classify any failure.
pub fn finalize_qa(
    response: &mut ModelResponse,
    options: &IndexMap<String, String>,
    refusals: &RefusalLexicon,
    rep_cfg: RepetitionConfig,
) {
    let parsed = parse_qa_answer(&response.raw_text, options);
    response.parsed = match &parsed {
        Some(label) => Parsed::QaAnswer {
            label: label.clone(),
        },
        None => Parsed::Unparseable,
    };
    response.failure = classify_failure(&response.raw_text, parsed.is_some(), refusals, rep_cfg);
}

/// Parse an eligibility response in place and classify any failure.
pub fn finalize_eligibility(
    response: &mut ModelResponse,
    criteria_count: usize,
    refusals: &RefusalLexicon,
    rep_cfg: RepetitionConfig,
) {
    let parsed = parse_eligibility(&response.raw_text, criteria_count);
    response.parsed = match &parsed {
        Some(verdicts) => Parsed::Eligibility {
            verdicts: verdicts.clone(),
        },
        None => Parsed::Unparseable,
    };
    response.failure = classify_failure(&response.raw_text, parsed.is_some(), refusals, rep_cfg);
}
