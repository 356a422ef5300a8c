//! SDOH attribute detection, neutralization, counterfactual injection, and
//! contrastive triplet construction.
//!
//! Detection is lexicon/rule based rather than statistical NER: every
//! decision is deterministic given the lexicon, the text, and a seed, which
//! keeps audits reproducible and the lexicon itself user-extensible data.

use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::category::{Axis, Category};
use crate::corpus::{SexRestriction, TrialDoc};
use crate::error::{Error, Result};
use crate::lexicon::{word_bounded, Lexicon};
use crate::stablehash;

/// Subject nouns an injection can attach to, longest first so the leftmost
/// scan prefers the longer word at equal offsets.
const SUBJECT_WORDS: [&str; 13] = [
    "individual",
    "gentleman",
    "patient",
    "person",
    "women",
    "woman",
    "female",
    "male",
    "lady",
    "girl",
    "men",
    "man",
    "boy",
];

fn age_phrase_regex() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\d{1,3}[\s-]?year[\s-]?old").expect("static regex"))
}

fn subject_regex() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let alt = SUBJECT_WORDS.join("|");
        Regex::new(&format!("(?i)(?:{alt})")).expect("static regex")
    })
}

/// One detected attribute mention. Offsets are byte offsets into the source
/// text and always lie on character boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpan {
    pub category: Category,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// One recorded text edit: `replacement` substituted for `[start, end)` of
/// the source text. Applying a variant's edits to its source reproduces the
/// variant text exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

/// A counterfactually perturbed (or neutral) query text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub base_id: String,
    pub category: Category,
    pub text: String,
    pub provenance: Vec<Edit>,
}

/// An (anchor, positive, negative) contrastive training triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: Variant,
    pub positive: Variant,
    pub negative: Variant,
}

/// A category skipped during variant generation, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub base_id: String,
    pub category: Category,
    pub reason: String,
}

/// Output of [`generate_variants`]: the neutral base plus per-category
/// variants and any guard-blocked skips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedVariants {
    pub base: Variant,
    pub variants: Vec<Variant>,
    pub skips: Vec<SkipRecord>,
}

/// Find all attribute mentions: non-overlapping maximal matches, sorted by
/// start. Overlaps resolve longest-match-first, then earliest, then category
/// order.
pub fn detect_attributes(text: &str, lexicon: &Lexicon) -> Vec<AttributeSpan> {
    let mut candidates: Vec<AttributeSpan> = Vec::new();
    for entry in lexicon.entries() {
        for pattern in &entry.surface_forms {
            for m in pattern.find_all(text) {
                let span = AttributeSpan {
                    category: entry.category,
                    start: m.start,
                    end: m.end,
                    text: text[m.start..m.end].to_string(),
                };
                if !candidates.contains(&span) {
                    candidates.push(span);
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.category.cmp(&b.category))
    });
    let mut selected: Vec<AttributeSpan> = Vec::new();
    for cand in candidates {
        let overlaps = selected
            .iter()
            .any(|s| cand.start < s.end && s.start < cand.end);
        if !overlaps {
            selected.push(cand);
        }
    }
    selected.sort_by_key(|s| s.start);
    selected
}

/// The set of categories detected in `text` after overlap resolution.
pub fn factor_set(text: &str, lexicon: &Lexicon) -> BTreeSet<Category> {
    detect_attributes(text, lexicon)
        .into_iter()
        .map(|s| s.category)
        .collect()
}

pub fn factor_count(text: &str, lexicon: &Lexicon) -> usize {
    factor_set(text, lexicon).len()
}

fn is_subject_word(word: &str) -> bool {
    let lower = word.to_lowercase();
    SUBJECT_WORDS.contains(&lower.as_str())
}

/// Compute the final edit for replacing `span` in `text`, applying local
/// seam cleanup (whitespace collapse, duplicate-word elision) so edits stay
/// byte-exact and confined to the recorded span.
fn seam_edit(text: &str, start: usize, end: usize, replacement: &str) -> Edit {
    let mut start = start;
    let mut end = end;
    let mut replacement = replacement.to_string();

    // A multi-word match ending in a subject noun keeps that noun.
    let matched = &text[start..end];
    let words: Vec<&str> = matched.split_whitespace().collect();
    if words.len() >= 2 {
        if let Some(last) = words.last() {
            let trimmed = last.trim_matches(|c: char| !c.is_alphanumeric());
            if is_subject_word(trimmed) {
                replacement = trimmed.to_string();
            }
        }
    }

    if !replacement.is_empty() {
        // Elide a duplicated word at the right seam ("patient patient").
        let last_word = replacement
            .split_whitespace()
            .next_back()
            .unwrap_or("")
            .to_lowercase();
        let post = &text[end..];
        let ws_len: usize = post.chars().take_while(|c| c.is_whitespace()).map(|c| c.len_utf8()).sum();
        if ws_len > 0 {
            let after = &post[ws_len..];
            let next_word: String = after
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '-')
                .collect();
            if !last_word.is_empty() && next_word.to_lowercase() == last_word {
                end += ws_len + next_word.len();
            }
        }
        return Edit { start, end, replacement };
    }

    // Empty replacement: absorb surrounding whitespace so no double spaces
    // or dangling space-before-punctuation remain at the seam.
    let pre = &text[..start];
    let post = &text[end..];
    let pre_ws: usize = pre
        .chars()
        .rev()
        .take_while(|c| c.is_whitespace())
        .map(|c| c.len_utf8())
        .sum();
    let post_ws: usize = post
        .chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| c.len_utf8())
        .sum();
    let post_first = post[post_ws..].chars().next();
    if matches!(post_first, Some('.' | ',' | ';' | ':' | '?' | '!')) {
        start -= pre_ws;
        end += post_ws;
    } else if pre_ws > 0 && post_ws > 0 {
        end += post_ws;
    } else if pre.is_empty() && post_ws > 0 {
        end += post_ws;
    }
    Edit { start, end, replacement }
}

/// Apply edits (source coordinates, non-overlapping) right-to-left.
pub fn apply_edits(text: &str, edits: &[Edit]) -> String {
    let mut sorted: Vec<&Edit> = edits.iter().collect();
    sorted.sort_by_key(|e| e.start);
    let mut out = text.to_string();
    for edit in sorted.iter().rev() {
        out.replace_range(edit.start..edit.end, &edit.replacement);
    }
    out
}

fn validate_spans(text: &str, spans: &[AttributeSpan]) -> Result<()> {
    let mut prev_end = 0usize;
    for span in spans {
        if span.start >= span.end || span.end > text.len() {
            return Err(Error::Validation(format!(
                "span {}..{} out of range for text of length {}",
                span.start,
                span.end,
                text.len()
            )));
        }
        if span.start < prev_end {
            return Err(Error::Validation(format!(
                "overlapping spans at offset {}",
                span.start
            )));
        }
        if !text.is_char_boundary(span.start) || !text.is_char_boundary(span.end) {
            return Err(Error::Validation("span not on character boundary".into()));
        }
        if text[span.start..span.end] != span.text {
            return Err(Error::Validation(format!(
                "span text `{}` does not match source at {}..{}",
                span.text, span.start, span.end
            )));
        }
        prev_end = span.end;
    }
    Ok(())
}

/// Replace each detected span with its category's neutral form. Spans must
/// come from [`detect_attributes`] on the same text (sorted, non-overlapping).
pub fn neutralize(text: &str, spans: &[AttributeSpan], lexicon: &Lexicon) -> Result<(String, Vec<Edit>)> {
    validate_spans(text, spans)?;
    let mut edits = Vec::with_capacity(spans.len());
    for span in spans {
        let neutral = lexicon
            .entry(span.category)
            .map(|e| e.neutral.as_str())
            .unwrap_or("");
        edits.push(seam_edit(text, span.start, span.end, neutral));
    }
    Ok((apply_edits(text, &edits), edits))
}

/// Neutralize until no attribute survives, folding all passes' edits into
/// coordinates of the original text where possible. Returns the neutral text
/// and the first-pass edits (the provenance of the Base variant).
pub fn neutralize_full(text: &str, lexicon: &Lexicon) -> Result<(String, Vec<Edit>)> {
    let spans = detect_attributes(text, lexicon);
    let (mut out, edits) = neutralize(text, &spans, lexicon)?;
    for _ in 0..3 {
        let residual = detect_attributes(&out, lexicon);
        if residual.is_empty() {
            return Ok((out, edits));
        }
        let (next, _) = neutralize(&out, &residual, lexicon)?;
        out = next;
    }
    if detect_attributes(&out, lexicon).is_empty() {
        Ok((out, edits))
    } else {
        Err(Error::Validation(format!(
            "text could not be fully neutralized: `{out}`"
        )))
    }
}

/// Earliest word-bounded subject mention, preferring the longer word when two
/// start at the same offset.
fn find_subject(text: &str) -> Option<(usize, usize)> {
    subject_regex()
        .find_iter(text)
        .find(|m| word_bounded(text, m.start(), m.end()))
        .map(|m| (m.start(), m.end()))
}

fn find_age_phrase(text: &str) -> Option<(usize, usize)> {
    age_phrase_regex()
        .find_iter(text)
        .find(|m| word_bounded(text, m.start(), m.end()))
        .map(|m| (m.start(), m.end()))
}

/// Inject `category`'s descriptor at the first subject mention of `text`.
///
/// Deterministic given (text, category, seed): the template is chosen by a
/// stable seeded hash. The text must not already carry the category; it may
/// carry others, which is how compounded negatives are built.
pub fn inject(
    base_id: &str,
    text: &str,
    category: Category,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Variant> {
    if category == Category::Base {
        return Err(Error::Contract("cannot inject the base category".into()));
    }
    let entry = lexicon
        .entry(category)
        .ok_or_else(|| Error::Validation(format!("lexicon has no entry for {category}")))?;
    if factor_set(text, lexicon).contains(&category) {
        return Err(Error::Injection(format!(
            "category {category} already present in text"
        )));
    }
    let template_idx = stablehash::choice(seed, &[text, category.key()], entry.templates.len());
    let template = &entry.templates[template_idx];

    let edit = if let Some((s, e)) = find_subject(text) {
        let subject = &text[s..e];
        let filled = if template.contains("{subject}") {
            template.replace("{subject}", subject)
        } else {
            template.clone()
        };
        seam_edit(text, s, e, &filled)
    } else if let Some((_, e)) = find_age_phrase(text) {
        let filled = if template.contains("{subject}") {
            template.replace("{subject}", "patient")
        } else {
            template.clone()
        };
        Edit {
            start: e,
            end: e,
            replacement: format!(" {filled}"),
        }
    } else {
        return Err(Error::Injection(format!(
            "no subject mention found in `{text}`"
        )));
    };

    let new_text = apply_edits(text, std::slice::from_ref(&edit));
    if !factor_set(&new_text, lexicon).contains(&category) {
        return Err(Error::Injection(format!(
            "template `{template}` for {category} produced undetectable text"
        )));
    }
    Ok(Variant {
        base_id: base_id.to_string(),
        category,
        text: new_text,
        provenance: vec![edit],
    })
}

/// False iff `category` is a sex category conflicting with the trial's sex
/// restriction. Only the sex axis is guarded.
pub fn guard_allows(category: Category, trial: &TrialDoc) -> bool {
    if category.axis() != Axis::Sex {
        return true;
    }
    match (category, trial.sex_restriction) {
        (_, SexRestriction::None) => true,
        (Category::Male, SexRestriction::Male) => true,
        (Category::Female, SexRestriction::Female) => true,
        _ => false,
    }
}

/// Build the Base variant plus one variant per requested category, all from
/// the same neutral text. Categories blocked by the guard are skipped with a
/// recorded reason.
pub fn generate_variants(
    item_id: &str,
    text: &str,
    categories: &[Category],
    lexicon: &Lexicon,
    seed: u64,
    guard: Option<&TrialDoc>,
) -> Result<GeneratedVariants> {
    let (base_text, base_edits) = neutralize_full(text, lexicon)?;
    let base = Variant {
        base_id: item_id.to_string(),
        category: Category::Base,
        text: base_text.clone(),
        provenance: base_edits,
    };
    let mut variants = Vec::new();
    let mut skips = Vec::new();
    let mut seen = BTreeSet::new();
    for &cat in categories {
        if cat == Category::Base || !seen.insert(cat) {
            continue;
        }
        if let Some(trial) = guard {
            if !guard_allows(cat, trial) {
                log::info!(
                    "skipping {cat} for item {item_id}: trial {} restricts sex",
                    trial.id
                );
                skips.push(SkipRecord {
                    base_id: item_id.to_string(),
                    category: cat,
                    reason: format!("trial {} sex restriction", trial.id),
                });
                continue;
            }
        }
        variants.push(inject(item_id, &base_text, cat, lexicon, seed)?);
    }
    Ok(GeneratedVariants {
        base,
        variants,
        skips,
    })
}

/// How negatives are paired with positives in [`build_triplets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletMode {
    /// One seeded-deterministic extra category per positive.
    #[default]
    Seeded,
    /// Every admissible extra category per positive.
    Exhaustive,
}

fn negative_candidates(positive: &Variant, lexicon: &Lexicon) -> Vec<Category> {
    let present = factor_set(&positive.text, lexicon);
    let prefer_sdoh = matches!(positive.category.axis(), Axis::Race | Axis::Sex);
    let pool: Vec<Category> = if prefer_sdoh {
        Category::non_base()
            .filter(|c| c.axis() == Axis::Sdoh && !present.contains(c))
            .collect()
    } else {
        Vec::new()
    };
    if !pool.is_empty() {
        return pool;
    }
    Category::non_base()
        .filter(|c| !present.contains(c) && *c != positive.category)
        .collect()
}

/// Build triplets: anchor = the Base variant, positive = each single-factor
/// variant, negative = the positive with one more category injected. The
/// extra category is seeded-deterministic and prefers the SDOH axis when the
/// positive is a race or sex variant; exhaustive mode emits all pairs.
pub fn build_triplets(
    base: &Variant,
    variants: &[Variant],
    lexicon: &Lexicon,
    seed: u64,
    mode: TripletMode,
) -> Result<Vec<Triplet>> {
    if base.category != Category::Base {
        return Err(Error::Contract("anchor must be the base variant".into()));
    }
    let singles: Vec<&Variant> = variants
        .iter()
        .filter(|v| {
            v.base_id == base.base_id
                && v.category != Category::Base
                && factor_count(&v.text, lexicon) == 1
        })
        .collect();
    let mut triplets = Vec::new();
    for positive in singles {
        let candidates = negative_candidates(positive, lexicon);
        if candidates.is_empty() {
            continue;
        }
        match mode {
            TripletMode::Seeded => {
                let start = stablehash::choice(
                    seed,
                    &[&base.base_id, positive.category.key(), "negative"],
                    candidates.len(),
                );
                // Rotate from the seeded pick so an unusable candidate falls
                // through deterministically to the next one.
                let mut built = None;
                for offset in 0..candidates.len() {
                    let c2 = candidates[(start + offset) % candidates.len()];
                    if let Some(t) = try_triplet(base, positive, c2, lexicon, seed) {
                        built = Some(t);
                        break;
                    }
                }
                match built {
                    Some(t) => triplets.push(t),
                    None => log::warn!(
                        "no usable negative for {} positive {}",
                        base.base_id,
                        positive.category
                    ),
                }
            }
            TripletMode::Exhaustive => {
                for &c2 in &candidates {
                    if let Some(t) = try_triplet(base, positive, c2, lexicon, seed) {
                        triplets.push(t);
                    }
                }
            }
        }
    }
    Ok(triplets)
}

/// Inject `c2` on top of the positive and keep the result only if the full
/// triplet invariant holds (injection can occasionally mask an existing
/// factor, e.g. by landing between an adjective and its subject noun).
fn try_triplet(
    base: &Variant,
    positive: &Variant,
    c2: Category,
    lexicon: &Lexicon,
    seed: u64,
) -> Option<Triplet> {
    let negative = inject(&base.base_id, &positive.text, c2, lexicon, seed).ok()?;
    let fa = factor_count(&base.text, lexicon);
    let fp = factor_count(&positive.text, lexicon);
    let fneg = factor_count(&negative.text, lexicon);
    if fa == 0 && fp == 1 && fneg > fp {
        Some(Triplet {
            anchor: base.clone(),
            positive: positive.clone(),
            negative,
        })
    } else {
        None
    }
}
