//! SDOH term lexicon: surface-form detection patterns, injection templates,
//! neutral replacements, and demographic-essential topic patterns.
//!
//! The lexicon is data, not code: `data/lexicon.json` ships embedded as the
//! default and any compatible JSON file can replace it. Patterns are regex
//! fragments matched case-insensitively with word-boundary checks applied on
//! both ends of the reported span (the `regex` crate has no lookaround, so
//! boundaries are verified on the match offsets instead).

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use crate::category::Category;
use crate::error::{Error, Result};

/// Embedded default lexicon.
pub const DEFAULT_LEXICON_JSON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Deserialize)]
struct RawEntry {
    surface_forms: Vec<String>,
    templates: Vec<String>,
    #[serde(default)]
    neutral: String,
    #[serde(default)]
    essential: Vec<String>,
}

/// One compiled detection pattern.
#[derive(Debug)]
pub struct SurfacePattern {
    /// Original pattern text, for diagnostics.
    pub source: String,
    regex: Regex,
    /// Whether the span is narrowed to capture group 1.
    captures_span: bool,
}

/// A single raw match before overlap resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawMatch {
    pub start: usize,
    pub end: usize,
}

impl SurfacePattern {
    fn compile(source: &str) -> Result<SurfacePattern> {
        let regex = Regex::new(&format!("(?i)(?:{source})"))
            .map_err(|e| Error::Validation(format!("invalid lexicon pattern `{source}`: {e}")))?;
        Ok(SurfacePattern {
            source: source.to_string(),
            captures_span: regex.captures_len() > 1,
            regex,
        })
    }

    /// All boundary-checked matches in `text`, reported as narrowed spans.
    pub fn find_all(&self, text: &str) -> Vec<RawMatch> {
        let mut out = Vec::new();
        for caps in self.regex.captures_iter(text) {
            let whole = caps.get(0).expect("group 0 always present");
            if !word_bounded(text, whole.start(), whole.end()) {
                continue;
            }
            let span = if self.captures_span {
                match caps.get(1) {
                    Some(g) => RawMatch {
                        start: g.start(),
                        end: g.end(),
                    },
                    None => RawMatch {
                        start: whole.start(),
                        end: whole.end(),
                    },
                }
            } else {
                RawMatch {
                    start: whole.start(),
                    end: whole.end(),
                }
            };
            out.push(span);
        }
        out
    }
}

/// Word-boundary check on byte offsets: the characters adjacent to the match
/// must not be alphanumeric.
pub fn word_bounded(text: &str, start: usize, end: usize) -> bool {
    let before_ok = start == 0
        || text[..start]
            .chars()
            .next_back()
            .map(|c| !c.is_alphanumeric())
            .unwrap_or(true);
    let after_ok = end >= text.len()
        || text[end..]
            .chars()
            .next()
            .map(|c| !c.is_alphanumeric())
            .unwrap_or(true);
    before_ok && after_ok
}

/// Compiled per-category lexicon entry.
#[derive(Debug)]
pub struct CategoryEntry {
    pub category: Category,
    pub surface_forms: Vec<SurfacePattern>,
    pub templates: Vec<String>,
    pub neutral: String,
    pub essential: Vec<SurfacePattern>,
}

/// The full compiled lexicon over all non-Base categories.
#[derive(Debug)]
pub struct Lexicon {
    entries: BTreeMap<Category, CategoryEntry>,
}

impl Lexicon {
    /// Compile the embedded default lexicon.
    pub fn default_lexicon() -> Result<Lexicon> {
        Self::from_json(DEFAULT_LEXICON_JSON)
    }

    pub fn from_path(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(json: &str) -> Result<Lexicon> {
        let raw: BTreeMap<String, RawEntry> = serde_json::from_str(json)?;
        let mut entries = BTreeMap::new();
        for (key, entry) in raw {
            let category = Category::from_key(&key)
                .ok_or_else(|| Error::Validation(format!("unknown lexicon category `{key}`")))?;
            if category == Category::Base {
                return Err(Error::Validation(
                    "the base category takes no lexicon entry".into(),
                ));
            }
            if entry.surface_forms.is_empty() {
                return Err(Error::Validation(format!(
                    "category `{key}` has no surface forms"
                )));
            }
            if entry.templates.is_empty() {
                return Err(Error::Validation(format!(
                    "category `{key}` has no injection templates"
                )));
            }
            let surface_forms = entry
                .surface_forms
                .iter()
                .map(|p| SurfacePattern::compile(p))
                .collect::<Result<Vec<_>>>()?;
            let essential = entry
                .essential
                .iter()
                .map(|p| SurfacePattern::compile(p))
                .collect::<Result<Vec<_>>>()?;
            entries.insert(
                category,
                CategoryEntry {
                    category,
                    surface_forms,
                    templates: entry.templates,
                    neutral: entry.neutral,
                    essential,
                },
            );
        }
        for cat in Category::non_base() {
            if !entries.contains_key(&cat) {
                return Err(Error::Validation(format!(
                    "lexicon is missing category `{}`",
                    cat.key()
                )));
            }
        }
        Ok(Lexicon { entries })
    }

    pub fn entry(&self, category: Category) -> Option<&CategoryEntry> {
        self.entries.get(&category)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CategoryEntry> {
        self.entries.values()
    }

    /// Whether `text` contains at least one surface form of `category`,
    /// ignoring cross-category overlap resolution.
    pub fn mentions(&self, text: &str, category: Category) -> bool {
        self.entries
            .get(&category)
            .map(|e| e.surface_forms.iter().any(|p| !p.find_all(text).is_empty()))
            .unwrap_or(false)
    }

    /// Whether `text` matches any demographic-essential pattern of any category.
    pub fn matches_essential(&self, text: &str) -> bool {
        self.entries
            .values()
            .any(|e| e.essential.iter().any(|p| !p.find_all(text).is_empty()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lexicon_compiles_and_covers_all_categories() {
        let lex = Lexicon::default_lexicon().unwrap();
        for cat in Category::non_base() {
            let entry = lex.entry(cat).unwrap();
            assert!(!entry.surface_forms.is_empty());
            assert!(!entry.templates.is_empty());
        }
    }

    #[test]
    fn word_boundaries_reject_interior_matches() {
        let lex = Lexicon::default_lexicon().unwrap();
        // "man" inside "management" and "woman" must not match Male.
        assert!(!lex.mentions("management of the woman's condition", Category::Male));
        assert!(lex.mentions("a 40-year-old man presents", Category::Male));
    }

    #[test]
    fn clinical_color_terms_are_not_race_mentions() {
        let lex = Lexicon::default_lexicon().unwrap();
        assert!(!lex.mentions("elevated white blood cell count", Category::White));
        assert!(!lex.mentions("black tarry stool noted", Category::Black));
        assert!(lex.mentions("a White patient with fever", Category::White));
        assert!(lex.mentions("a Black woman with fever", Category::Black));
    }

    #[test]
    fn trailing_punctuation_forms_match() {
        let lex = Lexicon::default_lexicon().unwrap();
        assert!(lex.mentions("the patient identifies as LGBT+ and", Category::Lgbt));
        assert!(lex.mentions("LGBTQ community health", Category::Lgbt));
    }

    #[test]
    fn essential_patterns_flag_sex_specific_topics() {
        let lex = Lexicon::default_lexicon().unwrap();
        assert!(lex.matches_essential("screening for prostate cancer"));
        assert!(lex.matches_essential("a pregnant patient at 30 weeks gestation"));
        assert!(lex.matches_essential("management of sickle-cell disease"));
        assert!(!lex.matches_essential("metformin dosing for type 2 diabetes"));
    }

    #[test]
    fn missing_category_is_rejected() {
        let err = Lexicon::from_json(r#"{"male": {"surface_forms": ["man"], "templates": ["man"], "neutral": "patient"}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
