//! Deterministic bias-injectable mock backend.
//!
//! The mock is the desk-scale test oracle: it answers from ground truth,
//! flips QA answers at a per-category rate, and demotes gold-relevant trials
//! by a per-category number of rank positions. Every decision is a pure
//! function of (profile seed, item id, category), so whole audits replay
//! byte-identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Backend, Message, ModelRequest, ModelResponse, Role, Usage};
use crate::category::Category;
use crate::error::{Error, Result};
use crate::stablehash;

/// Per-category bias knobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryBias {
    /// Probability of forcing a wrong QA answer.
    #[serde(default)]
    pub qa_flip_rate: f64,
    /// Positions by which gold-relevant trials are demoted in CTM rankings.
    #[serde(default)]
    pub rank_demote: u32,
}

/// Bias profile: category -> knobs, plus the base seed for all draws.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub seed: u64,
    #[serde(default)]
    pub categories: BTreeMap<Category, CategoryBias>,
}

impl BiasProfile {
    /// All categories share the same knobs.
    pub fn uniform(seed: u64, qa_flip_rate: f64, rank_demote: u32) -> BiasProfile {
        let categories = crate::category::ALL_CATEGORIES
            .iter()
            .map(|&c| {
                (
                    c,
                    CategoryBias {
                        qa_flip_rate,
                        rank_demote,
                    },
                )
            })
            .collect();
        BiasProfile { seed, categories }
    }

    /// The null profile: no flips, no demotion.
    pub fn null(seed: u64) -> BiasProfile {
        Self::uniform(seed, 0.0, 0)
    }

    pub fn set(&mut self, category: Category, bias: CategoryBias) {
        self.categories.insert(category, bias);
    }

    pub fn validate(&self) -> Result<()> {
        for (cat, bias) in &self.categories {
            if !(0.0..=1.0).contains(&bias.qa_flip_rate) {
                return Err(Error::Validation(format!(
                    "flip rate {} for {cat} outside [0,1]",
                    bias.qa_flip_rate
                )));
            }
        }
        Ok(())
    }

    /// Knobs for a category, falling back to Base rates with a warning when
    /// the category is not in the profile.
    pub fn bias_for(&self, category: Category) -> CategoryBias {
        if let Some(b) = self.categories.get(&category) {
            return *b;
        }
        log::warn!("bias profile has no entry for {category}; using base rates");
        self.categories
            .get(&Category::Base)
            .copied()
            .unwrap_or_default()
    }

    pub fn from_path(path: &std::path::Path) -> Result<BiasProfile> {
        let text = std::fs::read_to_string(path)?;
        let profile: BiasProfile = serde_json::from_str(&text)?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Ground truth for one QA item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTruth {
    /// Option labels in presentation order.
    pub labels: Vec<String>,
    pub gold: String,
}

/// One candidate-pool entry for a CTM topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub trial_id: String,
    pub grade: u8,
    pub criteria_count: usize,
}

/// Ground truth handed to the mock: gold answers and candidate pools.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default)]
    pub qa: BTreeMap<String, QaTruth>,
    #[serde(default)]
    pub ctm: BTreeMap<String, Vec<PoolEntry>>,
}

/// The mock backend.
pub struct MockBackend {
    pub profile: BiasProfile,
    pub truth: GroundTruth,
}

impl MockBackend {
    pub fn new(profile: BiasProfile, truth: GroundTruth) -> MockBackend {
        MockBackend { profile, truth }
    }

    /// The uniform draw used to decide a QA flip, exposed so simulations can
    /// reproduce mock decisions independently of the backend path.
    pub fn qa_draw(seed: u64, item_id: &str, category: Category) -> f64 {
        stablehash::unit_draw(seed, &["qa", item_id, category.key()])
    }

    /// The deterministic wrong answer: the next option label after gold,
    /// cyclically, in presentation order.
    pub fn wrong_answer(truth: &QaTruth) -> String {
        let gold_idx = truth
            .labels
            .iter()
            .position(|l| *l == truth.gold)
            .unwrap_or(0);
        truth.labels[(gold_idx + 1) % truth.labels.len()].clone()
    }

    fn answer_qa(&self, request: &ModelRequest, item_id: &str, category: Category) -> Result<ModelResponse> {
        let truth = self.truth.qa.get(item_id).ok_or_else(|| {
            Error::Validation(format!("mock has no QA ground truth for `{item_id}`"))
        })?;
        let bias = self.profile.bias_for(category);
        let draw = Self::qa_draw(self.profile.seed, item_id, category);
        let label = if draw < bias.qa_flip_rate {
            Self::wrong_answer(truth)
        } else {
            truth.gold.clone()
        };
        let raw_text = format!("Answer: {label}");
        Ok(self.respond(request, raw_text))
    }

    /// Base-order positions: eligible trials (grade 2) first by id, then the
    /// rest by id, mirroring how grade-consistent verdicts would rank.
    pub fn base_order(pool: &[PoolEntry]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.sort_by(|&a, &b| {
            let ka = (pool[a].grade != 2, pool[a].trial_id.as_str());
            let kb = (pool[b].grade != 2, pool[b].trial_id.as_str());
            ka.cmp(&kb)
        });
        idx
    }

    /// Demote every grade-2 trial by `demote` positions, bottom-most first so
    /// upper targets keep their original positions while moving.
    pub fn demoted_order(pool: &[PoolEntry], demote: u32) -> Vec<usize> {
        let mut order = Self::base_order(pool);
        if demote == 0 {
            return order;
        }
        let relevant_positions: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &i)| pool[i].grade == 2)
            .map(|(pos, _)| pos)
            .collect();
        for &pos in relevant_positions.iter().rev() {
            let entry = order.remove(pos);
            let target = (pos + demote as usize).min(order.len());
            order.insert(target, entry);
        }
        order
    }

    fn answer_ctm(
        &self,
        request: &ModelRequest,
        topic_id: &str,
        trial_id: &str,
        category: Category,
    ) -> Result<ModelResponse> {
        let pool = self.truth.ctm.get(topic_id).ok_or_else(|| {
            Error::Validation(format!("mock has no candidate pool for topic `{topic_id}`"))
        })?;
        let entry_idx = pool
            .iter()
            .position(|e| e.trial_id == trial_id)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "trial `{trial_id}` not in mock pool for topic `{topic_id}`"
                ))
            })?;
        let entry = &pool[entry_idx];
        let bias = self.profile.bias_for(category);

        let verdicts: Vec<&str> = if bias.rank_demote == 0 {
            match entry.grade {
                2 => vec!["included"; entry.criteria_count],
                1 => std::iter::once("excluded")
                    .chain(std::iter::repeat("not excluded").take(entry.criteria_count - 1))
                    .collect(),
                _ => vec!["not included"; entry.criteria_count],
            }
        } else {
            // Score ladder realizing the demoted ordering: position p of L
            // gets floor((L - p) * n / L) included verdicts. Exact whenever
            // the criteria count is at least the pool size.
            let order = Self::demoted_order(pool, bias.rank_demote);
            let position = order
                .iter()
                .position(|&i| i == entry_idx)
                .expect("entry present in order");
            let levels = pool.len();
            let n = entry.criteria_count;
            let included = ((levels - position) * n) / levels;
            let mut v: Vec<&str> = vec!["included"; included];
            v.extend(std::iter::repeat("not included").take(n - included));
            v
        };
        let raw_text = verdicts
            .iter()
            .enumerate()
            .map(|(i, v)| format!("criterion {}: {v}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(self.respond(request, raw_text))
    }

    fn respond(&self, request: &ModelRequest, raw_text: String) -> ModelResponse {
        let prompt_chars: usize = request.messages.iter().map(|m| m.content.len()).sum();
        let usage = Usage {
            prompt_tokens: (prompt_chars / 4) as u64,
            completion_tokens: (raw_text.len() / 4) as u64,
        };
        ModelResponse::raw(&request.request_id, self.name(), raw_text, usage, 0)
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        request.validate()?;
        let category = request
            .meta
            .get("category")
            .and_then(|k| Category::from_key(k))
            .ok_or_else(|| Error::Validation("mock request missing category meta".into()))?;
        match request.meta.get("kind").map(|s| s.as_str()) {
            Some("qa") => {
                let item_id = request
                    .meta
                    .get("item_id")
                    .ok_or_else(|| Error::Validation("mock request missing item_id".into()))?;
                self.answer_qa(request, item_id, category)
            }
            Some("ctm") => {
                let topic_id = request
                    .meta
                    .get("item_id")
                    .ok_or_else(|| Error::Validation("mock request missing item_id".into()))?;
                let trial_id = request
                    .meta
                    .get("trial_id")
                    .ok_or_else(|| Error::Validation("mock request missing trial_id".into()))?;
                self.answer_ctm(request, topic_id, trial_id, category)
            }
            other => Err(Error::Validation(format!(
                "mock request has unknown kind {other:?}"
            ))),
        }
    }
}

/// Convenience for building mock QA requests with the meta the mock needs.
pub fn mock_qa_request(item_id: &str, category: Category, prompt: String) -> ModelRequest {
    ModelRequest::new(
        format!("qa:{item_id}:{category}"),
        "mock",
        vec![Message {
            role: Role::User,
            content: prompt,
        }],
    )
    .with_meta("kind", "qa")
    .with_meta("item_id", item_id)
    .with_meta("category", category.key())
}
