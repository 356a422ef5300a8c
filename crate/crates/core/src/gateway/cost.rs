//! API cost accounting: flat per-query or per-1K-token rates per backend.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelResponse;
use crate::error::{Error, Result};

/// A backend's pricing, either flat per query or per 1K tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostRate {
    Flat {
        per_query: f64,
    },
    PerToken {
        per_1k_prompt: f64,
        per_1k_completion: f64,
    },
}

impl CostRate {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CostRate::Flat { per_query } => per_query >= 0.0,
            CostRate::PerToken {
                per_1k_prompt,
                per_1k_completion,
            } => per_1k_prompt >= 0.0 && per_1k_completion >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("cost rates must be >= 0".into()))
        }
    }
}

/// Backend name -> rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub backends: BTreeMap<String, CostRate>,
}

impl CostTable {
    pub fn from_path(path: &std::path::Path) -> Result<CostTable> {
        let text = std::fs::read_to_string(path)?;
        let table: CostTable = serde_json::from_str(&text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for rate in self.backends.values() {
            rate.validate()?;
        }
        Ok(())
    }
}

/// Per-backend and total USD. Values stay unrounded; rounding to cents
/// happens only in `Display`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub per_backend: BTreeMap<String, f64>,
    pub total: f64,
}

impl std::fmt::Display for CostSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (backend, usd) in &self.per_backend {
            writeln!(f, "{backend}: {usd:.2} USD")?;
        }
        write!(f, "total: {:.2} USD", self.total)
    }
}

/// Sum costs over responses. Every backend seen must be priced in the table.
pub fn estimate_cost(responses: &[ModelResponse], table: &CostTable) -> Result<CostSummary> {
    let mut missing: Vec<String> = Vec::new();
    let mut per_backend: BTreeMap<String, f64> = BTreeMap::new();
    for resp in responses {
        let rate = match table.backends.get(&resp.backend) {
            Some(rate) => rate,
            None => {
                if !missing.contains(&resp.backend) {
                    missing.push(resp.backend.clone());
                }
                continue;
            }
        };
        let cost = match *rate {
            CostRate::Flat { per_query } => per_query,
            CostRate::PerToken {
                per_1k_prompt,
                per_1k_completion,
            } => {
                resp.usage.prompt_tokens as f64 / 1000.0 * per_1k_prompt
                    + resp.usage.completion_tokens as f64 / 1000.0 * per_1k_completion
            }
        };
        *per_backend.entry(resp.backend.clone()).or_insert(0.0) += cost;
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "cost table is missing backend(s): {}",
            missing.join(", ")
        )));
    }
    let total = per_backend.values().sum();
    Ok(CostSummary { per_backend, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Usage;

    fn response(backend: &str, prompt: u64, completion: u64) -> ModelResponse {
        ModelResponse::raw(
            "r",
            backend,
            "text".into(),
            Usage {
                prompt_tokens: prompt,
                completion_tokens: completion,
            },
            0,
        )
    }

    fn flat_table(backend: &str, per_query: f64) -> CostTable {
        CostTable {
            backends: [(backend.to_string(), CostRate::Flat { per_query })]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn hundred_flat_queries_at_six_cents() {
        let responses: Vec<ModelResponse> = (0..100).map(|_| response("gpt-4", 10, 10)).collect();
        let summary = estimate_cost(&responses, &flat_table("gpt-4", 0.06)).unwrap();
        assert!((summary.total - 6.00).abs() < 1e-12);
        assert_eq!(format!("{summary}"), "gpt-4: 6.00 USD\ntotal: 6.00 USD");
    }

    #[test]
    fn hundred_flat_queries_at_five_cents() {
        let responses: Vec<ModelResponse> = (0..100).map(|_| response("gemini", 10, 10)).collect();
        let summary = estimate_cost(&responses, &flat_table("gemini", 0.05)).unwrap();
        assert!((summary.total - 5.00).abs() < 1e-12);
    }

    #[test]
    fn zero_queries_cost_zero() {
        let summary = estimate_cost(&[], &flat_table("gpt-4", 0.06)).unwrap();
        assert_eq!(summary.total, 0.0);
    }

    #[test]
    fn token_rates_accumulate() {
        let table = CostTable {
            backends: [(
                "gpt-4".to_string(),
                CostRate::PerToken {
                    per_1k_prompt: 0.03,
                    per_1k_completion: 0.06,
                },
            )]
            .into_iter()
            .collect(),
        };
        let responses = vec![response("gpt-4", 1000, 500), response("gpt-4", 2000, 0)];
        let summary = estimate_cost(&responses, &table).unwrap();
        let expected = 0.03 + 0.5 * 0.06 + 2.0 * 0.03;
        assert!((summary.total - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_backend_is_reported_by_name() {
        let responses = vec![response("claude", 1, 1)];
        let err = estimate_cost(&responses, &flat_table("gpt-4", 0.06)).unwrap_err();
        assert!(err.to_string().contains("claude"));
    }
}
