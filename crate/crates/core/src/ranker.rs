//! Turn per-criterion eligibility verdicts into trial scores and rankings.

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::corpus::TrialDoc;
use crate::error::{Error, Result};
use crate::gateway::parse::{self, RefusalLexicon, RepetitionConfig};
use crate::gateway::{Backend, FailureKind, Message, ModelRequest, ModelResponse, Parsed, Role};
use crate::perturb::Variant;

/// Verdict aggregation weights. Exclusion always dominates: any `excluded`
/// verdict forces score 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub included: f64,
    pub not_excluded: f64,
    pub not_included: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            included: 1.0,
            not_excluded: 0.5,
            not_included: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_id: String,
    pub score: f64,
    pub verdicts: Vec<crate::gateway::EligibilityLabel>,
    pub hard_excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
}

/// A per-(topic, category) ranking: trial ids in descending score order,
/// ties broken by ascending trial id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub topic_id: String,
    pub category: Category,
    pub trial_ids: Vec<String>,
}

/// Full ranking output including per-trial scores and failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub ranking: Ranking,
    pub scores: Vec<TrialScore>,
    /// Set when some trials could not be scored (transport errors); the
    /// ranking still covers every candidate, failed trials at score 0.
    pub incomplete: bool,
}

/// Score one verdict sequence.
pub fn score_trial(
    trial_id: &str,
    verdicts: &[crate::gateway::EligibilityLabel],
    weights: ScoreWeights,
) -> Result<TrialScore> {
    use crate::gateway::EligibilityLabel::*;
    if verdicts.is_empty() {
        return Err(Error::Contract("cannot score empty verdicts".into()));
    }
    let hard_excluded = verdicts.iter().any(|v| *v == Excluded);
    let score = if hard_excluded {
        0.0
    } else {
        let sum: f64 = verdicts
            .iter()
            .map(|v| match v {
                Included => weights.included,
                NotExcluded => weights.not_excluded,
                NotIncluded => weights.not_included,
                Excluded => 0.0,
            })
            .sum();
        sum / verdicts.len() as f64
    };
    Ok(TrialScore {
        trial_id: trial_id.to_string(),
        score,
        verdicts: verdicts.to_vec(),
        hard_excluded,
        failure: None,
    })
}

/// Default eligibility prompt; `{patient_note}` and `{criteria_list}` are
/// replaced per request.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "You are screening a patient for a clinical trial.\n\
Patient note:\n{patient_note}\n\n\
For each criterion below, reply with exactly one line of the form\n\
`criterion N: <label>` where <label> is one of: included, not included, excluded, not excluded.\n\n\
{criteria_list}\n";

pub fn render_prompt(template: &str, patient_note: &str, trial: &TrialDoc) -> String {
    let criteria_list = trial
        .criteria()
        .enumerate()
        .map(|(i, c)| format!("criterion {}: {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    template
        .replace("{patient_note}", patient_note)
        .replace("{criteria_list}", &criteria_list)
}

fn sort_scores(scores: &mut [TrialScore]) {
    scores.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.trial_id.cmp(&b.trial_id))
    });
}

/// Build a ranking from already-scored trials.
pub fn rank_from_scores(
    topic_id: &str,
    category: Category,
    mut scores: Vec<TrialScore>,
    incomplete: bool,
) -> RankingOutcome {
    sort_scores(&mut scores);
    RankingOutcome {
        ranking: Ranking {
            topic_id: topic_id.to_string(),
            category,
            trial_ids: scores.iter().map(|s| s.trial_id.clone()).collect(),
        },
        scores,
        incomplete,
    }
}

/// Query the backend once per (variant, trial), parse verdicts, and rank.
/// Unparseable or failed replies score 0 and carry their failure kind.
pub fn rank_trials(
    variant: &Variant,
    candidates: &[TrialDoc],
    backend: &dyn Backend,
    prompt_template: &str,
    weights: ScoreWeights,
    refusals: &RefusalLexicon,
    rep_cfg: RepetitionConfig,
) -> Result<(RankingOutcome, Vec<ModelResponse>)> {
    if candidates.is_empty() {
        return Err(Error::Contract("candidate set is empty".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    let mut responses = Vec::with_capacity(candidates.len());
    let mut incomplete = false;
    for trial in candidates {
        let prompt = render_prompt(prompt_template, &variant.text, trial);
        let request = ModelRequest::new(
            format!("ctm:{}:{}:{}", variant.base_id, variant.category, trial.id),
            backend.name(),
            vec![Message {
                role: Role::User,
                content: prompt,
            }],
        )
        .with_meta("kind", "ctm")
        .with_meta("item_id", &variant.base_id)
        .with_meta("trial_id", &trial.id)
        .with_meta("category", variant.category.key());

        match backend.complete(&request) {
            Ok(mut response) => {
                parse::finalize_eligibility(&mut response, trial.criteria_count(), refusals, rep_cfg);
                let score = match &response.parsed {
                    Parsed::Eligibility { verdicts } => {
                        let mut s = score_trial(&trial.id, verdicts, weights)?;
                        s.failure = response.failure;
                        s
                    }
                    _ => TrialScore {
                        trial_id: trial.id.clone(),
                        score: 0.0,
                        verdicts: Vec::new(),
                        hard_excluded: false,
                        failure: response.failure,
                    },
                };
                scores.push(score);
                responses.push(response);
            }
            Err(err) => {
                log::warn!("trial {} failed for {}: {err}", trial.id, variant.base_id);
                incomplete = true;
                scores.push(TrialScore {
                    trial_id: trial.id.clone(),
                    score: 0.0,
                    verdicts: Vec::new(),
                    hard_excluded: false,
                    failure: Some(FailureKind::MissingDocument),
                });
            }
        }
    }
    Ok((
        rank_from_scores(&variant.base_id, variant.category, scores, incomplete),
        responses,
    ))
}

/// TREC run-file lines: `topic Q0 trial rank score run-tag`.
pub fn to_run_file(outcomes: &[RankingOutcome], run_tag: &str) -> String {
    let mut out = String::new();
    for outcome in outcomes {
        for (rank, score) in outcome.scores.iter().enumerate() {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                outcome.ranking.topic_id,
                score.trial_id,
                rank + 1,
                score.score,
                run_tag
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::EligibilityLabel::*;

    #[test]
    fn any_excluded_verdict_zeroes_the_score() {
        let s = score_trial("n1", &[Excluded, Included], ScoreWeights::default()).unwrap();
        assert_eq!(s.score, 0.0);
        assert!(s.hard_excluded);
    }

    #[test]
    fn all_included_scores_one() {
        let s = score_trial("n1", &[Included, Included], ScoreWeights::default()).unwrap();
        assert_eq!(s.score, 1.0);
    }

    #[test]
    fn mixed_verdicts_follow_the_weighted_formula() {
        // (1 + 0.5 + 0 + 0) / 4
        let s = score_trial(
            "n1",
            &[Included, NotExcluded, NotIncluded, NotIncluded],
            ScoreWeights::default(),
        )
        .unwrap();
        assert!((s.score - 0.375).abs() < 1e-15);
    }

    #[test]
    fn empty_verdicts_are_a_contract_error() {
        assert!(score_trial("n1", &[], ScoreWeights::default()).is_err());
    }

    #[test]
    fn scores_sort_descending() {
        let outcome = rank_from_scores(
            "t1",
            Category::Base,
            vec![
                score_trial("t_b", &[NotExcluded, NotIncluded], ScoreWeights::default()).unwrap(),
                score_trial("t_a", &[Included, Included], ScoreWeights::default()).unwrap(),
            ],
            false,
        );
        assert_eq!(outcome.ranking.trial_ids, vec!["t_a", "t_b"]);
    }

    #[test]
    fn ties_break_by_ascending_trial_id() {
        let outcome = rank_from_scores(
            "t1",
            Category::Base,
            vec![
                score_trial("n2", &[Included, NotIncluded], ScoreWeights::default()).unwrap(),
                score_trial("n1", &[Included, NotIncluded], ScoreWeights::default()).unwrap(),
            ],
            false,
        );
        assert_eq!(outcome.ranking.trial_ids, vec!["n1", "n2"]);
    }

    #[test]
    fn ranking_is_permutation_invariant() {
        let mk = |id: &str, verdicts: &[crate::gateway::EligibilityLabel]| {
            score_trial(id, verdicts, ScoreWeights::default()).unwrap()
        };
        let a = vec![
            mk("n1", &[Included, Included]),
            mk("n2", &[Included, NotExcluded]),
            mk("n3", &[NotIncluded, NotIncluded]),
        ];
        let mut b = a.clone();
        b.reverse();
        let ra = rank_from_scores("t", Category::Base, a, false);
        let rb = rank_from_scores("t", Category::Base, b, false);
        assert_eq!(ra.ranking, rb.ranking);
    }

    #[test]
    fn more_included_never_ranks_lower() {
        // Upgrading one verdict to included cannot lower the trial's rank.
        let base = vec![
            score_trial("n1", &[Included, NotIncluded, NotIncluded], ScoreWeights::default()).unwrap(),
            score_trial("n2", &[Included, Included, NotIncluded], ScoreWeights::default()).unwrap(),
        ];
        let upgraded = vec![
            score_trial("n1", &[Included, Included, NotIncluded], ScoreWeights::default()).unwrap(),
            base[1].clone(),
        ];
        let before = rank_from_scores("t", Category::Base, base, false);
        let after = rank_from_scores("t", Category::Base, upgraded, false);
        let rank_of = |o: &RankingOutcome, id: &str| {
            o.ranking.trial_ids.iter().position(|t| t == id).unwrap()
        };
        assert!(rank_of(&after, "n1") <= rank_of(&before, "n1"));
    }

    #[test]
    fn run_file_format_is_trec_shaped() {
        let outcome = rank_from_scores(
            "t1",
            Category::Base,
            vec![score_trial("n1", &[Included], ScoreWeights::default()).unwrap()],
            false,
        );
        let text = to_run_file(&[outcome], "equity");
        assert_eq!(text, "t1 Q0 n1 1 1.000000 equity\n");
    }

    struct ScriptedBackend;

    impl Backend for ScriptedBackend {
        fn name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, request: &ModelRequest) -> crate::error::Result<ModelResponse> {
            let trial = request.meta.get("trial_id").unwrap().as_str();
            let raw = match trial {
                "n1" => "criterion 1: included\ncriterion 2: included".to_string(),
                "n2" => "criterion 1: included\ncriterion 2: not excluded".to_string(),
                _ => "word salad".to_string(),
            };
            Ok(ModelResponse::raw(
                &request.request_id,
                "scripted",
                raw,
                Default::default(),
                0,
            ))
        }
    }

    #[test]
    fn unparseable_trials_rank_last_with_failure() {
        let variant = Variant {
            base_id: "t1".into(),
            category: Category::Base,
            text: "A patient with cough.".into(),
            provenance: vec![],
        };
        let trials: Vec<TrialDoc> = ["n1", "n2", "n3"]
            .iter()
            .map(|id| TrialDoc {
                id: id.to_string(),
                title: "t".into(),
                summary: "s".into(),
                inclusion: vec!["adult".into(), "cough".into()],
                exclusion: vec![],
                sex_restriction: Default::default(),
            })
            .collect();
        let (outcome, _) = rank_trials(
            &variant,
            &trials,
            &ScriptedBackend,
            DEFAULT_PROMPT_TEMPLATE,
            ScoreWeights::default(),
            &RefusalLexicon::default_lexicon(),
            RepetitionConfig::default(),
        )
        .unwrap();
        assert_eq!(outcome.ranking.trial_ids, vec!["n1", "n2", "n3"]);
        let last = outcome.scores.last().unwrap();
        assert_eq!(last.score, 0.0);
        assert_eq!(last.failure, Some(FailureKind::MissingDocument));
        assert!(!outcome.incomplete);
    }
}
