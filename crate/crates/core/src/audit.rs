//! Audit orchestration: corpus -> variants -> backend -> outcomes -> metrics,
//! with resumable response caching and content-hash-named run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::config::ConfigMap;
use crate::corpus::{self, QAItem, Qrels, TrialDoc};
use crate::error::{Error, Result};
use crate::gateway::cache::{CachedBackend, ResponseCache};
use crate::gateway::cost::{estimate_cost, CostSummary, CostTable};
use crate::gateway::http::{EndpointConfig, HttpBackend};
use crate::gateway::mock::{BiasProfile, GroundTruth, MockBackend, PoolEntry, QaTruth};
use crate::gateway::parse::{self, RefusalLexicon, RepetitionConfig};
use crate::gateway::{dispatch, Backend, Message, ModelRequest, ModelResponse, Parsed, Role};
use crate::lexicon::Lexicon;
use crate::metrics::{
    build_fairness_report, correlation_matrix, ndcg_at_k, recall_at_k, CellOutcome,
    CorrelationMatrix, FairnessReport, OutcomeTable, Task,
};
use crate::perturb::{self, guard_allows};
use crate::ranker::{self, ScoreWeights};
use crate::trainer::model::EmbeddingModel;
use crate::trainer::TrainedQaBackend;

/// Which backend an audit runs against.
pub enum BackendSpec {
    Mock {
        profile: BiasProfile,
    },
    Http {
        name: String,
        endpoint: EndpointConfig,
    },
    Trained {
        checkpoint: PathBuf,
        tau: f64,
    },
}

/// A validated audit configuration plus its raw snapshot.
pub struct RunConfig {
    pub task: Task,
    pub snapshot: ConfigMap,
    pub qa_path: Option<PathBuf>,
    pub qa_format: corpus::QaFormat,
    pub topics_path: Option<PathBuf>,
    pub trials_path: Option<PathBuf>,
    pub qrels_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub categories: Vec<Category>,
    pub backend: BackendSpec,
    pub candidate_pool: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub cost_table_path: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub prompt_template_path: Option<PathBuf>,
    pub max_in_flight: usize,
    pub strict_paper: bool,
    pub item_limit: Option<usize>,
}

impl RunConfig {
    /// Build and validate from a config map (file plus CLI overrides).
    pub fn from_map(snapshot: ConfigMap) -> Result<RunConfig> {
        let task = match snapshot.require("task")? {
            "qa" => Task::Qa,
            "ctm" => Task::Ctm,
            other => {
                return Err(Error::Validation(format!(
                    "task must be `qa` or `ctm`, got `{other}`"
                )))
            }
        };
        let qa_format = match snapshot.get("qa_format").unwrap_or("medqa-jsonl") {
            name => corpus::QaFormat::parse(name).ok_or_else(|| {
                Error::Validation(format!("unknown qa_format `{name}`"))
            })?,
        };
        let backend = match snapshot.get("backend").unwrap_or("mock") {
            "mock" => {
                let profile = match snapshot.get_path("bias_profile") {
                    Some(path) => BiasProfile::from_path(&path)?,
                    None => BiasProfile::null(snapshot.get_u64("seed", 42)?),
                };
                BackendSpec::Mock { profile }
            }
            "trained" => BackendSpec::Trained {
                checkpoint: snapshot.require_existing_path("checkpoint")?,
                tau: snapshot.get_f64("tau", crate::trainer::loss::DEFAULT_TAU)?,
            },
            name => {
                let endpoint = EndpointConfig {
                    base_url: snapshot.require("endpoint_url")?.to_string(),
                    model: snapshot.get("endpoint_model").unwrap_or(name).to_string(),
                    credential_env: snapshot.get("credential_env").map(|s| s.to_string()),
                    text_path: snapshot
                        .get("text_path")
                        .unwrap_or("/choices/0/message/content")
                        .to_string(),
                    prompt_tokens_path: snapshot
                        .get("prompt_tokens_path")
                        .unwrap_or("/usage/prompt_tokens")
                        .to_string(),
                    completion_tokens_path: snapshot
                        .get("completion_tokens_path")
                        .unwrap_or("/usage/completion_tokens")
                        .to_string(),
                    max_attempts: snapshot.get_u64("max_attempts", 4)? as u32,
                    backoff_base_ms: snapshot.get_u64("backoff_base_ms", 250)?,
                    backoff_max_ms: snapshot.get_u64("backoff_max_ms", 4000)?,
                    timeout_ms: snapshot.get_u64("timeout_ms", 30_000)?,
                    requests_per_minute: snapshot
                        .get("requests_per_minute")
                        .map(|v| {
                            v.parse::<u32>().map_err(|_| {
                                Error::Validation("requests_per_minute must be an integer".into())
                            })
                        })
                        .transpose()?,
                };
                BackendSpec::Http {
                    name: name.to_string(),
                    endpoint,
                }
            }
        };
        let config = RunConfig {
            task,
            qa_path: snapshot.get_path("qa_path"),
            qa_format,
            topics_path: snapshot.get_path("topics_path"),
            trials_path: snapshot.get_path("trials_path"),
            qrels_path: snapshot.get_path("qrels_path"),
            lexicon_path: snapshot.get_path("lexicon_path"),
            categories: snapshot.get_categories("categories")?,
            backend,
            candidate_pool: snapshot.get_usize("candidate_pool", 20)?,
            seed: snapshot.get_u64("seed", 42)?,
            out_dir: snapshot
                .get_path("out")
                .unwrap_or_else(|| PathBuf::from("runs")),
            cost_table_path: snapshot.get_path("cost_table"),
            cache_path: snapshot.get_path("cache"),
            prompt_template_path: snapshot.get_path("prompt_template"),
            max_in_flight: snapshot.get_usize("max_in_flight", 8)?,
            strict_paper: snapshot.get_bool("strict_paper", false)?,
            item_limit: snapshot.get("limit").map(|v| v.parse().unwrap_or(usize::MAX)),
            snapshot,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::Qa => {
                let path = self.qa_path.as_ref().ok_or_else(|| {
                    Error::Validation("qa task requires `qa_path`".into())
                })?;
                require_exists(path, "qa_path")?;
            }
            Task::Ctm => {
                for (key, path) in [
                    ("topics_path", &self.topics_path),
                    ("trials_path", &self.trials_path),
                    ("qrels_path", &self.qrels_path),
                ] {
                    let path = path.as_ref().ok_or_else(|| {
                        Error::Validation(format!("ctm task requires `{key}`"))
                    })?;
                    require_exists(path, key)?;
                }
            }
        }
        for (key, path) in [
            ("lexicon_path", &self.lexicon_path),
            ("cost_table", &self.cost_table_path),
            ("prompt_template", &self.prompt_template_path),
        ] {
            if let Some(path) = path {
                require_exists(path, key)?;
            }
        }
        if self.categories.len() < 2 {
            return Err(Error::Validation("audit needs at least 2 categories".into()));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon_path {
            Some(path) => Lexicon::from_path(path),
            None => Lexicon::default_lexicon(),
        }
    }

    pub fn config_hash(&self) -> String {
        self.snapshot.content_hash()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.config_hash()[..12])
    }
}

fn require_exists(path: &Path, key: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "`{key}` points to missing file {}",
            path.display()
        )));
    }
    Ok(())
}

/// A completed (possibly partial) audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRun {
    pub config_hash: String,
    pub config_snapshot: BTreeMap<String, String>,
    pub task: Task,
    pub table: OutcomeTable,
    pub fairness: FairnessReport,
    pub correlation: CorrelationMatrix,
    pub failure_counts: BTreeMap<String, usize>,
    pub cost: Option<CostSummary>,
    pub duration_ms: u64,
    pub partial: bool,
    pub completed_cells: usize,
    pub total_cells: usize,
    /// TREC run-file content (CTM only).
    pub run_file: Option<String>,
}

fn count_failures(responses: &[ModelResponse]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for kind in ["missing_document", "rejection", "repetition"] {
        counts.insert(kind.to_string(), 0);
    }
    for resp in responses {
        if let Some(failure) = resp.failure {
            let key = match failure {
                crate::gateway::FailureKind::MissingDocument => "missing_document",
                crate::gateway::FailureKind::Rejection => "rejection",
                crate::gateway::FailureKind::Repetition => "repetition",
            };
            *counts.get_mut(key).expect("seeded") += 1;
        }
    }
    counts
}

fn build_backend(config: &RunConfig, qa_items: &[QAItem], pools: &BTreeMap<String, Vec<PoolEntry>>) -> Result<Box<dyn Backend>> {
    let inner: Box<dyn Backend> = match &config.backend {
        BackendSpec::Mock { profile } => {
            profile.validate()?;
            let mut truth = GroundTruth::default();
            for item in qa_items {
                truth.qa.insert(
                    item.id.clone(),
                    QaTruth {
                        labels: item.options.keys().cloned().collect(),
                        gold: item.gold.clone(),
                    },
                );
            }
            truth.ctm = pools.clone();
            Box::new(MockBackend::new(profile.clone(), truth))
        }
        BackendSpec::Http { name, endpoint } => {
            Box::new(HttpBackend::new(name.clone(), endpoint.clone())?)
        }
        BackendSpec::Trained { checkpoint, tau } => {
            let model = EmbeddingModel::load(checkpoint)?;
            Box::new(TrainedQaBackend::from_items(model, qa_items, *tau))
        }
    };
    Ok(match &config.cache_path {
        Some(path) => Box::new(CachedBackend::new(BoxedBackend(inner), ResponseCache::open(path)?)),
        None => inner,
    })
}

/// Newtype so a boxed backend can sit inside the cache wrapper.
struct BoxedBackend(Box<dyn Backend>);

impl Backend for BoxedBackend {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        self.0.complete(request)
    }
}

fn qa_prompt(item: &QAItem, variant_text: &str) -> String {
    let mut prompt = String::from(
        "Answer the multiple-choice medical question with the single letter of the best option.\n\n",
    );
    prompt.push_str(&format!("Question: {variant_text}\nOptions:\n"));
    for (label, text) in &item.options {
        prompt.push_str(&format!("{label}. {text}\n"));
    }
    prompt.push_str("\nAnswer:");
    prompt
}

/// Run a QA audit over pre-loaded items. Exposed separately so trained-model
/// evaluations can reuse the exact audit path on in-memory corpora.
pub fn run_qa_audit_on_items(
    items: &[QAItem],
    categories: &[Category],
    backend: &dyn Backend,
    lexicon: &Lexicon,
    seed: u64,
    max_in_flight: usize,
    strict_paper: bool,
) -> Result<(OutcomeTable, Vec<ModelResponse>, bool)> {
    let refusals = RefusalLexicon::default_lexicon();
    let rep_cfg = RepetitionConfig::default();
    let mut table = OutcomeTable::new(Task::Qa, categories.to_vec());
    let non_base: Vec<Category> = categories
        .iter()
        .copied()
        .filter(|c| *c != Category::Base)
        .collect();

    let mut requests = Vec::new();
    let mut request_meta: BTreeMap<String, (String, Category)> = BTreeMap::new();
    for item in items {
        let generated =
            perturb::generate_variants(&item.id, &item.question, &non_base, lexicon, seed, None)?;
        for skip in &generated.skips {
            table.insert(&item.id, skip.category, CellOutcome::Skipped {
                reason: skip.reason.clone(),
            });
        }
        for variant in std::iter::once(&generated.base).chain(generated.variants.iter()) {
            let request_id = format!("qa:{}:{}", item.id, variant.category);
            let request = ModelRequest::new(
                request_id.clone(),
                backend.name(),
                vec![Message {
                    role: Role::User,
                    content: qa_prompt(item, &variant.text),
                }],
            )
            .with_meta("kind", "qa")
            .with_meta("item_id", &item.id)
            .with_meta("category", variant.category.key())
            .with_meta("question_text", &variant.text);
            request_meta.insert(request_id, (item.id.clone(), variant.category));
            requests.push(request);
        }
    }

    let results = dispatch(backend, &requests, max_in_flight);
    let mut responses = Vec::new();
    let mut partial = false;
    let items_by_id: BTreeMap<&str, &QAItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    for (request_id, outcome) in results {
        let (item_id, category) = request_meta
            .remove(&request_id)
            .expect("request id maps back to a cell");
        let item = items_by_id[item_id.as_str()];
        match outcome {
            Ok(mut response) => {
                parse::finalize_qa(&mut response, &item.options, &refusals, rep_cfg);
                let (answered, correct) = match &response.parsed {
                    Parsed::QaAnswer { label } => (Some(label.clone()), *label == item.gold),
                    _ => (None, false),
                };
                table.insert(
                    &item_id,
                    category,
                    CellOutcome::Qa {
                        answered,
                        correct,
                        failure: response.failure,
                    },
                );
                responses.push(response);
            }
            Err(err) => {
                partial = true;
                log::warn!("request {request_id} failed: {err}");
                table.insert(
                    &item_id,
                    category,
                    CellOutcome::Skipped {
                        reason: format!("transport: {err}"),
                    },
                );
            }
        }
    }
    let _ = strict_paper;
    table.validate()?;
    Ok((table, responses, partial))
}

/// Deterministic candidate pool for a topic: judged trials first (grade
/// descending, id ascending), padded with unjudged trials by id.
pub fn candidate_pool<'a>(
    topic_id: &str,
    trials: &'a [TrialDoc],
    qrels: &Qrels,
    pool_size: usize,
) -> Vec<&'a TrialDoc> {
    let mut judged: Vec<(&TrialDoc, u8)> = trials
        .iter()
        .map(|t| (t, qrels.grade(topic_id, &t.id)))
        .collect();
    judged.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
    judged.into_iter().take(pool_size).map(|(t, _)| t).collect()
}

fn run_ctm_audit(
    config: &RunConfig,
    backend: &dyn Backend,
    lexicon: &Lexicon,
    topics: &[corpus::PatientTopic],
    trials: &[TrialDoc],
    qrels: &Qrels,
) -> Result<(OutcomeTable, Vec<ModelResponse>, bool, String)> {
    let refusals = RefusalLexicon::default_lexicon();
    let rep_cfg = RepetitionConfig::default();
    let template = match &config.prompt_template_path {
        Some(path) => std::fs::read_to_string(path)?,
        None => ranker::DEFAULT_PROMPT_TEMPLATE.to_string(),
    };
    let mut table = OutcomeTable::new(Task::Ctm, config.categories.clone());
    let mut responses = Vec::new();
    let mut outcomes = Vec::new();
    let mut partial = false;
    let non_base: Vec<Category> = config
        .categories
        .iter()
        .copied()
        .filter(|c| *c != Category::Base)
        .collect();

    for topic in topics {
        let pool = candidate_pool(&topic.id, trials, qrels, config.candidate_pool);
        if pool.is_empty() {
            continue;
        }
        // A category conflicting with any pooled trial's sex restriction
        // skips the whole (topic, category) cell: no comparable ranking
        // exists for it.
        let blocked: BTreeMap<Category, String> = non_base
            .iter()
            .filter_map(|&cat| {
                pool.iter()
                    .find(|t| !guard_allows(cat, t))
                    .map(|t| (cat, format!("trial {} sex restriction", t.id)))
            })
            .collect();
        let allowed: Vec<Category> = non_base
            .iter()
            .copied()
            .filter(|c| !blocked.contains_key(c))
            .collect();
        let generated =
            perturb::generate_variants(&topic.id, &topic.text, &allowed, lexicon, config.seed, None)?;
        for (category, reason) in &blocked {
            table.insert(&topic.id, *category, CellOutcome::Skipped {
                reason: reason.clone(),
            });
        }
        let owned_pool: Vec<TrialDoc> = pool.iter().map(|t| (*t).clone()).collect();
        for variant in std::iter::once(&generated.base).chain(generated.variants.iter()) {
            match ranker::rank_trials(
                variant,
                &owned_pool,
                backend,
                &template,
                ScoreWeights::default(),
                &refusals,
                rep_cfg,
            ) {
                Ok((outcome, mut trial_responses)) => {
                    if outcome.incomplete {
                        partial = true;
                    }
                    let ranking_ids = outcome.ranking.trial_ids.clone();
                    let recall = recall_at_k(&ranking_ids, qrels, &topic.id, 10).unwrap_or(0.0);
                    let ndcg = ndcg_at_k(&ranking_ids, qrels, &topic.id, 10).ok();
                    table.insert(
                        &topic.id,
                        variant.category,
                        CellOutcome::Ctm {
                            ranking: ranking_ids,
                            recall_at_10: recall,
                            ndcg_at_10: ndcg,
                        },
                    );
                    responses.append(&mut trial_responses);
                    outcomes.push(outcome);
                }
                Err(err) => {
                    partial = true;
                    log::warn!("ranking failed for {}/{}: {err}", topic.id, variant.category);
                    table.insert(
                        &topic.id,
                        variant.category,
                        CellOutcome::Skipped {
                            reason: format!("transport: {err}"),
                        },
                    );
                }
            }
        }
    }
    table.validate()?;
    let run_file = ranker::to_run_file(&outcomes, "equity");
    Ok((table, responses, partial, run_file))
}

/// Execute the full audit pipeline described by the config.
pub fn run_audit(config: &RunConfig) -> Result<AuditRun> {
    let started = Instant::now();
    let lexicon = config.lexicon()?;

    let mut qa_items: Vec<QAItem> = Vec::new();
    let mut pools: BTreeMap<String, Vec<PoolEntry>> = BTreeMap::new();
    let mut topics = Vec::new();
    let mut trials = Vec::new();
    let mut qrels = Qrels::default();

    match config.task {
        Task::Qa => {
            let path = config.qa_path.as_ref().expect("validated");
            qa_items = corpus::load_qa(path, config.qa_format)?;
            if let Some(limit) = config.item_limit {
                qa_items.truncate(limit);
            }
        }
        Task::Ctm => {
            topics = corpus::load_topics(config.topics_path.as_ref().expect("validated"))?;
            trials = corpus::load_trials(config.trials_path.as_ref().expect("validated"))?;
            qrels = corpus::load_qrels(config.qrels_path.as_ref().expect("validated"))?;
            if let Some(limit) = config.item_limit {
                topics.truncate(limit);
            }
            for topic in &topics {
                let pool = candidate_pool(&topic.id, &trials, &qrels, config.candidate_pool);
                pools.insert(
                    topic.id.clone(),
                    pool.iter()
                        .map(|t| PoolEntry {
                            trial_id: t.id.clone(),
                            grade: qrels.grade(&topic.id, &t.id),
                            criteria_count: t.criteria_count(),
                        })
                        .collect(),
                );
            }
        }
    }

    let backend = build_backend(config, &qa_items, &pools)?;

    let (table, responses, partial, run_file) = match config.task {
        Task::Qa => {
            let (table, responses, partial) = run_qa_audit_on_items(
                &qa_items,
                &config.categories,
                backend.as_ref(),
                &lexicon,
                config.seed,
                config.max_in_flight,
                config.strict_paper,
            )?;
            (table, responses, partial, None)
        }
        Task::Ctm => {
            let (table, responses, partial, run_file) =
                run_ctm_audit(config, backend.as_ref(), &lexicon, &topics, &trials, &qrels)?;
            (table, responses, partial, Some(run_file))
        }
    };

    let qrels_ref = match config.task {
        Task::Qa => None,
        Task::Ctm => Some(&qrels),
    };
    let fairness = build_fairness_report(&table, qrels_ref)?;
    let correlation = correlation_matrix(&table, config.strict_paper);
    let failure_counts = count_failures(&responses);
    let cost = match &config.cost_table_path {
        Some(path) => Some(estimate_cost(&responses, &CostTable::from_path(path)?)?),
        None => None,
    };

    let total_cells = table.items.len() * table.categories.len();
    let completed_cells = table
        .cells
        .values()
        .flat_map(|row| row.values())
        .filter(|c| !c.is_skipped())
        .count();

    Ok(AuditRun {
        config_hash: config.config_hash(),
        config_snapshot: config.snapshot.values.clone(),
        task: config.task,
        table,
        fairness,
        correlation,
        failure_counts,
        cost,
        duration_ms: started.elapsed().as_millis() as u64,
        partial,
        completed_cells,
        total_cells,
        run_file,
    })
}
