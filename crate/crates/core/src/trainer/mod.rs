//! Desk-scale contrastive mitigation trainer: task loss plus margin triplet
//! loss, optimized with Adam, deterministic given the seed.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Backend, ModelRequest, ModelResponse, Usage};
use crate::stablehash;

use adam::AdamState;
use loss::{QaExample, RankExample, TripletText};
use model::{EmbeddingModel, Gradients};

/// Batch reduction for both loss terms. The contrastive equation is written
/// as a sum over triplets; mean is available for learning-rate stability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// How task and triplet batches interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSchedule {
    /// Task and contrastive batches contribute to the same step.
    #[default]
    Joint,
    /// Even steps take a task batch, odd steps a triplet batch.
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub margin: f64,
    /// Published learning rate; the effective rate is this times
    /// `lr_multiplier` (the desk-scale model is ~5 orders smaller).
    pub learning_rate: f64,
    pub lr_multiplier: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau: f64,
    pub reduction: Reduction,
    pub schedule: BatchSchedule,
    pub vocab_dim: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            margin: 1.0,
            learning_rate: 1e-5,
            lr_multiplier: 100.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 3,
            batch_size: 32,
            seed: 42,
            tau: loss::DEFAULT_TAU,
            reduction: Reduction::Sum,
            schedule: BatchSchedule::Joint,
            vocab_dim: model::DEFAULT_VOCAB_DIM,
            embed_dim: model::DEFAULT_EMBED_DIM,
        }
    }
}

impl TrainConfig {
    pub fn effective_lr(&self) -> f64 {
        self.learning_rate * self.lr_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Validation("lambda must be >= 0".into()));
        }
        if self.margin <= 0.0 {
            return Err(Error::Validation("margin must be > 0".into()));
        }
        if self.learning_rate <= 0.0 || self.lr_multiplier <= 0.0 {
            return Err(Error::Validation("learning rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One task-head training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskExample {
    Qa(QaExample),
    Rank(RankExample),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub task: f64,
    pub contrastive: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub trajectory: Vec<EpochLoss>,
    pub effective_lr: f64,
    pub published_lr: f64,
    pub lr_multiplier: f64,
    pub steps: usize,
}

fn reduce(total: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean => {
            if count == 0 {
                0.0
            } else {
                total / count as f64
            }
        }
    }
}

/// Train in place. Deterministic given the seed: batch order is a seeded
/// permutation per epoch, and every loss reduction has a fixed order.
pub fn train(
    model: &mut EmbeddingModel,
    task_examples: &[TaskExample],
    triplets: &[TripletText],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if task_examples.is_empty() || triplets.is_empty() {
        return Err(Error::Contract(
            "training needs at least one task example and one triplet".into(),
        ));
    }
    let mut adam_embedding = AdamState::new(
        model.embedding.len(),
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut adam_projection = AdamState::new(
        model.projection.len(),
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let lr = config.effective_lr();
    let mut trajectory = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    for epoch in 0..config.epochs {
        let mut task_order: Vec<usize> = (0..task_examples.len()).collect();
        let mut triplet_order: Vec<usize> = (0..triplets.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(stablehash::stable_hash(config.seed, &["epoch", &epoch.to_string()]));
        task_order.shuffle(&mut rng);
        triplet_order.shuffle(&mut rng);

        let task_batches: Vec<&[usize]> = task_order.chunks(config.batch_size).collect();
        let triplet_batches: Vec<&[usize]> = triplet_order.chunks(config.batch_size).collect();
        let n_steps = task_batches.len().max(triplet_batches.len());

        let mut epoch_task = 0.0;
        let mut epoch_contrastive = 0.0;
        let mut epoch_combined = 0.0;

        for step in 0..n_steps {
            let take_task = match config.schedule {
                BatchSchedule::Joint => true,
                BatchSchedule::Alternating => step % 2 == 0,
            };
            let take_triplets = match config.schedule {
                BatchSchedule::Joint => true,
                BatchSchedule::Alternating => step % 2 == 1,
            };

            let mut grads = Gradients::zeros(model);
            let mut task_total = 0.0;
            let mut task_count = 0usize;
            if take_task {
                if let Some(batch) = task_batches.get(step % task_batches.len()) {
                    for &idx in batch.iter() {
                        let value = match &task_examples[idx] {
                            TaskExample::Qa(example) => {
                                loss::qa_task_loss(model, example, config.tau, Some(&mut grads))?
                            }
                            TaskExample::Rank(example) => {
                                loss::rank_task_loss(model, example, config.tau, Some(&mut grads))?
                            }
                        };
                        task_total += value;
                        task_count += 1;
                    }
                }
            }

            let mut contrastive_total = 0.0;
            let mut contrastive_count = 0usize;
            let mut contrastive_grads = Gradients::zeros(model);
            if take_triplets {
                if let Some(batch) = triplet_batches.get(step % triplet_batches.len()) {
                    for &idx in batch.iter() {
                        // With lambda = 0 the term is recorded but its
                        // gradient is never computed or applied.
                        let grad_sink = if config.lambda > 0.0 {
                            Some(&mut contrastive_grads)
                        } else {
                            None
                        };
                        let (value, _, _) =
                            loss::triplet_loss(model, &triplets[idx], config.margin, grad_sink)?;
                        contrastive_total += value;
                        contrastive_count += 1;
                    }
                }
            }

            let task_value = reduce(task_total, task_count, config.reduction);
            let contrastive_value =
                reduce(contrastive_total, contrastive_count, config.reduction);
            let combined = loss::combined_loss(task_value, contrastive_value, config.lambda)
                .map_err(|e| {
                    Error::Numeric(format!("diverged at epoch {epoch}, step {step}: {e}"))
                })?;

            if config.reduction == Reduction::Mean {
                if task_count > 0 {
                    grads.scale(1.0 / task_count as f64);
                }
                if contrastive_count > 0 {
                    contrastive_grads.scale(1.0 / contrastive_count as f64);
                }
            }
            if config.lambda > 0.0 {
                grads.add_scaled(&contrastive_grads, config.lambda);
            }

            adam_embedding.step(&mut model.embedding, &grads.embedding, lr);
            adam_projection.step(&mut model.projection, &grads.projection, lr);
            steps += 1;

            epoch_task += task_value;
            epoch_contrastive += contrastive_value;
            epoch_combined += combined;
        }

        // Unit-norm invariant: embed() renormalizes, so only parameter
        // blow-up (degenerate norms) can break it; probe once per epoch.
        let probe = model.embed("probe text for norm check")?;
        let norm: f64 = probe.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "embedding norm drifted to {norm} after epoch {epoch}"
            )));
        }

        trajectory.push(EpochLoss {
            epoch,
            task: epoch_task,
            contrastive: epoch_contrastive,
            combined: epoch_combined,
        });
        log::info!(
            "epoch {epoch}: task {epoch_task:.4}, contrastive {epoch_contrastive:.4}, combined {epoch_combined:.4}"
        );
    }

    Ok(TrainReport {
        trajectory,
        effective_lr: lr,
        published_lr: config.learning_rate,
        lr_multiplier: config.lr_multiplier,
        steps,
    })
}

/// Loss trajectory as CSV: epoch, task, contrastive, combined.
pub fn trajectory_csv(trajectory: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,task_loss,contrastive_loss,combined_loss\n");
    for e in trajectory {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12}\n",
            e.epoch, e.task, e.contrastive, e.combined
        ));
    }
    out
}

/// A QA backend that answers by nearest option embedding, used to audit
/// trained models through the same pipeline as any other backend.
pub struct TrainedQaBackend {
    model: EmbeddingModel,
    /// item id -> (option label, option text) in presentation order.
    options: BTreeMap<String, Vec<(String, String)>>,
    tau: f64,
}

impl TrainedQaBackend {
    pub fn new(
        model: EmbeddingModel,
        options: BTreeMap<String, Vec<(String, String)>>,
        tau: f64,
    ) -> TrainedQaBackend {
        TrainedQaBackend {
            model,
            options,
            tau,
        }
    }

    pub fn from_items(model: EmbeddingModel, items: &[crate::corpus::QAItem], tau: f64) -> Self {
        let options = items
            .iter()
            .map(|item| {
                (
                    item.id.clone(),
                    item.options
                        .iter()
                        .map(|(l, t)| (l.clone(), t.clone()))
                        .collect(),
                )
            })
            .collect();
        Self::new(model, options, tau)
    }
}

impl Backend for TrainedQaBackend {
    fn name(&self) -> &str {
        "trained"
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        let item_id = request
            .meta
            .get("item_id")
            .ok_or_else(|| Error::Validation("trained backend needs item_id meta".into()))?;
        let question = request
            .meta
            .get("question_text")
            .map(|s| s.as_str())
            .or_else(|| {
                request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == crate::gateway::Role::User)
                    .map(|m| m.content.as_str())
            })
            .ok_or_else(|| Error::Validation("trained backend needs question text".into()))?;
        let options = self.options.get(item_id).ok_or_else(|| {
            Error::Validation(format!("trained backend has no options for `{item_id}`"))
        })?;
        let q = self.model.embed(question)?;
        let mut best: Option<(&str, f64)> = None;
        for (label, text) in options {
            let e = self.model.embed(text)?;
            let score = model::dot(&q, &e) / self.tau;
            if best.map(|(_, s)| score > s).unwrap_or(true) {
                best = Some((label, score));
            }
        }
        let label = best.map(|(l, _)| l).unwrap_or("A");
        let raw_text = format!("Answer: {label}");
        let usage = Usage {
            prompt_tokens: (question.len() / 4) as u64,
            completion_tokens: (raw_text.len() / 4) as u64,
        };
        Ok(ModelResponse::raw(
            &request.request_id,
            "trained",
            raw_text,
            usage,
            0,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_setup() -> (Vec<TaskExample>, Vec<TripletText>) {
        let task = vec![
            TaskExample::Qa(QaExample {
                question: "polyuria and thirst".into(),
                options: vec!["alpha".into(), "beta".into()],
                gold_index: 0,
            }),
            TaskExample::Qa(QaExample {
                question: "hemoptysis and weight loss".into(),
                options: vec!["alpha".into(), "beta".into()],
                gold_index: 1,
            }),
        ];
        let triplets = vec![TripletText {
            anchor: "a patient with cough".into(),
            positive: "a homeless patient with cough".into(),
            negative: "a homeless unemployed patient with cough".into(),
        }];
        (task, triplets)
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let (task, triplets) = tiny_setup();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            vocab_dim: 256,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let mut m1 = EmbeddingModel::new(256, 8, 1);
        let mut m2 = EmbeddingModel::new(256, 8, 1);
        let r1 = train(&mut m1, &task, &triplets, &config).unwrap();
        let r2 = train(&mut m2, &task, &triplets, &config).unwrap();
        assert_eq!(m1, m2);
        for (a, b) in r1.trajectory.iter().zip(&r2.trajectory) {
            assert_eq!(a.combined, b.combined);
        }
    }

    #[test]
    fn lambda_zero_with_inactive_hinge_matches_lambda_positive_after_step_one() {
        // When the contrastive batch sits in the hinge's flat region, the
        // first step's parameters cannot depend on lambda.
        let task = vec![TaskExample::Qa(QaExample {
            question: "polyuria and thirst".into(),
            options: vec!["alpha".into(), "beta".into()],
            gold_index: 0,
        })];
        let triplets = vec![TripletText {
            anchor: "same anchor words".into(),
            positive: "same anchor words".into(),
            negative: "totally different tokens".into(),
        }];
        let config = |lambda: f64| TrainConfig {
            lambda,
            margin: 1e-6,
            epochs: 1,
            batch_size: 8,
            vocab_dim: 256,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let mut with = EmbeddingModel::new(256, 8, 2);
        let mut without = EmbeddingModel::new(256, 8, 2);
        let r_with = train(&mut with, &task, &triplets, &config(0.1)).unwrap();
        let r_without = train(&mut without, &task, &triplets, &config(0.0)).unwrap();
        assert_eq!(r_with.trajectory[0].contrastive, 0.0);
        assert_eq!(with, without);
        let _ = r_without;
    }

    #[test]
    fn training_reduces_task_loss_on_learnable_data() {
        let (task, triplets) = tiny_setup();
        let config = TrainConfig {
            epochs: 12,
            batch_size: 4,
            vocab_dim: 256,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        let mut m = EmbeddingModel::new(256, 8, 3);
        let report = train(&mut m, &task, &triplets, &config).unwrap();
        let first = report.trajectory.first().unwrap().task;
        let last = report.trajectory.last().unwrap().task;
        assert!(last < first, "task loss did not drop: {first} -> {last}");
    }

    #[test]
    fn trajectory_csv_shape() {
        let csv = trajectory_csv(&[EpochLoss {
            epoch: 0,
            task: 1.0,
            contrastive: 2.0,
            combined: 1.2,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,task_loss,contrastive_loss,combined_loss");
        assert!(lines.next().unwrap().starts_with("0,1.0"));
    }

    #[test]
    fn empty_inputs_are_contract_errors() {
        let (task, triplets) = tiny_setup();
        let mut m = EmbeddingModel::new(256, 8, 1);
        let config = TrainConfig::default();
        assert!(train(&mut m, &[], &triplets, &config).is_err());
        assert!(train(&mut m, &task, &[], &config).is_err());
    }
}
