//! Central finite-difference verification of the analytic gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EmbeddingModel, Gradients};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const MAX_RELATIVE_ERROR: f64 = 1e-3;
pub const MIN_COORDS_PER_BLOCK: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Coordinate index of the worst error.
    pub worst_coordinate: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= MAX_RELATIVE_ERROR
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Sample coordinates for one block: up to half from coordinates with
/// nonzero analytic gradient (where the interesting bugs live), the rest
/// uniform.
fn sample_coords(len: usize, analytic: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let nonzero: Vec<usize> = (0..len).filter(|&i| analytic[i] != 0.0).collect();
    let mut coords = Vec::with_capacity(samples);
    let from_nonzero = (samples / 2).min(nonzero.len());
    for _ in 0..from_nonzero {
        coords.push(nonzero[rng.gen_range(0..nonzero.len())]);
    }
    while coords.len() < samples {
        coords.push(rng.gen_range(0..len));
    }
    coords
}

/// Verify analytic gradients of `loss_fn` against central differences on at
/// least [`MIN_COORDS_PER_BLOCK`] sampled coordinates per parameter block.
/// Errors above [`MAX_RELATIVE_ERROR`] fail the check, listing the offender.
pub fn grad_check<F>(
    model: &mut EmbeddingModel,
    loss_fn: F,
    epsilon: f64,
    samples_per_block: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&EmbeddingModel, Option<&mut Gradients>) -> Result<f64>,
{
    let samples = samples_per_block.max(MIN_COORDS_PER_BLOCK);
    let mut grads = Gradients::zeros(model);
    loss_fn(model, Some(&mut grads))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut failures = Vec::new();

    enum Block {
        Embedding,
        Projection,
    }

    for (name, block) in [("embedding", Block::Embedding), ("projection", Block::Projection)] {
        let (len, analytic): (usize, Vec<f64>) = match block {
            Block::Embedding => (model.embedding.len(), grads.embedding.clone()),
            Block::Projection => (model.projection.len(), grads.projection.clone()),
        };
        let coords = sample_coords(len, &analytic, samples, &mut rng);
        let mut report = BlockReport {
            block: name.to_string(),
            checked: coords.len(),
            max_relative_error: 0.0,
            worst_coordinate: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &coords {
            let original = match block {
                Block::Embedding => model.embedding[i],
                Block::Projection => model.projection[i],
            };
            let set = |m: &mut EmbeddingModel, v: f64| match block {
                Block::Embedding => m.embedding[i] = v,
                Block::Projection => m.projection[i] = v,
            };
            set(model, original + epsilon);
            let plus = loss_fn(model, None)?;
            set(model, original - epsilon);
            let minus = loss_fn(model, None)?;
            set(model, original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[i], numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_coordinate = i;
                report.worst_analytic = analytic[i];
                report.worst_numeric = numeric;
            }
        }
        if report.max_relative_error > MAX_RELATIVE_ERROR {
            failures.push(format!(
                "{name}[{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
                report.worst_coordinate,
                report.worst_analytic,
                report.worst_numeric,
                report.max_relative_error
            ));
        }
        blocks.push(report);
    }

    let report = GradCheckReport { epsilon, blocks };
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(Error::GradCheck(failures.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::loss::{self, QaExample, TripletText};

    #[test]
    fn quadratic_toy_loss_checks_to_machine_precision() {
        let mut model = EmbeddingModel::new(32, 8, 9);
        let quadratic = |m: &EmbeddingModel, grads: Option<&mut Gradients>| {
            let loss: f64 = m.embedding.iter().map(|t| t * t).sum::<f64>()
                + m.projection.iter().map(|t| t * t).sum::<f64>();
            if let Some(grads) = grads {
                for (g, t) in grads.embedding.iter_mut().zip(&m.embedding) {
                    *g += 2.0 * t;
                }
                for (g, t) in grads.projection.iter_mut().zip(&m.projection) {
                    *g += 2.0 * t;
                }
            }
            Ok(loss)
        };
        let report = grad_check(&mut model, quadratic, DEFAULT_EPSILON, 100, 1).unwrap();
        assert!(report.max_relative_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn triplet_gradients_check_out() {
        let mut model = EmbeddingModel::new(128, 12, 5);
        let triplet = TripletText {
            anchor: "a patient with chest pain".into(),
            positive: "a woman with chest pain".into(),
            negative: "a homeless woman with chest pain and anxiety".into(),
        };
        let f = |m: &EmbeddingModel, grads: Option<&mut Gradients>| {
            loss::triplet_loss(m, &triplet, 1.0, grads).map(|(l, _, _)| l)
        };
        let report = grad_check(&mut model, f, DEFAULT_EPSILON, 100, 2).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn qa_gradients_check_out() {
        let mut model = EmbeddingModel::new(128, 12, 6);
        let example = QaExample {
            question: "fever rash and arthralgia after travel".into(),
            options: vec![
                "doxycycline".into(),
                "supportive care".into(),
                "amoxicillin".into(),
                "steroids".into(),
            ],
            gold_index: 0,
        };
        let f = |m: &EmbeddingModel, grads: Option<&mut Gradients>| {
            loss::qa_task_loss(m, &example, loss::DEFAULT_TAU, grads)
        };
        let report = grad_check(&mut model, f, DEFAULT_EPSILON, 100, 3).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn detects_wrong_gradients() {
        let mut model = EmbeddingModel::new(32, 8, 9);
        let broken = |m: &EmbeddingModel, grads: Option<&mut Gradients>| {
            let loss: f64 = m.projection.iter().map(|t| t * t).sum::<f64>();
            if let Some(grads) = grads {
                for (g, t) in grads.projection.iter_mut().zip(&m.projection) {
                    *g += 3.0 * t; // wrong: should be 2t
                }
            }
            Ok(loss)
        };
        assert!(matches!(
            grad_check(&mut model, broken, DEFAULT_EPSILON, 100, 1),
            Err(Error::GradCheck(_))
        ));
    }
}
