//! Loss components with hand-derived gradients: margin triplet loss over
//! cosine distance, softmax cross-entropy for QA, pairwise logistic for
//! ranking, and their combination.

use serde::{Deserialize, Serialize};

use super::model::{dot, EmbeddingModel, Gradients};
use crate::error::{Error, Result};

/// Dot-product logit temperature; unstated upstream, fixed here.
pub const DEFAULT_TAU: f64 = 0.1;

/// Cosine distance between unit vectors: 1 - <u, v>, in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    for (name, vec) in [("u", u), ("v", v)] {
        let norm: f64 = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "cosine_distance expects unit vectors; |{name}| = {norm}"
            )));
        }
    }
    Ok(1.0 - dot(u, v))
}

/// Hinge value of one triplet given precomputed distances.
pub fn triplet_loss_value(d_anchor_pos: f64, d_anchor_neg: f64, margin: f64) -> f64 {
    (margin + d_anchor_pos - d_anchor_neg).max(0.0)
}

/// One triplet's texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletText {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Triplet loss over texts, accumulating parameter gradients when asked.
/// Returns (loss, d(anchor, positive), d(anchor, negative)).
pub fn triplet_loss(
    model: &EmbeddingModel,
    triplet: &TripletText,
    margin: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<(f64, f64, f64)> {
    let ta = model.embed_trace(&triplet.anchor)?;
    let tp = model.embed_trace(&triplet.positive)?;
    let tn = model.embed_trace(&triplet.negative)?;
    let d_ap = 1.0 - dot(&ta.output, &tp.output);
    let d_an = 1.0 - dot(&ta.output, &tn.output);
    let loss = triplet_loss_value(d_ap, d_an, margin);
    if loss > 0.0 {
        if let Some(grads) = grads.as_deref_mut() {
            // L = m - <a,p> + <a,n>  (active branch)
            let g_a: Vec<f64> = tn
                .output
                .iter()
                .zip(&tp.output)
                .map(|(n, p)| n - p)
                .collect();
            let g_p: Vec<f64> = ta.output.iter().map(|a| -a).collect();
            let g_n: Vec<f64> = ta.output.to_vec();
            model.backward(&ta, &g_a, grads);
            model.backward(&tp, &g_p, grads);
            model.backward(&tn, &g_n, grads);
        }
    }
    Ok((loss, d_ap, d_an))
}

/// One QA training example: a question variant against its option texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

/// Stable softmax negative log-likelihood; returns (loss, probabilities).
pub fn softmax_nll(logits: &[f64], gold_index: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = -(probs[gold_index].max(f64::MIN_POSITIVE)).ln();
    (loss, probs)
}

/// Softmax cross-entropy over temperature-scaled dot products between the
/// question embedding and each option embedding.
pub fn qa_task_loss(
    model: &EmbeddingModel,
    example: &QaExample,
    tau: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    if example.options.len() < 2 {
        return Err(Error::Contract("QA example needs >= 2 options".into()));
    }
    if example.gold_index >= example.options.len() {
        return Err(Error::Contract("gold index out of range".into()));
    }
    let tq = model.embed_trace(&example.question)?;
    let traces: Vec<_> = example
        .options
        .iter()
        .map(|o| model.embed_trace(o))
        .collect::<Result<_>>()?;
    let logits: Vec<f64> = traces
        .iter()
        .map(|t| dot(&tq.output, &t.output) / tau)
        .collect();
    let (loss, probs) = softmax_nll(&logits, example.gold_index);

    if let Some(grads) = grads.as_deref_mut() {
        let d = model.embed_dim;
        let mut g_q = vec![0.0; d];
        for (j, trace) in traces.iter().enumerate() {
            let delta = probs[j] - if j == example.gold_index { 1.0 } else { 0.0 };
            let coeff = delta / tau;
            for (gq, o) in g_q.iter_mut().zip(&trace.output) {
                *gq += coeff * o;
            }
            let g_o: Vec<f64> = tq.output.iter().map(|q| coeff * q).collect();
            model.backward(trace, &g_o, grads);
        }
        model.backward(&tq, &g_q, grads);
    }
    Ok(loss)
}

/// One pairwise ranking example: a topic against one judged-relevant and one
/// judged-nonrelevant trial text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankExample {
    pub topic: String,
    pub positive_trial: String,
    pub negative_trial: String,
}

/// Pairwise logistic surrogate: ln(1 + exp(-(s+ - s-))) with temperature-
/// scaled dot-product scores.
pub fn rank_task_loss(
    model: &EmbeddingModel,
    example: &RankExample,
    tau: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    let tt = model.embed_trace(&example.topic)?;
    let tp = model.embed_trace(&example.positive_trial)?;
    let tn = model.embed_trace(&example.negative_trial)?;
    let s_pos = dot(&tt.output, &tp.output) / tau;
    let s_neg = dot(&tt.output, &tn.output) / tau;
    let delta = s_pos - s_neg;
    // Stable ln(1 + e^-x).
    let loss = if delta > 0.0 {
        (-delta).exp().ln_1p()
    } else {
        -delta + delta.exp().ln_1p()
    };
    if let Some(grads) = grads.as_deref_mut() {
        let sigma = 1.0 / (1.0 + delta.exp()); // d loss / d delta = -sigma
        let coeff = -sigma / tau;
        let g_t: Vec<f64> = tp
            .output
            .iter()
            .zip(&tn.output)
            .map(|(p, n)| coeff * (p - n))
            .collect();
        let g_p: Vec<f64> = tt.output.iter().map(|t| coeff * t).collect();
        let g_n: Vec<f64> = tt.output.iter().map(|t| -coeff * t).collect();
        model.backward(&tt, &g_t, grads);
        model.backward(&tp, &g_p, grads);
        model.backward(&tn, &g_n, grads);
    }
    Ok(loss)
}

/// Total objective: task loss plus lambda times the contrastive loss.
pub fn combined_loss(task: f64, contrastive: f64, lambda: f64) -> Result<f64> {
    let total = task + lambda * contrastive;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite combined loss: task={task}, contrastive={contrastive}, lambda={lambda}"
        )));
    }
    Ok(total)
}
