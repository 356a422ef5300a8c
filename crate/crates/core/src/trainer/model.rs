//! Desk-scale embedding model: hashed bag of tokens, mean pooling, a square
//! projection, and L2 normalization. Small enough that every gradient is
//! verifiable by finite differences, which is the point.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stablehash;

pub const DEFAULT_VOCAB_DIM: usize = 4096;
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub vocab_dim: usize,
    pub embed_dim: usize,
    /// vocab_dim x embed_dim, row-major.
    pub embedding: Vec<f64>,
    /// embed_dim x embed_dim, row-major.
    pub projection: Vec<f64>,
}

/// Forward-pass intermediates kept for backprop.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    pub buckets: Vec<usize>,
    pub pooled: Vec<f64>,
    pub projected: Vec<f64>,
    pub norm: f64,
    pub output: Vec<f64>,
}

/// Gradient accumulator matching the model's parameter blocks.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub projection: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &EmbeddingModel) -> Gradients {
        Gradients {
            embedding: vec![0.0; model.embedding.len()],
            projection: vec![0.0; model.projection.len()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.embedding {
            *g *= factor;
        }
        for g in &mut self.projection {
            *g *= factor;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (g, o) in self.embedding.iter_mut().zip(&other.embedding) {
            *g += o * factor;
        }
        for (g, o) in self.projection.iter_mut().zip(&other.projection) {
            *g += o * factor;
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

impl EmbeddingModel {
    /// Seeded deterministic initialization: embeddings uniform in
    /// [-1, 1]/sqrt(D), projection = identity plus small uniform noise.
    pub fn new(vocab_dim: usize, embed_dim: usize, seed: u64) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (embed_dim as f64).sqrt();
        let embedding = (0..vocab_dim * embed_dim)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect();
        let mut projection = vec![0.0; embed_dim * embed_dim];
        for i in 0..embed_dim {
            for j in 0..embed_dim {
                let noise: f64 = rng.gen_range(-0.05..0.05);
                projection[i * embed_dim + j] = if i == j { 1.0 + noise } else { noise };
            }
        }
        EmbeddingModel {
            vocab_dim,
            embed_dim,
            embedding,
            projection,
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (stablehash::fnv1a(token.as_bytes()) % self.vocab_dim as u64) as usize
    }

    /// Full forward pass with intermediates.
    pub fn embed_trace(&self, text: &str) -> Result<EmbedTrace> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Contract("cannot embed empty text".into()));
        }
        let d = self.embed_dim;
        let buckets: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        let mut pooled = vec![0.0; d];
        for &b in &buckets {
            let row = &self.embedding[b * d..(b + 1) * d];
            for (p, &value) in pooled.iter_mut().zip(row) {
                *p += value;
            }
        }
        let inv_n = 1.0 / buckets.len() as f64;
        for p in &mut pooled {
            *p *= inv_n;
        }
        let mut projected = vec![0.0; d];
        for i in 0..d {
            let row = &self.projection[i * d..(i + 1) * d];
            projected[i] = row.iter().zip(&pooled).map(|(w, x)| w * x).sum();
        }
        let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric(format!(
                "degenerate embedding (norm {norm:e}) for `{text}`"
            )));
        }
        let output = projected.iter().map(|v| v / norm).collect();
        Ok(EmbedTrace {
            buckets,
            pooled,
            projected,
            norm,
            output,
        })
    }

    /// The unit embedding of a text.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_trace(text)?.output)
    }

    /// Backpropagate a gradient w.r.t. the unit output through normalization,
    /// projection, and pooling into the accumulator.
    pub fn backward(&self, trace: &EmbedTrace, grad_output: &[f64], grads: &mut Gradients) {
        let d = self.embed_dim;
        // Through L2 normalization: g_z = (g - (g.e)e)/norm.
        let dot: f64 = grad_output
            .iter()
            .zip(&trace.output)
            .map(|(g, e)| g * e)
            .sum();
        let g_z: Vec<f64> = grad_output
            .iter()
            .zip(&trace.output)
            .map(|(g, e)| (g - dot * e) / trace.norm)
            .collect();
        // Through projection: g_P[i][j] += g_z[i] x[j]; g_x[j] = sum_i P[i][j] g_z[i].
        let mut g_x = vec![0.0; d];
        for i in 0..d {
            let gz = g_z[i];
            let row = &self.projection[i * d..(i + 1) * d];
            let grow = &mut grads.projection[i * d..(i + 1) * d];
            for j in 0..d {
                grow[j] += gz * trace.pooled[j];
                g_x[j] += row[j] * gz;
            }
        }
        // Through mean pooling into touched embedding rows.
        let inv_n = 1.0 / trace.buckets.len() as f64;
        for &b in &trace.buckets {
            let grow = &mut grads.embedding[b * d..(b + 1) * d];
            for (g, gx) in grow.iter_mut().zip(&g_x) {
                *g += gx * inv_n;
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        #[derive(Serialize)]
        struct Checkpoint<'a> {
            format_version: u32,
            vocab_dim: usize,
            embed_dim: usize,
            embedding: &'a [f64],
            projection: &'a [f64],
        }
        let payload = serde_json::to_string(&Checkpoint {
            format_version: 1,
            vocab_dim: self.vocab_dim,
            embed_dim: self.embed_dim,
            embedding: &self.embedding,
            projection: &self.projection,
        })?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, payload)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<EmbeddingModel> {
        #[derive(Deserialize)]
        struct Checkpoint {
            format_version: u32,
            vocab_dim: usize,
            embed_dim: usize,
            embedding: Vec<f64>,
            projection: Vec<f64>,
        }
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != 1 {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        if ckpt.embedding.len() != ckpt.vocab_dim * ckpt.embed_dim
            || ckpt.projection.len() != ckpt.embed_dim * ckpt.embed_dim
        {
            return Err(Error::Validation("checkpoint shape mismatch".into()));
        }
        Ok(EmbeddingModel {
            vocab_dim: ckpt.vocab_dim,
            embed_dim: ckpt.embed_dim,
            embedding: ckpt.embedding,
            projection: ckpt.projection,
        })
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EmbeddingModel {
        EmbeddingModel::new(512, 16, 42)
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = model();
        for text in ["a patient", "chest pain and dyspnea", "x"] {
            let e = m.embed(text).unwrap();
            let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm} for `{text}`");
        }
    }

    #[test]
    fn identical_texts_embed_identically() {
        let m = model();
        assert_eq!(m.embed("fever and cough").unwrap(), m.embed("fever and cough").unwrap());
    }

    #[test]
    fn token_order_does_not_matter() {
        let m = model();
        assert_eq!(m.embed("fever cough rash").unwrap(), m.embed("rash fever cough").unwrap());
    }

    #[test]
    fn empty_text_is_a_contract_error() {
        assert!(matches!(model().embed("   "), Err(Error::Contract(_))));
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        assert_eq!(EmbeddingModel::new(128, 8, 7), EmbeddingModel::new(128, 8, 7));
        assert_ne!(EmbeddingModel::new(128, 8, 7), EmbeddingModel::new(128, 8, 8));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = model();
        m.save(&path).unwrap();
        let loaded = EmbeddingModel::load(&path).unwrap();
        assert_eq!(m, loaded);
    }
}
