//! Screenshot quality scoring with combined prompt embeddings and a
//! trainable linear head, margin-loss training on preference pairs, and
//! top-k filtering of generation batches.

mod train;

pub use train::{
    batch_loss_and_grad, sample_training_batch, train, BatchSlot, LossForm, SyntheticGroup, SyntheticPool, TraceRow, TrainOutcome,
    TrainerConfig, TrainingPair,
};

use serde::{Deserialize, Serialize};

use crate::corpus::GenerationBatch;
use crate::error::{Error, Result};
use crate::gateway::{self, prompts, EmbedKind, Embedder};
use crate::ids::CandidateId;

pub const DEFAULT_TOP_K: usize = 8;
pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub positive: String,
    pub negative: String,
    pub empty: String,
}

pub fn build_prompts(description: &str) -> Result<PromptSet> {
    if description.trim().is_empty() {
        return Err(Error::validation("description", "must not be empty"));
    }
    Ok(PromptSet {
        positive: prompts::positive_prompt(description),
        negative: prompts::negative_prompt(description),
        empty: prompts::empty_prompt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbeddingSet {
    pub v_pos: Vec<f64>,
    pub v_neg: Vec<f64>,
    pub v_empty: Vec<f64>,
}

impl PromptEmbeddingSet {
    /// Embeds the three prompts for `description` (unit-normalized).
    pub fn embed(embedder: &dyn Embedder, description: &str) -> Result<Self> {
        let p = build_prompts(description)?;
        let e = |t: &str| gateway::embed(embedder, EmbedKind::Text, t.as_bytes());
        Ok(PromptEmbeddingSet {
            v_pos: e(&p.positive)?,
            v_neg: e(&p.negative)?,
            v_empty: e(&p.empty)?,
        })
    }
}

/// `v* = v_pos − 0.5·(0.9·v_neg + 0.1·v_empty)`, not re-normalized.
pub fn combine(p: &PromptEmbeddingSet) -> Result<Vec<f64>> {
    let d = p.v_pos.len();
    if p.v_neg.len() != d || p.v_empty.len() != d {
        return Err(Error::Config(format!(
            "prompt embedding dimensions differ: {}, {}, {}",
            d,
            p.v_neg.len(),
            p.v_empty.len()
        )));
    }
    Ok((0..d)
        .map(|i| p.v_pos[i] - 0.5 * (0.9 * p.v_neg[i] + 0.1 * p.v_empty[i]))
        .collect())
}

/// Square linear map applied to image embeddings, plus the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHead {
    pub dimension: usize,
    pub tau: f64,
    /// Row-major `dimension × dimension`.
    pub weights: Vec<f64>,
    pub trained_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainerConfig>,
}

impl RewardHead {
    /// Identity weights: scores equal the raw embedding similarity.
    pub fn identity(dimension: usize, tau: f64) -> Self {
        let mut weights = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            weights[i * dimension + i] = 1.0;
        }
        RewardHead {
            dimension,
            tau,
            weights,
            trained_steps: 0,
            config: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::validation("tau", "must be positive"));
        }
        if self.weights.len() != self.dimension * self.dimension {
            return Err(Error::validation("weights", "must hold dimension² entries"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("head weights are not finite".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dimension;
        self.weights.chunks_exact(d).map(|row| dot(row, x)).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let head: RewardHead = serde_json::from_slice(bytes)?;
        head.validate()?;
        Ok(head)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_vector(name: &str, v: &[f64], d: usize) -> Result<f64> {
    if v.len() != d {
        return Err(Error::Config(format!("{name} has dimension {}, head expects {d}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{name} contains non-finite values")));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Numeric(format!("{name} is the zero vector")));
    }
    Ok(n)
}

/// `τ · ⟨normalize(W·x), normalize(v*)⟩`
pub fn score(image_emb: &[f64], v_star: &[f64], head: &RewardHead) -> Result<f64> {
    let d = head.dimension;
    check_vector("image embedding", image_emb, d)?;
    let t_norm = check_vector("text embedding", v_star, d)?;
    let u = head.apply(image_emb);
    let u_norm = check_vector("projected image embedding", &u, d)?;
    let s = head.tau * dot(&u, v_star) / (u_norm * t_norm);
    if !s.is_finite() {
        return Err(Error::Numeric("score is not finite".into()));
    }
    Ok(s)
}

/// Hinge on the score difference. The corrected form penalizes the
/// rejected sample outscoring the chosen one.
pub fn margin_loss(s_plus: f64, s_minus: f64, m: f64) -> f64 {
    (s_minus - s_plus + m).max(0.0)
}

/// Scores a screenshot against a description's combined prompt embedding.
pub fn score_image(embedder: &dyn Embedder, png: &[u8], v_star: &[f64], head: &RewardHead) -> Result<f64> {
    let x = gateway::embed(embedder, EmbedKind::Image, png)?;
    score(&x, v_star, head)
}

/// Keeps the `k` best-scored candidates of `batch`: highest score first,
/// ties to the lower batch index.
pub fn topk_filter(batch: &GenerationBatch, scores: &[f64], k: usize) -> Result<Vec<CandidateId>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if scores.len() != batch.candidate_ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} candidates",
            scores.len(),
            batch.candidate_ids.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores must not be NaN".into()));
    }
    Ok(topk_indices(scores, k)
        .into_iter()
        .map(|i| batch.candidate_ids[i].clone())
        .collect())
}

/// Indices of the `k` largest scores (ties to the lower index), best first.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
