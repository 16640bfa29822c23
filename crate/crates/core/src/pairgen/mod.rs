//! Alignment datasets for the generator: reward-scored candidate batches,
//! best-versus-random code pairs, and a line-delimited ORPO export.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{GenerationBatch, Store};
use crate::error::{Error, Result};
use crate::gateway::{self, prompts, Backends};
use crate::ids::{BatchId, CandidateId, DescriptionId};
use crate::reward::{self, RewardHead};

pub const DEFAULT_MAX_TOKENS: usize = 4096;

// JSON has no infinities; the failure sentinel travels as `null`.
fn ser_score<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_score<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_id: CandidateId,
    /// `-inf` when scoring failed.
    #[serde(serialize_with = "ser_score", deserialize_with = "de_score")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl CandidateScore {
    pub fn is_usable(&self) -> bool {
        self.failure.is_none() && self.score.is_finite()
    }
}

/// One entry per batch candidate, in batch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBatch {
    pub batch_id: BatchId,
    pub description_id: DescriptionId,
    pub scores: Vec<CandidateScore>,
}

impl ScoredBatch {
    pub fn failures(&self) -> usize {
        self.scores.iter().filter(|s| !s.is_usable()).count()
    }

    /// Scores with failures mapped to `-inf`, for top-k filtering.
    pub fn values(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|s| if s.is_usable() { s.score } else { f64::NEG_INFINITY })
            .collect()
    }
}

/// Screenshot of the candidate, rendering (and storing) it first if needed.
fn screenshot(store: &Store, backends: &Backends, id: &CandidateId) -> Result<Vec<u8>> {
    let existing = store.read().candidate(id)?.screenshot_ref.clone();
    let hash = match existing {
        Some(h) => h,
        None => gateway::render_candidate(store, backends, id, false)?.screenshot,
    };
    store.blob(&hash)
}

/// Scores every candidate of `batch` through render → embed → score.
/// Individual failures become flagged `-inf` sentinels; if nothing scores
/// the batch fails as a whole.
pub fn score_batch(store: &Store, backends: &Backends, batch: &GenerationBatch, head: &RewardHead) -> Result<ScoredBatch> {
    let description = store.read().description(&batch.description_id)?.text.clone();
    let v_star = reward::combine(&reward::PromptEmbeddingSet::embed(backends.embedder.as_ref(), &description)?)?;
    let scores: Vec<CandidateScore> = batch
        .candidate_ids
        .iter()
        .map(|id| {
            let scored = screenshot(store, backends, id)
                .and_then(|png| reward::score_image(backends.embedder.as_ref(), &png, &v_star, head));
            match scored {
                Ok(score) => CandidateScore {
                    candidate_id: id.clone(),
                    score,
                    failure: None,
                },
                Err(e) => {
                    log::warn!("scoring {id} failed: {e}");
                    CandidateScore {
                        candidate_id: id.clone(),
                        score: f64::NEG_INFINITY,
                        failure: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    if scores.iter().all(|s| !s.is_usable()) {
        return Err(Error::EmptyBatch {
            batch: batch.id.to_string(),
        });
    }
    Ok(ScoredBatch {
        batch_id: batch.id.clone(),
        description_id: batch.description_id.clone(),
        scores,
    })
}

/// [`score_batch`] over many batches in parallel; output keeps input order.
pub fn score_batches(store: &Store, backends: &Backends, batches: &[GenerationBatch], head: &RewardHead) -> Vec<Result<ScoredBatch>> {
    batches
        .par_iter()
        .map(|b| score_batch(store, backends, b, head))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub description_id: DescriptionId,
    pub chosen_id: CandidateId,
    pub rejected_id: CandidateId,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Which candidates a pair is made of, by position in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairPick {
    pub chosen: usize,
    pub rejected: usize,
}

/// Chosen is the best usable score (ties to the lower index); rejected
/// candidates are drawn uniformly, without repeats, from the other usable
/// ones. `None` when fewer than two candidates are usable.
pub fn pick_pairs<R: Rng + ?Sized>(scores: &[CandidateScore], per_description: usize, rng: &mut R) -> Option<Vec<PairPick>> {
    let usable: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_usable()).collect();
    if usable.len() < 2 {
        return None;
    }
    let chosen = usable
        .iter()
        .copied()
        .reduce(|best, i| if scores[i].score > scores[best].score { i } else { best })
        .expect("non-empty");
    let mut rest: Vec<usize> = usable.into_iter().filter(|&i| i != chosen).collect();
    let n = per_description.min(rest.len());
    let mut picks = Vec::with_capacity(n);
    for k in 0..n {
        let j = rng.random_range(k..rest.len());
        rest.swap(k, j);
        picks.push(PairPick {
            chosen,
            rejected: rest[k],
        });
    }
    Some(picks)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentBuild {
    pub pairs: Vec<AlignmentPair>,
    /// Batches with fewer than two usable candidates.
    pub skipped: Vec<BatchId>,
}

/// Best-versus-random pairs, `per_description` per batch, with the full
/// generation prompt and both candidates' markup.
pub fn build_alignment_pairs<R: Rng + ?Sized>(
    store: &Store,
    scored: &[ScoredBatch],
    per_description: usize,
    rng: &mut R,
) -> Result<AlignmentBuild> {
    if per_description == 0 {
        return Err(Error::validation("pairs_per_description", "must be positive"));
    }
    let mut out = AlignmentBuild::default();
    for batch in scored {
        let Some(picks) = pick_pairs(&batch.scores, per_description, rng) else {
            log::warn!("batch {} has fewer than two usable candidates; skipped", batch.batch_id);
            out.skipped.push(batch.batch_id.clone());
            continue;
        };
        let description = store.read().description(&batch.description_id)?.text.clone();
        let prompt = prompts::generation_prompt(&description);
        for p in picks {
            let (c, r) = (&batch.scores[p.chosen], &batch.scores[p.rejected]);
            out.pairs.push(AlignmentPair {
                prompt: prompt.clone(),
                chosen: store.candidate_html(&c.candidate_id)?,
                rejected: store.candidate_html(&r.candidate_id)?,
                description_id: batch.description_id.clone(),
                chosen_id: c.candidate_id.clone(),
                rejected_id: r.candidate_id.clone(),
                chosen_score: c.score,
                rejected_score: r.score,
            });
        }
    }
    Ok(out)
}

/// Token-cap hook for the export. The default counts whitespace-delimited
/// tokens; plug in a real tokenizer to match a specific trainer.
pub trait TokenCounter {
    /// The longest prefix of `text` holding at most `max` tokens.
    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl TokenCounter for WhitespaceTokens {
    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str {
        let mut count = 0;
        let mut in_token = false;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if in_token && count == max {
                    return &text[..i];
                }
                in_token = false;
            } else if !in_token {
                if count == max {
                    return &text[..i];
                }
                in_token = true;
                count += 1;
            }
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub description_id: DescriptionId,
    pub chosen_score: f64,
    pub rejected_score: f64,
    /// Set when either side was cut at the token cap.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportSummary {
    pub records: usize,
    pub truncations: usize,
}

/// Writes one JSON record per line. Texts under the cap are written
/// unchanged.
pub fn export_orpo(pairs: &[AlignmentPair], out: &mut impl Write, max_tokens: usize, counter: &dyn TokenCounter) -> Result<ExportSummary> {
    let io = |e| Error::io("orpo export", e);
    let mut summary = ExportSummary::default();
    for p in pairs {
        let chosen = counter.truncate(&p.chosen, max_tokens);
        let rejected = counter.truncate(&p.rejected, max_tokens);
        let truncated = chosen.len() < p.chosen.len() || rejected.len() < p.rejected.len();
        let record = OrpoRecord {
            prompt: p.prompt.clone(),
            chosen: chosen.to_string(),
            rejected: rejected.to_string(),
            description_id: p.description_id.clone(),
            chosen_score: p.chosen_score,
            rejected_score: p.rejected_score,
            truncated,
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n").map_err(io)?;
        summary.records += 1;
        summary.truncations += truncated as usize;
    }
    out.flush().map_err(io)?;
    Ok(summary)
}

pub fn read_orpo(input: impl BufRead) -> Result<Vec<OrpoRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("orpo export", e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Integrity {
            record: format!("line {}", i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(records)
}
