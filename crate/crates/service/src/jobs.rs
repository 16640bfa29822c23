//! Batch jobs: one entry point per pipeline stage. Every job takes a kind,
//! a kind-specific parameter map and a seed, and returns a report echoing
//! the fully-defaulted parameters so the run can be repeated exactly.
//!
//! Backend calls may run in parallel, but store writes always happen in a
//! fixed order so that one seed yields one manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use uifeedback::arena::{self, RatingConfig};
use uifeedback::corpus::{ArtifactKind, ArtifactRecord, GenerationBatch, HeadRecord, Split, Store};
use uifeedback::feedback;
use uifeedback::gateway::{self, Backends, DescriptionRequest, EmbedKind};
use uifeedback::hash::{seed_from_parts, ContentHash};
use uifeedback::ids::DescriptionId;
use uifeedback::pairgen::{self, AlignmentPair, WhitespaceTokens};
use uifeedback::reward::{self, LossForm, RewardHead, SyntheticGroup, SyntheticPool, TrainerConfig, TrainingPair};
use uifeedback::{Error, Result};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    GenDescriptions,
    GenCandidates,
    Render,
    Filter,
    TransformFeedback,
    TrainReward,
    Score,
    BuildPairs,
    ExportOrpo,
    Ratings,
}

impl JobKind {
    pub const ALL: [JobKind; 10] = [
        JobKind::GenDescriptions,
        JobKind::GenCandidates,
        JobKind::Render,
        JobKind::Filter,
        JobKind::TransformFeedback,
        JobKind::TrainReward,
        JobKind::Score,
        JobKind::BuildPairs,
        JobKind::ExportOrpo,
        JobKind::Ratings,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            JobKind::GenDescriptions => "gen-descriptions",
            JobKind::GenCandidates => "gen-candidates",
            JobKind::Render => "render",
            JobKind::Filter => "filter",
            JobKind::TransformFeedback => "transform-feedback",
            JobKind::TrainReward => "train-reward",
            JobKind::Score => "score",
            JobKind::BuildPairs => "build-pairs",
            JobKind::ExportOrpo => "export-orpo",
            JobKind::Ratings => "ratings",
        }
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobKind {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, ServiceError> {
        JobKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ServiceError::Config(format!("unknown job kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub kind: JobKind,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default)]
    pub seed: u64,
}

impl JobSpec {
    pub fn new(kind: JobKind, seed: u64) -> Self {
        JobSpec {
            kind,
            parameters: Map::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_owned(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub kind: JobKind,
    pub seed: u64,
    /// Parameters with every default filled in.
    pub parameters: Value,
    pub counts: BTreeMap<String, u64>,
    /// Named blob hashes produced by the job.
    pub artifacts: BTreeMap<String, ContentHash>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDescriptionsParams {
    pub target_n: usize,
    pub seed_examples: Vec<String>,
    pub temperature: f64,
    pub split: Split,
    pub max_stalled_calls: usize,
}

impl Default for GenDescriptionsParams {
    fn default() -> Self {
        GenDescriptionsParams {
            target_n: 10,
            seed_examples: Vec::new(),
            temperature: 1.0,
            split: Split::Train,
            max_stalled_calls: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenCandidatesParams {
    /// Candidates per description.
    pub n: usize,
    pub temperature: f64,
    /// Restrict to these descriptions; otherwise every description of
    /// `split` without a sampled batch.
    pub description_ids: Option<Vec<DescriptionId>>,
    pub split: Split,
}

impl Default for GenCandidatesParams {
    fn default() -> Self {
        GenCandidatesParams {
            n: 32,
            temperature: 1.0,
            description_ids: None,
            split: Split::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub with_sketch: bool,
    /// Re-render candidates that already have a screenshot.
    pub all: bool,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            with_sketch: true,
            all: false,
        }
    }
}

fn default_head() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreParams {
    #[serde(default = "default_head")]
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub k: usize,
    pub head: String,
    /// Score again even where stored scores exist.
    pub rescore: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            k: reward::DEFAULT_TOP_K,
            head: default_head(),
            rescore: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformParams {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub decay: f64,
    pub margin: f64,
    pub aug: f64,
    pub loss_form: LossForm,
    pub tau: f64,
    /// Name the trained head is stored under.
    pub head: String,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = TrainerConfig::default();
        TrainParams {
            steps: t.max_steps,
            batch: t.batch_size,
            lr: t.learning_rate,
            decay: t.weight_decay,
            margin: t.margin,
            aug: t.aug_prob,
            loss_form: t.loss_form,
            tau: reward::DEFAULT_LOGIT_SCALE,
            head: default_head(),
        }
    }
}

impl TrainParams {
    fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            max_steps: self.steps,
            batch_size: self.batch,
            weight_decay: self.decay,
            learning_rate: self.lr,
            margin: self.margin,
            aug_prob: self.aug,
            rng_seed: seed,
            loss_form: self.loss_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildPairsParams {
    pub head: String,
    pub pairs_per_description: usize,
}

impl Default for BuildPairsParams {
    fn default() -> Self {
        BuildPairsParams {
            head: default_head(),
            pairs_per_description: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportOrpoParams {
    /// Output blob of a build-pairs job; when absent, pairs are built
    /// inline with `head` and `pairs_per_description`.
    pub pairs_ref: Option<ContentHash>,
    pub head: String,
    pub pairs_per_description: usize,
    pub max_tokens: usize,
    /// Also write the export to this file.
    pub output: Option<PathBuf>,
}

impl Default for ExportOrpoParams {
    fn default() -> Self {
        ExportOrpoParams {
            pairs_ref: None,
            head: default_head(),
            pairs_per_description: 1,
            max_tokens: pairgen::DEFAULT_MAX_TOKENS,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingsParams {
    pub rounds: usize,
    pub k_factor: f64,
    pub initial: f64,
    pub scale: f64,
    pub base: f64,
}

impl Default for RatingsParams {
    fn default() -> Self {
        let c = RatingConfig::default();
        RatingsParams {
            rounds: c.rounds,
            k_factor: c.k_factor,
            initial: c.initial,
            scale: c.scale,
            base: c.base,
        }
    }
}

/// Typed, defaulted parameters for one job.
#[derive(Debug, Clone, PartialEq)]
pub enum Parameters {
    GenDescriptions(GenDescriptionsParams),
    GenCandidates(GenCandidatesParams),
    Render(RenderParams),
    Filter(FilterParams),
    TransformFeedback(TransformParams),
    TrainReward(TrainParams),
    Score(ScoreParams),
    BuildPairs(BuildPairsParams),
    ExportOrpo(ExportOrpoParams),
    Ratings(RatingsParams),
}

fn parse<T: DeserializeOwned>(kind: JobKind, map: &Map<String, Value>) -> Result<T, ServiceError> {
    serde_json::from_value(Value::Object(map.clone())).map_err(|e| ServiceError::Parameters {
        kind: kind.to_string(),
        message: e.to_string(),
    })
}

fn echo<T: Serialize>(p: &T) -> Value {
    serde_json::to_value(p).expect("parameters serialize")
}

impl Parameters {
    /// Parses and range-checks the parameters of `spec`.
    pub fn from_spec(spec: &JobSpec) -> Result<Self, ServiceError> {
        let m = &spec.parameters;
        let k = spec.kind;
        let parsed = match k {
            JobKind::GenDescriptions => Parameters::GenDescriptions(parse(k, m)?),
            JobKind::GenCandidates => Parameters::GenCandidates(parse(k, m)?),
            JobKind::Render => Parameters::Render(parse(k, m)?),
            JobKind::Filter => Parameters::Filter(parse(k, m)?),
            JobKind::TransformFeedback => Parameters::TransformFeedback(parse(k, m)?),
            JobKind::TrainReward => Parameters::TrainReward(parse(k, m)?),
            JobKind::Score => Parameters::Score(parse(k, m)?),
            JobKind::BuildPairs => Parameters::BuildPairs(parse(k, m)?),
            JobKind::ExportOrpo => Parameters::ExportOrpo(parse(k, m)?),
            JobKind::Ratings => Parameters::Ratings(parse(k, m)?),
        };
        let bad = |message: &str| ServiceError::Parameters {
            kind: k.to_string(),
            message: message.to_owned(),
        };
        match &parsed {
            Parameters::GenDescriptions(p) if p.target_n == 0 => return Err(bad("target_n must be positive")),
            Parameters::GenDescriptions(p) if p.seed_examples.iter().all(|e| e.trim().is_empty()) => {
                return Err(bad("seed_examples needs at least one example"))
            }
            Parameters::GenCandidates(p) if p.n == 0 => return Err(bad("n must be positive")),
            Parameters::Filter(p) if p.k == 0 => return Err(bad("k must be positive")),
            Parameters::TrainReward(p) => {
                p.trainer_config(spec.seed).validate().map_err(|e| bad(&e.to_string()))?;
                if !(p.tau.is_finite() && p.tau > 0.0) {
                    return Err(bad("tau must be positive"));
                }
            }
            Parameters::BuildPairs(p) if p.pairs_per_description == 0 => {
                return Err(bad("pairs_per_description must be positive"))
            }
            Parameters::ExportOrpo(p) if p.max_tokens == 0 || p.pairs_per_description == 0 => {
                return Err(bad("max_tokens and pairs_per_description must be positive"))
            }
            Parameters::Ratings(p) => rating_config(p, spec.seed).validate().map_err(|e| bad(&e.to_string()))?,
            _ => {}
        }
        Ok(parsed)
    }

    fn echo(&self) -> Value {
        match self {
            Parameters::GenDescriptions(p) => echo(p),
            Parameters::GenCandidates(p) => echo(p),
            Parameters::Render(p) => echo(p),
            Parameters::Filter(p) => echo(p),
            Parameters::TransformFeedback(p) => echo(p),
            Parameters::TrainReward(p) => echo(p),
            Parameters::Score(p) => echo(p),
            Parameters::BuildPairs(p) => echo(p),
            Parameters::ExportOrpo(p) => echo(p),
            Parameters::Ratings(p) => echo(p),
        }
    }
}

fn rating_config(p: &RatingsParams, seed: u64) -> RatingConfig {
    RatingConfig {
        initial: p.initial,
        scale: p.scale,
        base: p.base,
        k_factor: p.k_factor,
        rounds: p.rounds,
        rng_seed: seed,
    }
}

/// Accumulates a report's counts, artifacts and details.
#[derive(Default)]
struct Outcome {
    counts: BTreeMap<String, u64>,
    artifacts: BTreeMap<String, ContentHash>,
    details: Value,
}

impl Outcome {
    fn count(&mut self, key: &str, n: usize) {
        *self.counts.entry(key.to_owned()).or_default() += n as u64;
    }
}

/// Runs one job against `store`. Errors carry the job kind.
pub fn run_job(store: &Store, backends: &Backends, spec: &JobSpec) -> Result<JobReport, ServiceError> {
    let params = Parameters::from_spec(spec)?;
    let started = Instant::now();
    log::info!("running {} job (seed {})", spec.kind, spec.seed);
    let mut out = Outcome::default();
    let seed = spec.seed;
    let result = match &params {
        Parameters::GenDescriptions(p) => gen_descriptions(store, backends, p, seed, &mut out),
        Parameters::GenCandidates(p) => gen_candidates(store, backends, p, seed, &mut out),
        Parameters::Render(p) => render(store, backends, p, &mut out),
        Parameters::Filter(p) => filter(store, backends, p, &mut out),
        Parameters::TransformFeedback(_) => transform(store, backends, &mut out),
        Parameters::TrainReward(p) => train_reward(store, backends, p, seed, &mut out),
        Parameters::Score(p) => score(store, backends, p, &mut out),
        Parameters::BuildPairs(p) => build_pairs(store, backends, p, seed, &mut out),
        Parameters::ExportOrpo(p) => export_orpo(store, backends, p, seed, &mut out),
        Parameters::Ratings(p) => ratings(store, p, seed, &mut out),
    };
    result.map_err(|source| ServiceError::Job {
        kind: spec.kind.to_string(),
        source,
    })?;
    Ok(JobReport {
        kind: spec.kind,
        seed,
        parameters: params.echo(),
        counts: out.counts,
        artifacts: out.artifacts,
        duration_ms: started.elapsed().as_millis() as u64,
        details: out.details,
    })
}

fn gen_descriptions(store: &Store, backends: &Backends, p: &GenDescriptionsParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let mut req = DescriptionRequest::new(p.target_n, p.seed_examples.clone(), p.temperature, seed);
    req.max_stalled_calls = p.max_stalled_calls;
    let add_all = |texts: &[String], out: &mut Outcome| -> Result<()> {
        for text in texts {
            if store.read().description_by_text(text).is_some() {
                out.count("already_present", 1);
            } else {
                store.add_description(text, p.split)?;
                out.count("added", 1);
            }
        }
        Ok(())
    };
    match gateway::generate_descriptions(backends.llm.as_ref(), &backends.profile, &req) {
        Ok(run) => {
            out.count("generated", run.texts.len());
            out.count("llm_calls", run.calls);
            add_all(&run.texts, out)
        }
        Err(Error::PartialResult { collected, reason }) => {
            // Keep what was collected; the job still fails.
            add_all(&collected, out)?;
            Err(Error::PartialResult { collected, reason })
        }
        Err(e) => Err(e),
    }
}

fn batch_seed(seed: u64, description: &DescriptionId) -> u64 {
    seed_from_parts(&[&seed.to_le_bytes(), description.as_str().as_bytes()])
}

fn gen_candidates(store: &Store, backends: &Backends, p: &GenCandidatesParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let targets: Vec<(DescriptionId, String)> = {
        let state = store.read();
        let sampled: std::collections::HashSet<&DescriptionId> = state
            .sampled_batches()
            .filter(|b| !b.candidate_ids.is_empty())
            .map(|b| &b.description_id)
            .collect();
        match &p.description_ids {
            Some(ids) => ids
                .iter()
                .map(|id| Ok((id.clone(), state.description(id)?.text.clone())))
                .collect::<Result<_>>()?,
            None => state
                .descriptions()
                .filter(|d| d.split == p.split && !sampled.contains(&d.id))
                .map(|d| (d.id.clone(), d.text.clone()))
                .collect(),
        }
    };
    let generated: Vec<(u64, Result<gateway::CandidateSet>)> = targets
        .par_iter()
        .map(|(id, text)| {
            let s = batch_seed(seed, id);
            (s, gateway::generate_candidates(backends.llm.as_ref(), &backends.profile, text, p.n, p.temperature, s))
        })
        .collect();
    for ((id, _), (sampler_seed, set)) in targets.iter().zip(generated) {
        match set {
            Ok(set) => {
                let batch = store.begin_batch(id, sampler_seed)?;
                for html in &set.htmls {
                    store.put_candidate(&batch, html)?;
                }
                out.count("batches", 1);
                out.count("candidates", set.htmls.len());
                out.count("failed_candidates", set.failures.len());
            }
            Err(e) => {
                log::warn!("no candidates for {id}: {e}");
                out.count("failed_descriptions", 1);
            }
        }
    }
    Ok(())
}

fn render(store: &Store, backends: &Backends, p: &RenderParams, out: &mut Outcome) -> Result<()> {
    let targets: Vec<_> = {
        let state = store.read();
        state
            .sampled_batches()
            .flat_map(|b| b.candidate_ids.iter())
            .filter_map(|id| state.candidate(id).ok())
            .filter(|c| p.all || c.screenshot_ref.is_none())
            .map(|c| (c.id.clone(), c.html_ref.clone()))
            .collect()
    };
    let rendered: Vec<Result<(String, gateway::RenderResult)>> = targets
        .par_iter()
        .map(|(_, html_ref)| {
            let html = store.blob_text(html_ref)?;
            let result = gateway::render_page(backends, &html)?;
            Ok((html, result))
        })
        .collect();
    for ((id, _), r) in targets.iter().zip(rendered) {
        match r.and_then(|(html, result)| {
            let truncated = result.truncated;
            gateway::store_render(store, backends, id, &html, &result, p.with_sketch).map(|_| truncated)
        }) {
            Ok(truncated) => {
                out.count("rendered", 1);
                out.count("truncated", truncated as usize);
            }
            Err(e) => {
                log::warn!("render of {id} failed: {e}");
                out.count("failed", 1);
            }
        }
    }
    Ok(())
}

/// The latest head stored under `name`, or the identity head.
pub fn load_head(store: &Store, backends: &Backends, name: &str) -> Result<RewardHead> {
    let blob = store.read().latest_head(name).map(|h| h.blob.clone());
    match blob {
        Some(hash) => RewardHead::from_json(&store.blob(&hash)?),
        None => Ok(RewardHead::identity(backends.embedder.dimension(), reward::DEFAULT_LOGIT_SCALE)),
    }
}

fn sampled_batches(store: &Store) -> Vec<GenerationBatch> {
    store
        .read()
        .sampled_batches()
        .filter(|b| !b.candidate_ids.is_empty())
        .cloned()
        .collect()
}

fn score(store: &Store, backends: &Backends, p: &ScoreParams, out: &mut Outcome) -> Result<()> {
    let head = load_head(store, backends, &p.head)?;
    let batches = sampled_batches(store);
    for scored in pairgen::score_batches(store, backends, &batches, &head) {
        match scored {
            Ok(s) => {
                for c in s.scores.iter().filter(|c| c.is_usable()) {
                    store.set_score(&c.candidate_id, c.score)?;
                }
                out.count("scored", s.scores.len() - s.failures());
                out.count("failed", s.failures());
            }
            Err(Error::EmptyBatch { batch }) => {
                log::warn!("batch {batch} has no scorable candidate");
                out.count("empty_batches", 1);
            }
            Err(e) => return Err(e),
        }
    }
    out.count("batches", batches.len());
    Ok(())
}

fn filter(store: &Store, backends: &Backends, p: &FilterParams, out: &mut Outcome) -> Result<()> {
    let needs_scores = p.rescore || {
        let state = store.read();
        let missing = state
            .sampled_batches()
            .flat_map(|b| b.candidate_ids.iter())
            .any(|id| state.candidate(id).map(|c| c.score.is_none()).unwrap_or(true));
        missing
    };
    if needs_scores {
        let mut sub = Outcome::default();
        score(store, backends, &ScoreParams { head: p.head.clone() }, &mut sub)?;
        for (k, v) in sub.counts {
            out.count(&format!("score_{k}"), v as usize);
        }
    }
    let mut retained = BTreeMap::new();
    for batch in sampled_batches(store) {
        let scores: Vec<f64> = {
            let state = store.read();
            batch
                .candidate_ids
                .iter()
                .map(|id| state.candidate(id).ok().and_then(|c| c.score).unwrap_or(f64::NEG_INFINITY))
                .collect()
        };
        let keep: Vec<_> = reward::topk_indices(&scores, p.k)
            .into_iter()
            .filter(|&i| scores[i].is_finite())
            .map(|i| batch.candidate_ids[i].clone())
            .collect();
        out.count("retained", keep.len());
        out.count("batches", 1);
        retained.insert(batch.id.to_string(), keep.len());
        store.set_retained(&batch.id, keep)?;
    }
    out.details = serde_json::json!({ "retained_per_batch": retained });
    Ok(())
}

fn transform(store: &Store, backends: &Backends, out: &mut Outcome) -> Result<()> {
    let report = feedback::transform_all(store, backends);
    for (interface, n) in &report.transformed {
        out.count(&format!("pairs_{interface}"), *n);
    }
    out.count("transformed", report.total_transformed());
    out.count("already_done", report.already_done);
    out.count("failed", report.failures.len());
    out.details = serde_json::to_value(&report)?;
    Ok(())
}

/// Memoized combined prompt embeddings per description.
struct TextEmbeddings<'a> {
    store: &'a Store,
    backends: &'a Backends,
    cache: BTreeMap<DescriptionId, Vec<f64>>,
}

impl TextEmbeddings<'_> {
    fn get(&mut self, id: &DescriptionId) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.get(id) {
            return Ok(v.clone());
        }
        let text = self.store.read().description(id)?.text.clone();
        let v = reward::combine(&reward::PromptEmbeddingSet::embed(self.backends.embedder.as_ref(), &text)?)?;
        self.cache.insert(id.clone(), v.clone());
        Ok(v)
    }
}

fn embed_image(store: &Store, backends: &Backends, hash: &ContentHash) -> Result<Vec<f64>> {
    gateway::embed(backends.embedder.as_ref(), EmbedKind::Image, &store.blob(hash)?)
}

fn train_reward(store: &Store, backends: &Backends, p: &TrainParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let mut texts = TextEmbeddings {
        store,
        backends,
        cache: BTreeMap::new(),
    };
    let pairs = store.read().pairs().to_vec();
    let mut designer = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        designer.push(TrainingPair {
            chosen: embed_image(store, backends, &pair.chosen_ref)?,
            rejected: embed_image(store, backends, &pair.rejected_ref)?,
            text: texts.get(&pair.description_id)?,
        });
    }
    let mut groups = Vec::new();
    for batch in sampled_batches(store) {
        let shots: Vec<ContentHash> = {
            let state = store.read();
            batch
                .candidate_ids
                .iter()
                .filter_map(|id| state.candidate(id).ok()?.screenshot_ref.clone())
                .collect()
        };
        if shots.len() < 2 {
            continue;
        }
        let candidates = shots
            .par_iter()
            .map(|h| embed_image(store, backends, h))
            .collect::<Result<Vec<_>>>()?;
        groups.push(SyntheticGroup {
            text: texts.get(&batch.description_id)?,
            candidates,
        });
    }
    let dimension = backends.embedder.dimension();
    let initial = RewardHead::identity(dimension, p.tau);
    let pool = SyntheticPool::new(groups, &initial)?;
    out.count("designer_pairs", designer.len());
    out.count("synthetic_groups", pool.len());
    let outcome = reward::train(&initial, &designer, &pool, &p.trainer_config(seed))?;
    let head_ref = store.put_blob(&outcome.head.to_json()?)?;
    store.register_artifact(ArtifactRecord {
        hash: head_ref.clone(),
        kind: ArtifactKind::RewardHead,
        description_id: None,
        candidate_id: None,
    })?;
    store.add_head(HeadRecord {
        name: p.head.clone(),
        blob: head_ref.clone(),
        trained_steps: outcome.head.trained_steps as usize,
    })?;
    let trace_ref = store.put_blob(outcome.trace_csv()?.as_bytes())?;
    out.artifacts.insert("head".into(), head_ref);
    out.artifacts.insert("trace".into(), trace_ref);
    out.count("steps", outcome.trace.len());
    out.details = serde_json::json!({
        "final_loss": outcome.trace.last().map(|r| r.mean_loss),
        "first_loss": outcome.trace.first().map(|r| r.mean_loss),
    });
    Ok(())
}

fn alignment_pairs(store: &Store, backends: &Backends, head: &str, per_description: usize, seed: u64, out: &mut Outcome) -> Result<Vec<AlignmentPair>> {
    let head = load_head(store, backends, head)?;
    let mut scored = Vec::new();
    for s in pairgen::score_batches(store, backends, &sampled_batches(store), &head) {
        match s {
            Ok(s) => scored.push(s),
            Err(Error::EmptyBatch { .. }) => out.count("empty_batches", 1),
            Err(e) => return Err(e),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let built = pairgen::build_alignment_pairs(store, &scored, per_description, &mut rng)?;
    out.count("pairs", built.pairs.len());
    out.count("skipped_batches", built.skipped.len());
    Ok(built.pairs)
}

fn put_export(store: &Store, bytes: &[u8]) -> Result<ContentHash> {
    let hash = store.put_blob(bytes)?;
    store.register_artifact(ArtifactRecord {
        hash: hash.clone(),
        kind: ArtifactKind::Export,
        description_id: None,
        candidate_id: None,
    })?;
    Ok(hash)
}

fn build_pairs(store: &Store, backends: &Backends, p: &BuildPairsParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let pairs = alignment_pairs(store, backends, &p.head, p.pairs_per_description, seed, out)?;
    let mut buf = Vec::new();
    for pair in &pairs {
        serde_json::to_writer(&mut buf, pair)?;
        buf.push(b'\n');
    }
    out.artifacts.insert("pairs".into(), put_export(store, &buf)?);
    Ok(())
}

fn export_orpo(store: &Store, backends: &Backends, p: &ExportOrpoParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let pairs: Vec<AlignmentPair> = match &p.pairs_ref {
        Some(hash) => store
            .blob_text(hash)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?,
        None => alignment_pairs(store, backends, &p.head, p.pairs_per_description, seed, out)?,
    };
    let mut buf = Vec::new();
    let summary = pairgen::export_orpo(&pairs, &mut buf, p.max_tokens, &WhitespaceTokens)?;
    out.count("records", summary.records);
    out.count("truncations", summary.truncations);
    out.artifacts.insert("orpo".into(), put_export(store, &buf)?);
    if let Some(path) = &p.output {
        std::fs::write(path, &buf).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn ratings(store: &Store, p: &RatingsParams, seed: u64, out: &mut Outcome) -> Result<()> {
    let battles = store.read().battles().to_vec();
    let report = arena::rating_report(&battles, &rating_config(p, seed))?;
    out.count("battles", battles.len());
    out.count("models", report.ratings.len());
    out.artifacts
        .insert("ratings_csv".into(), put_export(store, arena::ratings_csv(&report.ratings)?.as_bytes())?);
    out.artifacts
        .insert("matrix_csv".into(), put_export(store, arena::matrix_csv(&report.win_rates)?.as_bytes())?);
    out.details = serde_json::to_value(&report)?;
    Ok(())
}
