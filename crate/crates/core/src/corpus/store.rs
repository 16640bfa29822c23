use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{normalize_text, GenerationBatch, PreferencePair, Provenance, Split, UiCandidate, UiDescription};
use crate::arena::{AgreementRecord, Battle};
use crate::error::{Error, Result};
use crate::feedback::AnnotationRecord;
use crate::hash::ContentHash;
use crate::ids::{BatchId, CandidateId, DescriptionId, PairId, RecordId};

const MANIFEST: &str = "manifest.jsonl";
const BLOBS: &str = "blobs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Html,
    Screenshot,
    Geometry,
    SketchDocument,
    SketchPreview,
    RewardHead,
    Export,
}

/// Ownership of a blob: which description (and candidate) it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub hash: ContentHash,
    pub kind: ArtifactKind,
    pub description_id: Option<DescriptionId>,
    pub candidate_id: Option<CandidateId>,
}

/// A generator's rendered output for one description, used by the arena.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub model: String,
    pub description_id: DescriptionId,
    pub screenshot_ref: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub name: String,
    pub blob: ContentHash,
    pub trained_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Entry {
    Description(UiDescription),
    Batch(GenerationBatch),
    Candidate(UiCandidate),
    CandidateArtifacts {
        candidate_id: CandidateId,
        screenshot_ref: Option<ContentHash>,
        geometry_ref: Option<ContentHash>,
        sketch_ref: Option<ContentHash>,
    },
    CandidateScore {
        candidate_id: CandidateId,
        score: f64,
    },
    Retained {
        batch_id: BatchId,
        retained_ids: Vec<CandidateId>,
    },
    Artifact(ArtifactRecord),
    Pair(PreferencePair),
    Annotation(AnnotationRecord),
    Battle(Battle),
    Agreement(AgreementRecord),
    ModelOutput(ModelOutput),
    Head(HeadRecord),
}

/// In-memory view of everything recorded so far.
#[derive(Debug, Default)]
pub struct State {
    descriptions: IndexMap<DescriptionId, UiDescription>,
    normalized: HashMap<String, DescriptionId>,
    batches: IndexMap<BatchId, GenerationBatch>,
    candidates: IndexMap<CandidateId, UiCandidate>,
    artifacts: HashMap<ContentHash, Vec<ArtifactRecord>>,
    pairs: Vec<PreferencePair>,
    pairs_by_record: HashMap<RecordId, PairId>,
    annotations: IndexMap<RecordId, AnnotationRecord>,
    battles: Vec<Battle>,
    agreement: Vec<AgreementRecord>,
    model_outputs: Vec<ModelOutput>,
    heads: Vec<HeadRecord>,
    blobs: HashSet<ContentHash>,
    counter: u64,
}

impl State {
    pub fn description(&self, id: &DescriptionId) -> Result<&UiDescription> {
        self.descriptions
            .get(id)
            .ok_or_else(|| Error::not_found("description", id.as_str()))
    }

    pub fn descriptions(&self) -> impl Iterator<Item = &UiDescription> {
        self.descriptions.values()
    }

    pub fn description_by_text(&self, text: &str) -> Option<&UiDescription> {
        self.normalized
            .get(&normalize_text(text))
            .and_then(|id| self.descriptions.get(id))
    }

    pub fn batch(&self, id: &BatchId) -> Result<&GenerationBatch> {
        self.batches.get(id).ok_or_else(|| Error::not_found("batch", id.as_str()))
    }

    pub fn batches(&self) -> impl Iterator<Item = &GenerationBatch> {
        self.batches.values()
    }

    /// Sampled batches only: excludes single-candidate batches holding revisions.
    pub fn sampled_batches(&self) -> impl Iterator<Item = &GenerationBatch> {
        self.batches.values().filter(move |b| {
            b.candidate_ids
                .first()
                .and_then(|c| self.candidates.get(c))
                .is_none_or(|c| c.parent.is_none())
        })
    }

    pub fn candidate(&self, id: &CandidateId) -> Result<&UiCandidate> {
        self.candidates
            .get(id)
            .ok_or_else(|| Error::not_found("candidate", id.as_str()))
    }

    pub fn candidates(&self) -> impl Iterator<Item = &UiCandidate> {
        self.candidates.values()
    }

    pub fn artifacts(&self, hash: &ContentHash) -> &[ArtifactRecord] {
        self.artifacts.get(hash).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn has_blob(&self, hash: &ContentHash) -> bool {
        self.blobs.contains(hash)
    }

    /// True when `hash` is a registered image artifact of `description`.
    pub fn image_resolves(&self, hash: &ContentHash, description: &DescriptionId) -> bool {
        self.artifacts(hash).iter().any(|a| {
            matches!(a.kind, ArtifactKind::Screenshot | ArtifactKind::SketchPreview)
                && a.description_id.as_ref() == Some(description)
        })
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn pair_for_record(&self, record: &RecordId) -> Option<&PairId> {
        self.pairs_by_record.get(record)
    }

    pub fn annotations(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.annotations.values()
    }

    pub fn annotation(&self, id: &RecordId) -> Option<&AnnotationRecord> {
        self.annotations.get(id)
    }

    pub fn battles(&self) -> &[Battle] {
        &self.battles
    }

    pub fn agreement_records(&self) -> &[AgreementRecord] {
        &self.agreement
    }

    pub fn model_outputs(&self) -> &[ModelOutput] {
        &self.model_outputs
    }

    pub fn heads(&self) -> &[HeadRecord] {
        &self.heads
    }

    pub fn latest_head(&self, name: &str) -> Option<&HeadRecord> {
        self.heads.iter().rev().find(|h| h.name == name)
    }

    fn check(&self, entry: &Entry) -> Result<()> {
        match entry {
            Entry::Description(d) => {
                if d.text.trim().is_empty() {
                    return Err(Error::validation("text", "description text is empty"));
                }
                if self.normalized.contains_key(&normalize_text(&d.text)) {
                    return Err(Error::validation("text", format!("duplicate description `{}`", d.text)));
                }
            }
            Entry::Batch(b) => {
                self.description(&b.description_id)?;
            }
            Entry::Candidate(c) => {
                self.description(&c.description_id)?;
                self.batch(&c.batch_id)?;
            }
            Entry::CandidateArtifacts { candidate_id, .. } | Entry::CandidateScore { candidate_id, .. } => {
                self.candidate(candidate_id)?;
            }
            Entry::Retained { batch_id, retained_ids } => {
                let batch = self.batch(batch_id)?;
                if let Some(stray) = retained_ids.iter().find(|id| !batch.candidate_ids.contains(id)) {
                    return Err(Error::validation("retained_ids", format!("{stray} is not in batch {batch_id}")));
                }
            }
            Entry::Artifact(a) => {
                if !self.blobs.contains(&a.hash) {
                    return Err(Error::not_found("blob", a.hash.as_str()));
                }
                if let Some(d) = &a.description_id {
                    self.description(d)?;
                }
            }
            Entry::Pair(p) => {
                p.validate()?;
                self.description(&p.description_id)?;
                for (field, r) in [("chosen_ref", &p.chosen_ref), ("rejected_ref", &p.rejected_ref)] {
                    if !self.image_resolves(r, &p.description_id) {
                        return Err(Error::Integrity {
                            record: p.id.to_string(),
                            message: format!("{field} {r} does not resolve to an image of {}", p.description_id),
                        });
                    }
                }
            }
            Entry::Annotation(a) => a.validate(self)?,
            Entry::Battle(b) => b.validate()?,
            Entry::Agreement(a) => a.validate()?,
            Entry::ModelOutput(m) => {
                self.description(&m.description_id)?;
                if !self.blobs.contains(&m.screenshot_ref) {
                    return Err(Error::not_found("blob", m.screenshot_ref.as_str()));
                }
            }
            Entry::Head(h) => {
                if !self.blobs.contains(&h.blob) {
                    return Err(Error::not_found("blob", h.blob.as_str()));
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Description(d) => {
                self.counter += 1;
                self.normalized.insert(normalize_text(&d.text), d.id.clone());
                self.descriptions.insert(d.id.clone(), d);
            }
            Entry::Batch(b) => {
                self.counter += 1;
                self.batches.insert(b.id.clone(), b);
            }
            Entry::Candidate(c) => {
                self.counter += 1;
                if let Some(batch) = self.batches.get_mut(&c.batch_id) {
                    batch.candidate_ids.push(c.id.clone());
                }
                self.register(ArtifactRecord {
                    hash: c.html_ref.clone(),
                    kind: ArtifactKind::Html,
                    description_id: Some(c.description_id.clone()),
                    candidate_id: Some(c.id.clone()),
                });
                self.candidates.insert(c.id.clone(), c);
            }
            Entry::CandidateArtifacts {
                candidate_id,
                screenshot_ref,
                geometry_ref,
                sketch_ref,
            } => {
                let Some(c) = self.candidates.get_mut(&candidate_id) else { return };
                let owner = (c.description_id.clone(), c.id.clone());
                if screenshot_ref.is_some() {
                    c.screenshot_ref = screenshot_ref.clone();
                }
                if geometry_ref.is_some() {
                    c.geometry_ref = geometry_ref.clone();
                }
                if sketch_ref.is_some() {
                    c.sketch_ref = sketch_ref.clone();
                }
                for (hash, kind) in [
                    (screenshot_ref, ArtifactKind::Screenshot),
                    (geometry_ref, ArtifactKind::Geometry),
                    (sketch_ref, ArtifactKind::SketchDocument),
                ] {
                    if let Some(hash) = hash {
                        self.register(ArtifactRecord {
                            hash,
                            kind,
                            description_id: Some(owner.0.clone()),
                            candidate_id: Some(owner.1.clone()),
                        });
                    }
                }
            }
            Entry::CandidateScore { candidate_id, score } => {
                if let Some(c) = self.candidates.get_mut(&candidate_id) {
                    c.score = Some(score);
                }
            }
            Entry::Retained { batch_id, retained_ids } => {
                if let Some(b) = self.batches.get_mut(&batch_id) {
                    b.retained_ids = retained_ids;
                }
            }
            Entry::Artifact(a) => self.register(a),
            Entry::Pair(p) => {
                self.counter += 1;
                if let Some(r) = &p.source_record {
                    self.pairs_by_record.insert(r.clone(), p.id.clone());
                }
                self.pairs.push(p);
            }
            Entry::Annotation(a) => {
                self.annotations.insert(a.record_id().clone(), a);
            }
            Entry::Battle(b) => self.battles.push(b),
            Entry::Agreement(a) => self.agreement.push(a),
            Entry::ModelOutput(m) => {
                self.register(ArtifactRecord {
                    hash: m.screenshot_ref.clone(),
                    kind: ArtifactKind::Screenshot,
                    description_id: Some(m.description_id.clone()),
                    candidate_id: None,
                });
                self.model_outputs.push(m);
            }
            Entry::Head(h) => self.heads.push(h),
        }
    }

    fn register(&mut self, record: ArtifactRecord) {
        let list = self.artifacts.entry(record.hash.clone()).or_default();
        if !list.contains(&record) {
            list.push(record);
        }
    }
}

struct Journal {
    file: Option<File>,
    durable: bool,
}

/// Single-writer, multi-reader store.
///
/// Mutations are serialized through one writer lock, appended to the
/// manifest and synced before they become visible to readers. Readers take
/// a consistent snapshot with [`Store::read`].
pub struct Store {
    root: Option<PathBuf>,
    state: RwLock<State>,
    journal: Mutex<Journal>,
    memory_blobs: Mutex<HashMap<ContentHash, Arc<[u8]>>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Store {
    /// Store with no backing directory; used by tests and dry runs.
    pub fn in_memory() -> Self {
        Store {
            root: None,
            state: RwLock::new(State::default()),
            journal: Mutex::new(Journal {
                file: None,
                durable: false,
            }),
            memory_blobs: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a store directory and replays its manifest.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let blob_dir = root.join(BLOBS);
        std::fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;

        let mut state = State::default();
        for entry in std::fs::read_dir(&blob_dir).map_err(|e| Error::io(&blob_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&blob_dir, e))?;
            if let Some(hash) = entry.file_name().to_str().and_then(ContentHash::parse) {
                state.blobs.insert(hash);
            }
        }

        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            let reader = BufReader::new(File::open(&manifest).map_err(|e| Error::io(&manifest, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(&manifest, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line).map_err(|e| Error::Integrity {
                    record: format!("{}:{}", manifest.display(), n + 1),
                    message: e.to_string(),
                })?;
                state.apply(entry);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(|e| Error::io(&manifest, e))?;
        Ok(Store {
            root: Some(root),
            state: RwLock::new(state),
            journal: Mutex::new(Journal {
                file: Some(file),
                durable: true,
            }),
            memory_blobs: Mutex::new(HashMap::new()),
        })
    }

    /// Skips fsync on every append. Bulk imports only.
    pub fn set_durable(&self, durable: bool) {
        self.journal.lock().expect("journal lock").durable = durable;
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().expect("state lock poisoned")
    }

    /// Validates, journals and applies one entry under the writer lock.
    /// `build` sees the state and the next counter value.
    fn commit<T>(&self, build: impl FnOnce(&State, u64) -> Result<(Entry, T)>) -> Result<T> {
        let mut journal = self.journal.lock().expect("journal lock poisoned");
        let (entry, out) = {
            let state = self.read();
            let (entry, out) = build(&state, state.counter + 1)?;
            state.check(&entry)?;
            (entry, out)
        };
        let durable = journal.durable;
        if let Some(file) = journal.file.as_mut() {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let path = self.root.as_ref().map(|r| r.join(MANIFEST)).unwrap_or_default();
            file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
            if durable {
                file.sync_data().map_err(|e| Error::io(&path, e))?;
            }
        }
        self.state.write().expect("state lock poisoned").apply(entry);
        Ok(out)
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<ContentHash> {
        let hash = ContentHash::of(bytes);
        if self.read().has_blob(&hash) {
            return Ok(hash);
        }
        match &self.root {
            Some(root) => {
                let path = root.join(BLOBS).join(hash.as_str());
                let tmp = root.join(BLOBS).join(format!(".{}.tmp", hash.as_str()));
                std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
                std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
            }
            None => {
                self.memory_blobs
                    .lock()
                    .expect("blob lock poisoned")
                    .insert(hash.clone(), Arc::from(bytes));
            }
        }
        self.state.write().expect("state lock poisoned").blobs.insert(hash.clone());
        Ok(hash)
    }

    pub fn blob(&self, hash: &ContentHash) -> Result<Vec<u8>> {
        match &self.root {
            Some(root) => {
                let path = root.join(BLOBS).join(hash.as_str());
                std::fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::not_found("blob", hash.as_str()),
                    _ => Error::io(&path, e),
                })
            }
            None => self
                .memory_blobs
                .lock()
                .expect("blob lock poisoned")
                .get(hash)
                .map(|b| b.to_vec())
                .ok_or_else(|| Error::not_found("blob", hash.as_str())),
        }
    }

    pub fn blob_text(&self, hash: &ContentHash) -> Result<String> {
        String::from_utf8(self.blob(hash)?).map_err(|_| Error::Integrity {
            record: hash.to_string(),
            message: "blob is not UTF-8 text".into(),
        })
    }

    pub fn add_description(&self, text: &str, split: Split) -> Result<DescriptionId> {
        let content = ContentHash::of(normalize_text(text).as_bytes());
        self.commit(|_, n| {
            let id = DescriptionId::mint(n, &content);
            let d = UiDescription {
                id: id.clone(),
                text: text.trim().to_owned(),
                split,
            };
            Ok((Entry::Description(d), id))
        })
    }

    pub fn begin_batch(&self, description_id: &DescriptionId, sampler_seed: u64) -> Result<BatchId> {
        let content = ContentHash::of(format!("{description_id}:{sampler_seed}").as_bytes());
        self.commit(|state, n| {
            state.description(description_id)?;
            let id = BatchId::mint(n, &content);
            let batch = GenerationBatch {
                id: id.clone(),
                description_id: description_id.clone(),
                candidate_ids: Vec::new(),
                sampler_seed,
                retained_ids: Vec::new(),
            };
            Ok((Entry::Batch(batch), id))
        })
    }

    /// Stores `html` as the next candidate of `batch_id`; the markup blob
    /// is written once per distinct content.
    pub fn put_candidate(&self, batch_id: &BatchId, html: &str) -> Result<CandidateId> {
        self.put_candidate_with_parent(batch_id, html, None)
    }

    fn put_candidate_with_parent(&self, batch_id: &BatchId, html: &str, parent: Option<CandidateId>) -> Result<CandidateId> {
        if html.trim().is_empty() {
            return Err(Error::validation("html", "candidate markup is empty"));
        }
        let html_ref = self.put_blob(html.as_bytes())?;
        self.commit(|state, n| {
            let batch = state.batch(batch_id)?;
            let id = CandidateId::mint(n, &html_ref);
            let candidate = UiCandidate {
                id: id.clone(),
                description_id: batch.description_id.clone(),
                batch_id: batch_id.clone(),
                batch_index: batch.candidate_ids.len() as u32,
                html_ref: html_ref.clone(),
                screenshot_ref: None,
                geometry_ref: None,
                sketch_ref: None,
                score: None,
                parent,
            };
            Ok((Entry::Candidate(candidate), id))
        })
    }

    /// Persists a feedback-driven revision of `parent` as a first-class
    /// candidate in its own single-entry batch.
    pub fn put_revision(&self, parent: &CandidateId, html: &str) -> Result<CandidateId> {
        let description_id = self.read().candidate(parent)?.description_id.clone();
        let batch = self.begin_batch(&description_id, 0)?;
        self.put_candidate_with_parent(&batch, html, Some(parent.clone()))
    }

    pub fn candidate_html(&self, id: &CandidateId) -> Result<String> {
        let hash = self.read().candidate(id)?.html_ref.clone();
        self.blob_text(&hash)
    }

    pub fn attach_artifacts(
        &self,
        candidate_id: &CandidateId,
        screenshot_ref: Option<ContentHash>,
        geometry_ref: Option<ContentHash>,
        sketch_ref: Option<ContentHash>,
    ) -> Result<()> {
        for hash in [&screenshot_ref, &geometry_ref, &sketch_ref].into_iter().flatten() {
            if !self.read().has_blob(hash) {
                return Err(Error::not_found("blob", hash.as_str()));
            }
        }
        self.commit(|_, _| {
            Ok((
                Entry::CandidateArtifacts {
                    candidate_id: candidate_id.clone(),
                    screenshot_ref,
                    geometry_ref,
                    sketch_ref,
                },
                (),
            ))
        })
    }

    pub fn set_score(&self, candidate_id: &CandidateId, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::validation("score", "score must be finite"));
        }
        self.commit(|_, _| {
            Ok((
                Entry::CandidateScore {
                    candidate_id: candidate_id.clone(),
                    score,
                },
                (),
            ))
        })
    }

    pub fn set_retained(&self, batch_id: &BatchId, retained_ids: Vec<CandidateId>) -> Result<()> {
        self.commit(|_, _| {
            Ok((
                Entry::Retained {
                    batch_id: batch_id.clone(),
                    retained_ids,
                },
                (),
            ))
        })
    }

    pub fn register_artifact(&self, record: ArtifactRecord) -> Result<()> {
        if self.read().artifacts(&record.hash).contains(&record) {
            return Ok(());
        }
        self.commit(|_, _| Ok((Entry::Artifact(record), ())))
    }

    /// Records a preference pair. A pair for an already-transformed
    /// `source_record` is not added again; the existing id is returned.
    pub fn add_pair(
        &self,
        description_id: &DescriptionId,
        chosen_ref: ContentHash,
        rejected_ref: ContentHash,
        provenance: Provenance,
        annotator_id: &str,
        source_record: Option<RecordId>,
    ) -> Result<PairId> {
        self.commit(|state, n| {
            let content = ContentHash::of(format!("{chosen_ref}>{rejected_ref}").as_bytes());
            let id = PairId::mint(n, &content);
            let pair = PreferencePair {
                id: id.clone(),
                description_id: description_id.clone(),
                chosen_ref,
                rejected_ref,
                provenance,
                annotator_id: annotator_id.to_owned(),
                source_record: source_record.clone(),
            };
            if let Some(existing) = source_record.as_ref().and_then(|r| state.pair_for_record(r)) {
                return Err(Error::validation(
                    "source_record",
                    format!("record already transformed into {existing}"),
                ));
            }
            Ok((Entry::Pair(pair), id))
        })
    }

    /// Ingests an annotation. Re-submitting an identical record is a no-op.
    pub fn add_annotation(&self, record: AnnotationRecord) -> Result<bool> {
        if let Some(existing) = self.read().annotation(record.record_id()) {
            return if *existing == record {
                Ok(false)
            } else {
                Err(Error::validation(
                    "record_id",
                    format!("{} already used by a different record", record.record_id()),
                ))
            };
        }
        self.commit(|_, _| Ok((Entry::Annotation(record), true)))
    }

    pub fn add_battle(&self, battle: Battle) -> Result<()> {
        self.commit(|_, _| Ok((Entry::Battle(battle), ())))
    }

    pub fn add_agreement(&self, record: AgreementRecord) -> Result<()> {
        self.commit(|_, _| Ok((Entry::Agreement(record), ())))
    }

    pub fn add_model_output(&self, output: ModelOutput) -> Result<()> {
        self.commit(|_, _| Ok((Entry::ModelOutput(output), ())))
    }

    pub fn add_head(&self, record: HeadRecord) -> Result<()> {
        self.commit(|_, _| Ok((Entry::Head(record), ())))
    }
}
