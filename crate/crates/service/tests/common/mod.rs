//! Drives the whole pipeline through `run_job` on stub backends.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use uifeedback::corpus::{Provenance, Store};
use uifeedback::feedback::{
    AnnotationRecord, CommentSet, Interface, RankingJudgment, RevisionRecord, Side, SketchItem, SketchSet, TaskScheduler,
};
use uifeedback::gateway::stub::{SketchDocument, SketchLayer};
use uifeedback::gateway::Backends;
use uifeedback::hash::ContentHash;
use uifeedback::htmlkit::{GeometryMap, Rect, Region};
use uifeedback::ids::RecordId;
use uifeedback::pairgen::{read_orpo, OrpoRecord};
use uifeedback_service::{run_job, JobKind, JobReport, JobSpec};

pub const SEED: u64 = 17;
pub const ANNOTATOR: &str = "designer-1";

pub const EXAMPLES: [&str; 3] = [
    "A sign-in screen for a banking app",
    "A podcast player with chapter markers",
    "A travel itinerary with a day-by-day timeline",
];

pub fn job(store: &Store, backends: &Backends, spec: JobSpec) -> JobReport {
    let kind = spec.kind;
    run_job(store, backends, &spec).unwrap_or_else(|e| panic!("{kind} failed: {e}"))
}

/// Descriptions, sampled batches, renders, and the top-k filter.
pub fn generate(store: &Store, backends: &Backends, descriptions: usize, candidates: usize, k: usize) -> BTreeMap<JobKind, JobReport> {
    let mut reports = BTreeMap::new();
    for spec in [
        JobSpec::new(JobKind::GenDescriptions, SEED)
            .with("target_n", descriptions)
            .with("seed_examples", json!(EXAMPLES)),
        JobSpec::new(JobKind::GenCandidates, SEED).with("n", candidates),
        JobSpec::new(JobKind::Render, SEED),
        JobSpec::new(JobKind::Filter, SEED).with("k", k),
    ] {
        reports.insert(spec.kind, job(store, backends, spec));
    }
    reports
}

/// One annotation per interface, answered the way a designer would.
pub fn annotate(store: &Store) -> BTreeMap<Provenance, RecordId> {
    let sched = TaskScheduler::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut task = |i| sched.next_task(&store.read(), i, ANNOTATOR, &mut rng).unwrap();

    let t = task(Interface::Ranking);
    let ranking = AnnotationRecord::Ranking(RankingJudgment {
        record_id: RecordId::default(),
        description_id: t.description_id.clone(),
        left_candidate: t.candidates[0].candidate_id.clone(),
        right_candidate: t.candidates[1].candidate_id.clone(),
        winner: Side::Left,
        annotator_id: ANNOTATOR.into(),
        elapsed_secs: 9.0,
    });

    let t = task(Interface::Commenting);
    let commenting = AnnotationRecord::Commenting(CommentSet {
        record_id: RecordId::default(),
        candidate_id: t.candidates[0].candidate_id.clone(),
        comments: vec!["Give the primary action more contrast".into(), "Tighten the spacing in the header".into()],
        annotator_id: ANNOTATOR.into(),
        elapsed_secs: 70.0,
    });

    let t = task(Interface::Sketching);
    let candidate = t.candidates[0].candidate_id.clone();
    let geometry_ref = store.read().candidate(&candidate).unwrap().geometry_ref.clone().unwrap();
    let geometry = GeometryMap::from_text(&store.blob_text(&geometry_ref).unwrap()).unwrap();
    let deepest = geometry.boxes.iter().max_by_key(|b| b.element_path.depth()).unwrap();
    let sketching = AnnotationRecord::Sketching(SketchSet {
        record_id: RecordId::default(),
        candidate_id: candidate,
        items: vec![
            SketchItem {
                region: Region::Box { bbox: deepest.bbox },
                comment: "this block should stand out".into(),
            },
            SketchItem {
                region: Region::Point { x: 12.0, y: 12.0 },
                comment: "add a logo here".into(),
            },
        ],
        scale_factor: 1.0,
        annotator_id: ANNOTATOR.into(),
        elapsed_secs: 40.0,
    });

    let t = task(Interface::Revising);
    let original: ContentHash = t.candidates[0].sketch_document.clone().unwrap();
    let mut doc: SketchDocument = serde_json::from_slice(&store.blob(&original).unwrap()).unwrap();
    // The designer draws a new call-to-action bar over the layout.
    doc.layers.push(SketchLayer {
        name: "cta".into(),
        tag: "button".into(),
        frame: Rect::new(16.0, 40.0, 200.0, 48.0),
        fill: "#1d4ed8".into(),
    });
    let revised = store.put_blob(&serde_json::to_vec(&doc).unwrap()).unwrap();
    let revising = AnnotationRecord::Revising(RevisionRecord {
        record_id: RecordId::default(),
        candidate_id: t.candidates[0].candidate_id.clone(),
        original_sketch_ref: original,
        revised_sketch_ref: revised,
        annotator_id: ANNOTATOR.into(),
        elapsed_secs: 210.0,
    });

    let mut ids = BTreeMap::new();
    for (provenance, record) in [
        (Provenance::Ranking, ranking),
        (Provenance::Commenting, commenting),
        (Provenance::Sketching, sketching),
        (Provenance::Revising, revising),
    ] {
        let record = record.with_derived_id();
        ids.insert(provenance, record.record_id().clone());
        assert!(store.add_annotation(record).unwrap());
    }
    ids
}

pub struct Run {
    pub reports: BTreeMap<JobKind, JobReport>,
    pub records: BTreeMap<Provenance, RecordId>,
    pub orpo: Vec<u8>,
}

impl Run {
    pub fn orpo_records(&self) -> Vec<OrpoRecord> {
        read_orpo(BufReader::new(&self.orpo[..])).unwrap()
    }
}

/// Generation, one annotation per interface, transform, training, export.
pub fn full_pipeline(store: &Store, backends: &Backends, descriptions: usize, candidates: usize, k: usize) -> Run {
    let mut reports = generate(store, backends, descriptions, candidates, k);
    let records = annotate(store);
    for spec in [
        JobSpec::new(JobKind::TransformFeedback, SEED),
        JobSpec::new(JobKind::TrainReward, SEED).with("steps", 100),
        JobSpec::new(JobKind::ExportOrpo, SEED),
    ] {
        reports.insert(spec.kind, job(store, backends, spec));
    }
    let orpo = store.blob(&reports[&JobKind::ExportOrpo].artifacts["orpo"]).unwrap();
    Run { reports, records, orpo }
}

/// Every ORPO line carries non-empty prompt, chosen and rejected strings.
pub fn schema_valid(bytes: &[u8]) -> bool {
    let text = std::str::from_utf8(bytes).unwrap();
    text.lines().all(|line| {
        let v: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(_) => return false,
        };
        ["prompt", "chosen", "rejected"]
            .iter()
            .all(|k| v[*k].as_str().is_some_and(|s| !s.trim().is_empty()))
    })
}
