use std::collections::HashSet;
use std::io::BufReader;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uifeedback::corpus::{Provenance, Split, Store};
use uifeedback::feedback::{
    pairs_from_ranking, read_records, study_stats, transform_all, AnnotationRecord, CommentSet, Interface,
    RankingJudgment, RevisionRecord, Side, SketchItem, SketchSet, TaskScheduler,
};
use uifeedback::gateway::stub::{SketchDocument, StubLlm};
use uifeedback::gateway::{generate_candidates, render_candidate, Backends, Llm, LlmRequest};
use uifeedback::htmlkit::{match_annotation, snippet, GeometryMap, Region};
use uifeedback::ids::{CandidateId, DescriptionId, RecordId};
use uifeedback::Error;

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[test]
fn study_fixture_reproduces_reported_rates() {
    let records = read_records(BufReader::new(&include_bytes!("fixtures/study_records.jsonl")[..])).unwrap();
    let stats = study_stats(&records);
    assert_eq!(stats.total, 1460);
    let count = |i| stats.get(i).count;
    assert_eq!(
        [count(Interface::Ranking), count(Interface::Sketching), count(Interface::Commenting), count(Interface::Revising)],
        [1063, 181, 152, 64]
    );
    assert_eq!(round1(stats.get(Interface::Ranking).per_minute.unwrap()), 4.8);
    assert_eq!(round1(stats.get(Interface::Revising).mean_minutes_each.unwrap() * 100.0) / 100.0, 3.45);
    let commenting = stats.get(Interface::Commenting);
    assert_eq!(round1(commenting.mean_items_per_ui.unwrap()), 1.9);
    assert_eq!(round1(commenting.mean_text_chars.unwrap()), 87.1);
    let sketching = stats.get(Interface::Sketching);
    assert_eq!(round1(sketching.mean_items_per_ui.unwrap()), 2.7);
    assert_eq!(round1(sketching.mean_text_chars.unwrap()), 42.2);
    assert_eq!(stats.get(Interface::Ranking).mean_text_chars, None);
}

#[test]
fn malformed_lines_are_located() {
    let good = r#"{"interface":"commenting","candidate_id":"c","comments":["bigger title"],"annotator_id":"d1"}"#;
    let text = format!("{good}\n\n{{\"interface\":\"nope\"}}\n");
    match read_records(BufReader::new(text.as_bytes())) {
        Err(Error::Integrity { record, .. }) => assert_eq!(record, "line 3"),
        other => panic!("unexpected {other:?}"),
    }
    let empty = r#"{"interface":"commenting","candidate_id":"c","comments":["  "],"annotator_id":"d1"}"#;
    match read_records(BufReader::new(empty.as_bytes())) {
        Err(Error::Integrity { record, message }) => {
            assert_eq!(record, "line 1");
            assert!(message.contains("comments[0]"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    let parsed = read_records(BufReader::new(good.as_bytes())).unwrap();
    let again = read_records(BufReader::new(good.as_bytes())).unwrap();
    assert!(parsed[0].record_id().as_str().starts_with(RecordId::PREFIX));
    assert_eq!(parsed[0].record_id(), again[0].record_id());
}

/// Passes through to the stub while keeping every prompt.
struct Recording {
    inner: StubLlm,
    prompts: Mutex<Vec<String>>,
}

impl Llm for Recording {
    fn complete(&self, request: &LlmRequest) -> uifeedback::Result<String> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.complete(request)
    }
}

struct Fixture {
    store: Store,
    backends: Backends,
    recording: Arc<Recording>,
    description: DescriptionId,
    candidates: Vec<CandidateId>,
}

fn fixture() -> Fixture {
    let mut backends = Backends::stub(11);
    let recording = Arc::new(Recording {
        inner: StubLlm::new(11),
        prompts: Mutex::new(Vec::new()),
    });
    backends.llm = recording.clone();
    let store = Store::in_memory();
    let text = "A recipe app home screen with a search bar and featured dishes";
    let description = store.add_description(text, Split::Train).unwrap();
    let set = generate_candidates(backends.llm.as_ref(), &backends.profile, text, 4, 1.0, 5).unwrap();
    let batch = store.begin_batch(&description, 5).unwrap();
    let candidates: Vec<CandidateId> = set.htmls.iter().map(|h| store.put_candidate(&batch, h).unwrap()).collect();
    for c in &candidates {
        render_candidate(&store, &backends, c, true).unwrap();
    }
    store.set_retained(&batch, candidates.clone()).unwrap();
    Fixture {
        store,
        backends,
        recording,
        description,
        candidates,
    }
}

#[test]
fn scheduler_serves_blind_unique_tasks() {
    let f = fixture();
    let sched = TaskScheduler::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seen = HashSet::new();
    for _ in 0..6 {
        let task = sched.next_task(&f.store.read(), Interface::Ranking, "d1", &mut rng).unwrap();
        assert_eq!(task.candidates.len(), 2);
        assert_eq!(task.description_id, f.description);
        let json = serde_json::to_string(&task).unwrap();
        for leak in ["score", "provenance", "model", "batch"] {
            assert!(!json.contains(leak), "task leaks `{leak}`: {json}");
        }
        let mut key: Vec<_> = task.candidates.iter().map(|c| c.candidate_id.clone()).collect();
        key.sort();
        assert!(seen.insert(key), "unit served twice");
    }
    assert!(matches!(
        sched.next_task(&f.store.read(), Interface::Ranking, "d1", &mut rng),
        Err(Error::Exhausted { .. })
    ));
    // Another annotator still has the full pool.
    assert!(sched.next_task(&f.store.read(), Interface::Ranking, "d2", &mut rng).is_ok());
    let rev = sched.next_task(&f.store.read(), Interface::Revising, "d1", &mut rng).unwrap();
    assert!(rev.candidates[0].sketch_document.is_some());
    assert!(sched.next_task(&f.store.read(), Interface::Ranking, " ", &mut rng).is_err());
}

#[test]
fn answered_units_are_not_served_again() {
    let f = fixture();
    let sched = TaskScheduler::new();
    for c in &f.candidates {
        let rec = AnnotationRecord::Commenting(CommentSet {
            record_id: RecordId::default(),
            candidate_id: c.clone(),
            comments: vec!["more contrast".into()],
            annotator_id: "d1".into(),
            elapsed_secs: 30.0,
        })
        .with_derived_id();
        assert!(f.store.add_annotation(rec.clone()).unwrap());
        assert!(!f.store.add_annotation(rec).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sched.next_task(&f.store.read(), Interface::Commenting, "d1", &mut rng),
        Err(Error::Exhausted { .. })
    ));
}

#[test]
fn every_interface_transforms_with_its_provenance() {
    let f = fixture();
    let [a, b, c, d] = [0, 1, 2, 3].map(|i| f.candidates[i].clone());
    let shot = |id: &CandidateId| f.store.read().candidate(id).unwrap().screenshot_ref.clone().unwrap();

    let ranking = RankingJudgment {
        record_id: RecordId::new("rec-r"),
        description_id: f.description.clone(),
        left_candidate: a.clone(),
        right_candidate: b.clone(),
        winner: Side::Right,
        annotator_id: "d1".into(),
        elapsed_secs: 12.0,
    };
    let comments = CommentSet {
        record_id: RecordId::new("rec-c"),
        candidate_id: c.clone(),
        comments: vec!["Make the search bar more prominent".into(), "Use larger dish photos".into()],
        annotator_id: "d1".into(),
        elapsed_secs: 60.0,
    };

    let geometry_ref = f.store.read().candidate(&d).unwrap().geometry_ref.clone().unwrap();
    let geometry = GeometryMap::from_text(&f.store.blob_text(&geometry_ref).unwrap()).unwrap();
    let html_d = f.store.candidate_html(&d).unwrap();
    let deepest = geometry.boxes.iter().max_by_key(|b| b.element_path.depth()).unwrap();
    let scale = 2.0;
    let items = vec![
        SketchItem {
            region: Region::Box { bbox: deepest.bbox.scaled(scale) },
            comment: "tighten this".into(),
        },
        SketchItem {
            region: Region::Point { x: 10.0, y: 10.0 },
            comment: "header needs a logo".into(),
        },
    ];
    let expected: Vec<String> = items
        .iter()
        .map(|i| snippet(match_annotation(&i.region.to_css(scale), &geometry).unwrap(), &html_d).unwrap())
        .collect();
    let sketch = SketchSet {
        record_id: RecordId::new("rec-s"),
        candidate_id: d.clone(),
        items,
        scale_factor: scale,
        annotator_id: "d1".into(),
        elapsed_secs: 45.0,
    };

    let original_ref = f.store.read().candidate(&a).unwrap().sketch_ref.clone().unwrap();
    let mut doc: SketchDocument = serde_json::from_slice(&f.store.blob(&original_ref).unwrap()).unwrap();
    doc.layers[1].fill = "#ff0000".into();
    doc.layers.pop();
    let revised_ref = f.store.put_blob(&serde_json::to_vec(&doc).unwrap()).unwrap();
    let revision = RevisionRecord {
        record_id: RecordId::new("rec-v"),
        candidate_id: a.clone(),
        original_sketch_ref: original_ref.clone(),
        revised_sketch_ref: revised_ref,
        annotator_id: "d1".into(),
        elapsed_secs: 200.0,
    };

    for r in [
        AnnotationRecord::Ranking(ranking.clone()),
        AnnotationRecord::Commenting(comments),
        AnnotationRecord::Sketching(sketch),
        AnnotationRecord::Revising(revision),
    ] {
        r.validate(&f.store.read()).unwrap();
        f.store.add_annotation(r).unwrap();
    }

    let report = transform_all(&f.store, &f.backends);
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.total_transformed(), 4);
    let state = f.store.read();
    let pairs = state.pairs();
    assert_eq!(pairs.len(), 4);
    let by = |p: Provenance| pairs.iter().find(|x| x.provenance == p).unwrap();

    let r = by(Provenance::Ranking);
    assert_eq!((&r.chosen_ref, &r.rejected_ref), (&shot(&b), &shot(&a)));
    let cm = by(Provenance::Commenting);
    assert_eq!(cm.rejected_ref, shot(&c));
    assert_ne!(cm.chosen_ref, cm.rejected_ref);
    let sk = by(Provenance::Sketching);
    assert_eq!(sk.rejected_ref, shot(&d));
    let rv = by(Provenance::Revising);
    assert_ne!(rv.chosen_ref, rv.rejected_ref);
    for p in pairs {
        assert_eq!(p.description_id, f.description);
        assert!(state.has_blob(&p.chosen_ref) && state.has_blob(&p.rejected_ref));
    }
    // Revisions are stored as children of the annotated candidates.
    let children: Vec<_> = state.candidates().filter_map(|x| x.parent.clone()).collect();
    assert_eq!(children.len(), 2);
    assert!(children.contains(&c) && children.contains(&d));
    // The region-edit request names each grounded element's markup.
    let prompts = f.recording.prompts.lock().unwrap();
    let region_prompt = prompts.iter().find(|p| p.contains("tighten this")).expect("region edit issued");
    for s in &expected {
        assert!(region_prompt.contains(s.as_str()), "prompt lacks snippet {s}");
    }
    drop(prompts);
    drop(state);

    // Re-running is a no-op, and direct calls return the existing pair.
    let again = transform_all(&f.store, &f.backends);
    assert_eq!((again.total_transformed(), again.already_done), (0, 4));
    assert_eq!(pairs_from_ranking(&f.store, &ranking).unwrap().id, f.store.read().pairs()[0].id);
    assert_eq!(f.store.read().pairs().len(), 4);
}

#[test]
fn revision_against_a_different_document_is_rejected() {
    let f = fixture();
    let (a, b) = (&f.candidates[0], &f.candidates[1]);
    let other = f.store.read().candidate(b).unwrap().sketch_ref.clone().unwrap();
    let revised = f.store.put_blob(b"{}").unwrap();
    let rec = AnnotationRecord::Revising(RevisionRecord {
        record_id: RecordId::new("rec-x"),
        candidate_id: a.clone(),
        original_sketch_ref: other,
        revised_sketch_ref: revised,
        annotator_id: "d1".into(),
        elapsed_secs: 1.0,
    });
    let outcome = rec.validate(&f.store.read());
    match outcome {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "original_sketch_ref"),
        other => panic!("unexpected {other:?}"),
    }
}

struct Down;

impl Llm for Down {
    fn complete(&self, _: &LlmRequest) -> uifeedback::Result<String> {
        Err(uifeedback::Error::backend("llm", "connection refused"))
    }
}

#[test]
fn failed_transform_is_reported_and_skipped() {
    let f = fixture();
    let rec = AnnotationRecord::Commenting(CommentSet {
        record_id: RecordId::new("rec-down"),
        candidate_id: f.candidates[0].clone(),
        comments: vec!["use a darker header".into()],
        annotator_id: "d1".into(),
        elapsed_secs: 1.0,
    });
    f.store.add_annotation(rec).unwrap();
    let candidates_before = f.store.read().candidates().count();
    let mut down = f.backends.clone();
    down.llm = Arc::new(Down);
    let report = transform_all(&f.store, &down);
    assert_eq!(report.total_transformed(), 0);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].record_id, RecordId::new("rec-down"));
    assert!(f.store.read().pairs().is_empty());
    assert_eq!(f.store.read().candidates().count(), candidates_before);
    // Once the backend is back the record transforms.
    assert_eq!(transform_all(&f.store, &f.backends).total_transformed(), 1);
}
