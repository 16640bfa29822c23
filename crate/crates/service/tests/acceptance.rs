//! Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Runs without the libtest harness so the lines always print.

mod common;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uifeedback::arena::{
    agreement, bootstrap_ratings, elo_sequence, ratings_csv, AgreementRecord, Battle, RatingConfig, Winner,
};
use uifeedback::corpus::{GenerationBatch, Provenance, Store};
use uifeedback::feedback::{read_records, study_stats, Interface};
use uifeedback::gateway::{prompts, Backends};
use uifeedback::htmlkit::{match_annotation, ElementBox, ElementPath, GeometryMap, Rect, Region, Viewport};
use uifeedback::ids::{BatchId, CandidateId, DescriptionId};
use uifeedback::reward::{
    batch_loss_and_grad, combine, score, topk_filter, train, LossForm, PromptEmbeddingSet, RewardHead, SyntheticGroup,
    SyntheticPool, TrainerConfig, TrainingPair, DEFAULT_TOP_K,
};
use uifeedback_service::jobs::FilterParams;
use uifeedback_service::JobKind;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("reward trainer learns separable preferences", trainer),
        ("prompt embeddings combine elementwise", combine_triples),
        ("top-k filter matches a full sort", topk),
        ("IoU grounding matches brute force", grounding),
        ("Elo matches the textbook update", elo),
        ("bootstrap separates a dominant model", bootstrap),
        ("agreement reproduces the rater study", agreement_rates),
        ("prompts match frozen fixtures", prompt_fidelity),
        ("pipeline runs end to end on stubs", pipeline),
        ("study statistics reproduce the reported rates", study),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn axis(d: usize, i: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = s;
    v
}

fn plus(a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| x + y).collect()
}

fn trainer() -> Outcome {
    let d = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let sigma = 0.5 / (d as f64).sqrt();
    let (u, neg_u, t) = (axis(d, 0, 1.0), axis(d, 0, -1.0), axis(d, 1, 1.0));
    let pairs = |n: usize, rng: &mut ChaCha8Rng| -> Vec<TrainingPair> {
        (0..n)
            .map(|_| TrainingPair {
                chosen: plus(gaussian(rng, d, sigma), &u),
                rejected: plus(gaussian(rng, d, sigma), &neg_u),
                text: plus(gaussian(rng, d, 0.1 * sigma), &t),
            })
            .collect()
    };
    let train_set = pairs(500, &mut rng);
    let held_out = pairs(200, &mut rng);
    let groups: Vec<SyntheticGroup> = (0..25)
        .map(|_| SyntheticGroup {
            text: t.clone(),
            candidates: (0..8)
                .map(|_| {
                    let a: f64 = rng.random_range(-1.0..1.0);
                    plus(gaussian(&mut rng, d, sigma), &axis(d, 1, a))
                })
                .collect(),
        })
        .collect();
    let head = RewardHead::identity(d, 100.0);
    let pool = SyntheticPool::new(groups, &head).map_err(|e| e.to_string())?;
    let cfg = TrainerConfig::default();

    let start = Instant::now();
    let out = train(&head, &train_set, &pool, &cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let correct = held_out
        .iter()
        .filter(|p| score(&p.chosen, &p.text, &out.head).unwrap() > score(&p.rejected, &p.text, &out.head).unwrap())
        .count();
    let acc = correct as f64 / held_out.len() as f64;
    ensure!(out.trace.len() == 100, "ran {} steps", out.trace.len());
    ensure!(acc >= 0.95, "held-out accuracy {acc}");
    ensure!(secs < 10.0, "training took {secs:.2}s");

    // Central differences against the analytic gradient on a small head.
    let d = 8;
    let mut head = RewardHead::identity(d, 100.0);
    for w in head.weights.iter_mut() {
        *w += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let text = gaussian(&mut rng, d, 1.0);
    let batch = [TrainingPair {
        chosen: gaussian(&mut rng, d, 1.0),
        rejected: plus(gaussian(&mut rng, d, 0.1), &text),
        text,
    }];
    let loss = |h: &RewardHead| batch_loss_and_grad(h, &batch, cfg.margin, LossForm::Corrected).unwrap();
    let (_, grad) = loss(&head);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..d * d {
        let (mut hi, mut lo) = (head.clone(), head.clone());
        hi.weights[i] += step;
        lo.weights[i] -= step;
        let numeric = (loss(&hi).0 - loss(&lo).0) / (2.0 * step);
        worst = worst.max((numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-3));
    }
    ensure!(worst < 1e-5, "gradient relative error {worst:e}");
    Ok(format!("held-out accuracy {acc:.3} in {secs:.2}s; gradient relative error {worst:.1e}"))
}

fn combine_triples() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..=64);
        let set = PromptEmbeddingSet {
            v_pos: gaussian(&mut rng, d, 3.0),
            v_neg: gaussian(&mut rng, d, 3.0),
            v_empty: gaussian(&mut rng, d, 3.0),
        };
        let got = combine(&set).map_err(|e| e.to_string())?;
        ensure!(got.len() == d, "length {} for dimension {d}", got.len());
        for i in 0..d {
            let want = set.v_pos[i] - 0.5 * (0.9 * set.v_neg[i] + 0.1 * set.v_empty[i]);
            worst = worst.max((got[i] - want).abs());
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!("1000 triples, max deviation {worst:.1e}"))
}

fn topk() -> Outcome {
    ensure!(DEFAULT_TOP_K == 8, "default k is {DEFAULT_TOP_K}");
    ensure!(FilterParams::default().k == 8, "filter job default k is {}", FilterParams::default().k);
    let ids: Vec<CandidateId> = (0..32).map(|i| CandidateId::new(format!("cand-{i:06}-000000000000"))).collect();
    let batch = GenerationBatch {
        id: BatchId::new("batch-000001-000000000000"),
        description_id: DescriptionId::new("desc-000001-000000000000"),
        candidate_ids: ids.clone(),
        sampler_seed: 0,
        retained_ids: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tied = 0;
    for n in 0..10_000 {
        // Every other batch draws from a handful of values to force ties.
        let scores: Vec<f64> = if n % 2 == 0 {
            (0..32).map(|_| rng.random_range(0..5) as f64).collect()
        } else {
            (0..32).map(|_| rng.random_range(-100.0..100.0)).collect()
        };
        let k = if n % 3 == 0 { DEFAULT_TOP_K } else { rng.random_range(1..=32) };
        let mut order: Vec<usize> = (0..32).collect();
        // Stable: equal scores keep candidate order.
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let want: Vec<CandidateId> = order[..k].iter().map(|&i| ids[i].clone()).collect();
        let got = topk_filter(&batch, &scores, k).map_err(|e| e.to_string())?;
        ensure!(got == want, "batch {n}, k {k}: got {got:?}");
        if k < 32 && scores[order[k - 1]] == scores[order[k]] {
            tied += 1;
        }
    }
    Ok(format!("10000 batches of 32, {tied} with a tie at the cut; default k = 8"))
}

/// Random element tree with free-floating integer boxes.
struct Layout {
    /// Child-index chain from the root, for document order.
    chains: Vec<Vec<usize>>,
    paths: Vec<ElementPath>,
    rects: Vec<[i64; 4]>,
    geometry: GeometryMap,
}

const TAGS: [&str; 6] = ["div", "section", "p", "span", "button", "img"];

fn layout(rng: &mut ChaCha8Rng) -> Layout {
    let n = rng.random_range(1..=50);
    let mut chains = vec![vec![0]];
    let mut paths = vec![ElementPath::default().child("html", 0)];
    let mut children = vec![0usize];
    let mut rects = vec![[rng.random_range(0..20), rng.random_range(0..20), rng.random_range(40..100), rng.random_range(80..200)]];
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let idx = children[parent];
        children[parent] += 1;
        let mut chain = chains[parent].clone();
        chain.push(idx);
        chains.push(chain);
        paths.push(paths[parent].child(TAGS[rng.random_range(0..TAGS.len())], idx));
        children.push(0);
        // Some elements duplicate an earlier box so ties are common.
        let rect = if rng.random_bool(0.2) {
            rects[rng.random_range(0..i)]
        } else {
            [rng.random_range(0..100), rng.random_range(0..200), rng.random_range(1..50), rng.random_range(1..50)]
        };
        rects.push(rect);
    }
    let mut order: Vec<usize> = (0..n).collect();
    // The implementation must not lean on box order.
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let boxes = order
        .iter()
        .map(|&i: &usize| ElementBox {
            element_path: paths[i].clone(),
            bbox: Rect::new(rects[i][0] as f64, rects[i][1] as f64, rects[i][2] as f64, rects[i][3] as f64),
        })
        .collect();
    let geometry = GeometryMap::new(Viewport { width: 120, height: 240 }, boxes).unwrap();
    Layout { chains, paths, rects, geometry }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Route {
    Overlap,
    Containment,
    Root,
}

/// Exact integer grounding: returns the element index and the route taken.
fn oracle(l: &Layout, region: [i64; 4], is_point: bool) -> (usize, Route) {
    let area = |r: [i64; 4]| r[2] * r[3];
    let overlap = |a: [i64; 4], b: [i64; 4]| {
        let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
        let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
        if ix > 0 && iy > 0 {
            ix * iy
        } else {
            0
        }
    };
    let earlier = |i: usize, j: usize| l.chains[i].cmp(&l.chains[j]);
    if !is_point {
        let mut best: Option<(usize, i64, i64)> = None;
        for (i, &r) in l.rects.iter().enumerate() {
            let inter = overlap(region, r);
            if inter == 0 {
                continue;
            }
            let union = area(region) + area(r) - inter;
            let better = match best {
                None => true,
                Some((b, bi, bu)) => match (inter * bu).cmp(&(bi * union)) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => area(r).cmp(&area(l.rects[b])).then_with(|| earlier(i, b)).is_lt(),
                },
            };
            if better {
                best = Some((i, inter, union));
            }
        }
        if let Some((b, _, _)) = best {
            return (b, Route::Overlap);
        }
    }
    // Doubled coordinates keep box centers integral.
    let (px, py) = if is_point {
        (2 * region[0], 2 * region[1])
    } else {
        (2 * region[0] + region[2], 2 * region[1] + region[3])
    };
    let inside = |r: [i64; 4]| px >= 2 * r[0] && px <= 2 * (r[0] + r[2]) && py >= 2 * r[1] && py <= 2 * (r[1] + r[3]);
    let mut container: Option<usize> = None;
    for (i, &r) in l.rects.iter().enumerate() {
        if inside(r) {
            container = match container {
                Some(c) if area(l.rects[c]).cmp(&area(r)).then_with(|| earlier(c, i)).is_le() => Some(c),
                _ => Some(i),
            };
        }
    }
    match container {
        Some(c) => (c, Route::Containment),
        None => (0, Route::Root),
    }
}

fn grounding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut routes: BTreeMap<Route, usize> = BTreeMap::new();
    let mut sizes = 0;
    for g in 0..1000 {
        let l = layout(&mut rng);
        sizes = sizes.max(l.rects.len());
        let probes = [
            // Ordinary box.
            ([rng.random_range(-10..120), rng.random_range(-10..240), rng.random_range(1..60), rng.random_range(1..60)], false),
            // Point, sometimes outside everything.
            ([rng.random_range(-20..140), rng.random_range(-20..260), 0, 0], true),
            // Degenerate box: zero IoU with everything, grounded by its center.
            ([rng.random_range(0..120), rng.random_range(0..240), 0, rng.random_range(0..10)], false),
            // Box clear of every element.
            ([1000 + rng.random_range(0..50), 1000, rng.random_range(1..20), rng.random_range(1..20)], false),
        ];
        for (r, is_point) in probes {
            let region = if is_point {
                Region::Point { x: r[0] as f64, y: r[1] as f64 }
            } else {
                Region::Box { bbox: Rect::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64) }
            };
            let (want, route) = oracle(&l, r, is_point);
            *routes.entry(route).or_default() += 1;
            let got = match_annotation(&region, &l.geometry).map_err(|e| e.to_string())?;
            let expected = &l.paths[want];
            ensure!(&got.element_path == expected, "geometry {g}, region {region:?}: got {}, want {expected} via {route:?}", got.element_path);
        }
    }
    for route in [Route::Overlap, Route::Containment, Route::Root] {
        ensure!(routes.get(&route).copied().unwrap_or(0) > 0, "route {route:?} never exercised");
    }
    ensure!(sizes <= 50, "layout with {sizes} elements");
    Ok(format!("1000 geometries; routes {routes:?}"))
}

fn battle(a: &str, b: &str, winner: Winner) -> Battle {
    Battle {
        model_a: a.into(),
        model_b: b.into(),
        description_id: DescriptionId::new("desc-000001-000000000000"),
        winner,
        judge_id: "judge".into(),
        timestamp: 0,
    }
}

fn elo() -> Outcome {
    let cfg = RatingConfig::default();
    ensure!((cfg.initial, cfg.scale, cfg.base, cfg.k_factor) == (1000.0, 400.0, 10.0, 4.0), "defaults {cfg:?}");
    let models = ["m1", "m2", "m3", "m4", "m5"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for log_no in 0..100 {
        let log: Vec<Battle> = (0..50)
            .map(|_| {
                let i = rng.random_range(0..5);
                let j = (i + rng.random_range(1..5)) % 5;
                battle(models[i], models[j], if rng.random_bool(0.5) { Winner::A } else { Winner::B })
            })
            .collect();
        // Textbook form, one battle at a time.
        let mut r: BTreeMap<String, f64> = BTreeMap::new();
        for b in &log {
            r.entry(b.model_a.clone()).or_insert(1000.0);
            r.entry(b.model_b.clone()).or_insert(1000.0);
        }
        for (n, b) in log.iter().enumerate() {
            let (ra, rb) = (r[&b.model_a], r[&b.model_b]);
            let ea = 1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0));
            let eb = 1.0 / (1.0 + 10f64.powf((ra - rb) / 400.0));
            let (sa, sb) = if b.winner == Winner::A { (1.0, 0.0) } else { (0.0, 1.0) };
            let (na, nb) = (ra + 4.0 * (sa - ea), rb + 4.0 * (sb - eb));
            ensure!(((na + nb) - (ra + rb)).abs() < 1e-9, "log {log_no} battle {n} changes the total");
            r.insert(b.model_a.clone(), na);
            r.insert(b.model_b.clone(), nb);
            let prefix = elo_sequence(&log[..=n], &cfg);
            ensure!(prefix[&b.model_a] == na && prefix[&b.model_b] == nb, "log {log_no} battle {n} diverges");
        }
        let got = elo_sequence(&log, &cfg);
        ensure!(got.len() == r.len() && got.iter().all(|(m, v)| r[m] == *v), "log {log_no} final ratings differ");
    }
    let first = elo_sequence(&[battle("x", "y", Winner::A)], &cfg);
    ensure!(first["x"] == 1002.0 && first["y"] == 998.0, "first battle gives {first:?}");
    Ok("100 logs of 50 battles match exactly; totals conserved; 1000/1000 -> 1002/998".into())
}

fn bootstrap() -> Outcome {
    let cfg = RatingConfig::default();
    ensure!(cfg.rounds == 1000, "default rounds {}", cfg.rounds);
    let mut log = Vec::new();
    for opponent in ["B", "C"] {
        for i in 0..100 {
            // Alternate sides so position cannot matter.
            log.push(if i % 2 == 0 { battle("A", opponent, Winner::A) } else { battle(opponent, "A", Winner::B) });
        }
    }
    let first = bootstrap_ratings(&log, &cfg).map_err(|e| e.to_string())?;
    let second = bootstrap_ratings(&log, &cfg).map_err(|e| e.to_string())?;
    let a = first.iter().find(|r| r.model == "A").ok_or("A missing")?;
    for other in first.iter().filter(|r| r.model != "A") {
        ensure!(a.ci_low > other.ci_high, "A [{}, {}] overlaps {} [{}, {}]", a.ci_low, a.ci_high, other.model, other.ci_low, other.ci_high);
    }
    let (csv1, csv2) = (ratings_csv(&first).map_err(|e| e.to_string())?, ratings_csv(&second).map_err(|e| e.to_string())?);
    ensure!(csv1 == csv2, "repeated runs differ");
    Ok(format!("A 95% interval [{:.1}, {:.1}] above both opponents; repeat byte-identical", a.ci_low, a.ci_high))
}

fn core_fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn agreement_rates() -> Outcome {
    let text = std::fs::read_to_string(core_fixture("agreement_records.jsonl")).map_err(|e| e.to_string())?;
    let records: Vec<AgreementRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let report = agreement(&records);
    let overall = report.overall.ok_or("no overall figure")?;
    ensure!(overall.percent == 61.7, "overall {}", overall.percent);
    let mut parts = vec![format!("overall {}", overall.percent)];
    for (stratum, want) in [
        (Provenance::Revising, 76.1),
        (Provenance::Sketching, 63.6),
        (Provenance::Commenting, 57.3),
        (Provenance::Ranking, 49.2),
    ] {
        let got = report.strata.get(&stratum).ok_or(format!("{stratum:?} missing"))?.percent;
        ensure!(got == want, "{stratum:?}: {got}");
        parts.push(format!("{stratum:?} {got}"));
    }
    Ok(parts.join(", "))
}

#[derive(serde::Deserialize)]
struct PromptInputs {
    descriptions: Vec<String>,
    htmls: Vec<String>,
    comments: Vec<Vec<String>>,
    regions: Vec<Vec<(String, String)>>,
}

fn prompt_fidelity() -> Outcome {
    let dir = core_fixture("prompts");
    let read = |name: String| std::fs::read_to_string(dir.join(&name)).map_err(|e| format!("{name}: {e}"));
    let inputs: PromptInputs = serde_json::from_str(&read("inputs.json".into())?).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for i in 0..3 {
        let d = &inputs.descriptions[i];
        for (name, got) in [
            ("generation", prompts::generation_prompt(d)),
            ("positive", prompts::positive_prompt(d)),
            ("negative", prompts::negative_prompt(d)),
            ("empty", prompts::empty_prompt()),
            ("comment_edit", prompts::comment_edit_prompt(&inputs.htmls[i], &inputs.comments[i])),
            ("region_edit", prompts::region_edit_prompt(&inputs.htmls[i], &inputs.regions[i])),
        ] {
            ensure!(got == read(format!("{name}_{i}.txt"))?, "{name} input {i} differs");
            compared += 1;
        }
    }
    Ok(format!("{compared} prompts byte-equal"))
}

fn pipeline() -> Outcome {
    let start = Instant::now();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
        let backends = Backends::stub(common::SEED);
        let run = common::full_pipeline(&store, &backends, 2, 32, 8);

        let filter = &run.reports[&JobKind::Filter];
        ensure!(filter.counts["batches"] == 2, "filter saw {} batches", filter.counts["batches"]);
        let state = store.read();
        ensure!(state.sampled_batches().count() == 2, "expected 2 sampled batches");
        ensure!(state.sampled_batches().all(|b| b.retained_ids.len() == 8), "a sampled batch did not retain 8");
        ensure!(state.candidates().filter(|c| c.parent.is_none()).count() == 64, "expected 64 sampled candidates");

        let pairs = state.pairs();
        ensure!(pairs.len() == 4, "{} preference pairs; transform {:?} {}", pairs.len(), run.reports[&JobKind::TransformFeedback].counts, run.reports[&JobKind::TransformFeedback].details);
        for (provenance, record) in &run.records {
            let matching: Vec<_> = pairs.iter().filter(|p| p.provenance == *provenance).collect();
            ensure!(matching.len() == 1, "{} pairs for {provenance:?}", matching.len());
            ensure!(matching[0].source_record.as_ref() == Some(record), "{provenance:?} pair has the wrong source");
        }
        let train = &run.reports[&JobKind::TrainReward];
        ensure!(train.counts["steps"] == 100 && train.counts["designer_pairs"] == 4, "train counts {:?}", train.counts);

        let records = run.orpo_records();
        ensure!(records.len() == 2, "{} ORPO records", records.len());
        ensure!(common::schema_valid(&run.orpo), "ORPO export fails the schema");
        ensure!(records.iter().all(|r| r.chosen != r.rejected), "a record pairs a candidate with itself");
        drop(state);
        let manifest = std::fs::read(dir.path().join("manifest.jsonl")).map_err(|e| e.to_string())?;
        runs.push((manifest, run.orpo));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(runs[0] == runs[1], "two runs with one seed differ");
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("4 pairs (one per interface), 2 ORPO records, identical across runs, {secs:.1}s for both"))
}

fn study() -> Outcome {
    let file = std::fs::File::open(core_fixture("study_records.jsonl")).map_err(|e| e.to_string())?;
    let records = read_records(BufReader::new(file)).map_err(|e| e.to_string())?;
    let stats = study_stats(&records);
    let counts = [Interface::Ranking, Interface::Sketching, Interface::Commenting, Interface::Revising].map(|i| stats.get(i).count);
    ensure!(counts == [1063, 181, 152, 64] && stats.total == 1460, "counts {counts:?}, total {}", stats.total);
    let r1 = |x: Option<f64>| x.map(|v| (v * 10.0).round() / 10.0);
    let ranking = r1(stats.get(Interface::Ranking).per_minute);
    let revising = stats.get(Interface::Revising).mean_minutes_each.map(|m| (m * 100.0).round() / 100.0);
    let commenting = stats.get(Interface::Commenting);
    let sketching = stats.get(Interface::Sketching);
    let got = (
        ranking,
        revising,
        r1(commenting.mean_items_per_ui),
        r1(commenting.mean_text_chars),
        r1(sketching.mean_items_per_ui),
        r1(sketching.mean_text_chars),
    );
    ensure!(
        got == (Some(4.8), Some(3.45), Some(1.9), Some(87.1), Some(2.7), Some(42.2)),
        "rates {got:?}"
    );
    Ok("1063/181/152/64 of 1460; 4.8 rankings/min, 3.45 min/revision, 1.9 and 2.7 items, 87.1 and 42.2 chars".into())
}
