use std::collections::HashSet;
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Interface};
use crate::corpus::{State, UiCandidate};
use crate::error::{Error, Result};
use crate::hash::{ContentHash, seed_from_parts};
use crate::ids::{CandidateId, DescriptionId};

/// What an annotator sees for one candidate. Deliberately carries no
/// generator identity or provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCandidate {
    pub candidate_id: CandidateId,
    pub image: ContentHash,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch_document: Option<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub interface: Interface,
    pub description_id: DescriptionId,
    pub description: String,
    /// Ranking tasks carry two candidates (left, right); others carry one.
    pub candidates: Vec<TaskCandidate>,
}

type Served = (Interface, String, Vec<CandidateId>);

/// Serves annotation tasks uniformly from the retained candidate pool,
/// never serving an annotator the same unit twice on one interface.
#[derive(Debug, Default)]
pub struct TaskScheduler {
    served: Mutex<HashSet<Served>>,
}

fn unit_key(mut ids: Vec<CandidateId>) -> Vec<CandidateId> {
    ids.sort();
    ids
}

impl TaskScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    fn eligible(state: &State, interface: Interface) -> Vec<Vec<&UiCandidate>> {
        let mut units = Vec::new();
        for batch in state.sampled_batches() {
            let pool: Vec<&UiCandidate> = batch
                .retained_ids
                .iter()
                .filter_map(|id| state.candidate(id).ok())
                .filter(|c| c.screenshot_ref.is_some())
                .filter(|c| interface != Interface::Revising || c.sketch_ref.is_some())
                .collect();
            if interface == Interface::Ranking {
                for i in 0..pool.len() {
                    for j in i + 1..pool.len() {
                        units.push(vec![pool[i], pool[j]]);
                    }
                }
            } else {
                units.extend(pool.into_iter().map(|c| vec![c]));
            }
        }
        units
    }

    fn answered(state: &State, interface: Interface, annotator: &str) -> HashSet<Vec<CandidateId>> {
        state
            .annotations()
            .filter(|r: &&AnnotationRecord| r.interface() == interface && r.annotator_id() == annotator)
            .map(|r| unit_key(r.candidates().into_iter().cloned().collect()))
            .collect()
    }

    pub fn next_task<R: Rng + ?Sized>(&self, state: &State, interface: Interface, annotator: &str, rng: &mut R) -> Result<Task> {
        if annotator.trim().is_empty() {
            return Err(Error::validation("annotator_id", "must not be empty"));
        }
        let answered = Self::answered(state, interface, annotator);
        let mut served = self.served.lock().expect("scheduler lock poisoned");
        let open: Vec<Vec<&UiCandidate>> = Self::eligible(state, interface)
            .into_iter()
            .filter(|unit| {
                let key = unit_key(unit.iter().map(|c| c.id.clone()).collect());
                !answered.contains(&key) && !served.contains(&(interface, annotator.to_owned(), key))
            })
            .collect();
        if open.is_empty() {
            return Err(Error::Exhausted {
                annotator: annotator.to_owned(),
            });
        }
        let mut unit = open[rng.random_range(0..open.len())].clone();
        if unit.len() == 2 && rng.random_bool(0.5) {
            unit.swap(0, 1);
        }
        let key = unit_key(unit.iter().map(|c| c.id.clone()).collect());
        served.insert((interface, annotator.to_owned(), key.clone()));
        drop(served);

        let description_id = unit[0].description_id.clone();
        let description = state.description(&description_id)?.text.clone();
        let mut parts: Vec<&[u8]> = vec![interface.as_str().as_bytes(), annotator.as_bytes()];
        parts.extend(key.iter().map(|k| k.as_str().as_bytes()));
        let task_id = format!("task-{:016x}", seed_from_parts(&parts));
        Ok(Task {
            task_id,
            interface,
            description_id,
            description,
            candidates: unit
                .into_iter()
                .map(|c| TaskCandidate {
                    candidate_id: c.id.clone(),
                    image: c.screenshot_ref.clone().expect("eligible candidates are rendered"),
                    sketch_document: if interface == Interface::Revising { c.sketch_ref.clone() } else { None },
                })
                .collect(),
        })
    }
}
