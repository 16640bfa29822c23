use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{PreferenceDataset, PreferencePair, Provenance, State};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ids::{DescriptionId, PairId, RecordId};

/// One line of an exported preference dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: PairId,
    pub description_id: DescriptionId,
    pub description: String,
    pub chosen: ContentHash,
    pub rejected: ContentHash,
    pub provenance: Provenance,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_record: Option<RecordId>,
}

/// Writes one JSON record per pair. Every reference must resolve in `state`.
pub fn export_preferences(dataset: &PreferenceDataset, state: &State, out: &mut impl Write) -> Result<usize> {
    // Check everything first so a failed export writes nothing.
    let mut records = Vec::with_capacity(dataset.len());
    for pair in dataset.pairs() {
        pair.validate()?;
        let description = state.description(&pair.description_id).map_err(|_| Error::Integrity {
            record: pair.id.to_string(),
            message: format!("description {} does not exist", pair.description_id),
        })?;
        for (field, r) in [("chosen", &pair.chosen_ref), ("rejected", &pair.rejected_ref)] {
            if !state.image_resolves(r, &pair.description_id) {
                return Err(Error::Integrity {
                    record: pair.id.to_string(),
                    message: format!("{field} ref {r} is dangling"),
                });
            }
        }
        records.push(PreferenceRecord {
            pair_id: pair.id.clone(),
            description_id: pair.description_id.clone(),
            description: description.text.clone(),
            chosen: pair.chosen_ref.clone(),
            rejected: pair.rejected_ref.clone(),
            provenance: pair.provenance,
            annotator_id: pair.annotator_id.clone(),
            source_record: pair.source_record.clone(),
        });
    }
    for record in &records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<export>", e))?;
    }
    Ok(records.len())
}

pub fn import_preferences(input: impl BufRead) -> Result<PreferenceDataset> {
    let mut dataset = PreferenceDataset::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<import>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PreferenceRecord = serde_json::from_str(&line).map_err(|e| Error::Integrity {
            record: format!("line {}", n + 1),
            message: e.to_string(),
        })?;
        let pair = PreferencePair {
            id: r.pair_id,
            description_id: r.description_id,
            chosen_ref: r.chosen,
            rejected_ref: r.rejected,
            provenance: r.provenance,
            annotator_id: r.annotator_id,
            source_record: r.source_record,
        };
        pair.validate()?;
        dataset.push(pair);
    }
    Ok(dataset)
}
