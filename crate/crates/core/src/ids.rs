//! Opaque identifiers. Minted from a creation counter and a content hash so
//! that replaying the same pipeline yields the same ids.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::ContentHash;

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            #[allow(dead_code)] // record ids are client-supplied
            pub(crate) fn mint(counter: u64, content: &ContentHash) -> Self {
                $name(format!("{}-{:06}-{}", $prefix, counter, content.short()))
            }

            pub fn new(raw: impl Into<String>) -> Self {
                $name(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

opaque_id!(DescriptionId, "desc");
opaque_id!(CandidateId, "cand");
opaque_id!(BatchId, "batch");
opaque_id!(PairId, "pair");
opaque_id!(
    /// Client-supplied id of an annotation record; transforms are keyed by it.
    RecordId,
    "rec"
);
