//! Checkers and detectors over histories and traces.

use serde::{Deserialize, Serialize};

pub mod opacity;
pub mod patterns;
pub mod progress;
pub mod structure;
pub mod valence;

pub use opacity::{
    check_opacity, check_opacity_bounded, check_opacity_with_versions,
    check_strict_serializability, validate_serialization, CheckError,
};
pub use patterns::{check_budgets, detect_patterns, Counts, PatternReport};
pub use progress::{check_progressiveness, check_strong_progressiveness};
pub use structure::{
    check_dap, check_invisible_reads, check_memory_consistency, check_mutual_exclusion,
    check_strict_partitioning, PartitionError,
};
pub use valence::{classify_valence, find_protecting_prefix, Probe, ProtectReport, Valence};

use crate::memory::BaseObjectId;
use crate::model::{TObjectId, TxId};

/// Counterexample or certificate attached to a verdict.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Witness {
    None,
    /// A serialization `T0, ...`; `committed` lists the transactions with a
    /// pending tryC that the chosen completion commits.
    Serialization {
        order: Vec<TxId>,
        committed: Vec<TxId>,
    },
    Events {
        indices: Vec<usize>,
    },
    Transactions {
        txs: Vec<TxId>,
    },
    BaseObject {
        object: BaseObjectId,
    },
    TObject {
        object: TObjectId,
    },
}

impl Witness {
    pub fn events(indices: Vec<usize>) -> Self {
        Witness::Events { indices }
    }

    pub fn txs(txs: impl IntoIterator<Item = TxId>) -> Self {
        Witness::Transactions {
            txs: txs.into_iter().collect(),
        }
    }
}

/// Outcome of a checker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub witness: Witness,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn pass(witness: Witness) -> Self {
        Verdict {
            pass: true,
            witness,
            note: None,
        }
    }

    pub fn fail(witness: Witness) -> Self {
        Verdict {
            pass: false,
            witness,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}
