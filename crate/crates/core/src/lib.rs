//! A laboratory for software transactional memory.
//!
//! Four STM algorithms run over an instrumented base-object memory, either
//! step by step under a deterministic scheduler or on real threads. Every
//! run yields an [`memory::ExecutionTrace`]; the [`analysis`] checkers decide
//! opacity, progress, memory-ordering pattern counts and structural
//! properties on those traces, and [`harness`] ties workloads, schedules and
//! checkers together.

pub mod analysis;
pub mod harness;
pub mod memory;
pub mod model;
pub mod stm;
pub mod trylock;

pub use analysis::{Verdict, Witness};
pub use memory::{BaseObjectId, BaseWord, ExecutionTrace, Fault, Schedule};
pub use model::{History, ProcessId, TObjectId, TxId, Value};
pub use stm::{StmVariant, TxScript};
