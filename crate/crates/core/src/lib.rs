//! Business network inference with field-level provenance.
//!
//! Raw records from many origins are stored under composite keys, grouped
//! into equivalence classes, merged into surrogates that keep every member,
//! and materialized as a network of participants, hosts and message flows.
//! Every entity and every field traces back to the records it came from.
//! Users enrich the network with labels and groups and enhance it with
//! field changes, creations and deletions that are written back to the
//! sources.
//!
//! ```
//! use bns_core::{Engine, Mode, Settings};
//!
//! let mut engine = Engine::new(Settings::default());
//! engine
//!     .ingest(
//!         "originH7",
//!         [r#"{"kind":"sys","origin":"originH7","id":"h7","fields":{"description":"myH7"}}"#],
//!         Mode::Full,
//!     )
//!     .unwrap();
//! let published = engine.published();
//! let bn = published.resolve("myH7").unwrap();
//! assert_eq!(bn.to_string(), "participant:1");
//! let lineage = published.lineage(&bn).unwrap();
//! assert_eq!(lineage.sources.iter().next().unwrap().to_string(), "sys:h7@originH7");
//! ```

pub mod adapter;
pub mod config;
pub mod curation;
pub mod engine;
pub mod equivalence;
pub mod error;
pub mod hash;
pub mod key;
pub mod network;
pub mod provenance;
pub mod query;
pub mod raw_store;
pub mod snapshot;
pub mod surrogate;

pub use adapter::{AdapterRegistry, FileSources, SourceAdapter};
pub use config::EngineConfig;
pub use curation::{Anchor, Enhancement, EnhancementStatus, EnrichmentArtifact, WriteBackPlan};
pub use engine::{CommitSummary, Engine, LoadOutcome, Published, Settings};
pub use equivalence::{ClassId, MatchRule};
pub use error::{Error, Result};
pub use key::{CompositeKey, RecordKind};
pub use network::{BnId, EntityKind, NetworkEntity, NetworkExport};
pub use provenance::{LineageRecord, SourceRef, Transformation};
pub use query::{SearchParams, ShowPaths};
pub use raw_store::{IngestReport, Mode, RawStore, RecordInput};
pub use surrogate::{Contributor, SourcePriorityConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/records.md")]
    mod records {}
    #[doc = include_str!("../../../book/src/equivalence.md")]
    mod equivalence {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    mod surrogates {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/curation.md")]
    mod curation {}
    #[doc = include_str!("../../../book/src/querying.md")]
    mod querying {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
}
