//! Log parsing and first-occurrence deduplication.

pub mod fixtures;
mod record;
mod registry;
mod stage;
mod store;
pub mod timestamp;

pub use record::{
    parse_record, parse_record_with, read_log, IngestStats, InteractionRecord, LogFormat, ParseError, ParseErrorKind,
    ParseOptions, StudyWindow, CSV_HEADER,
};
pub use registry::{AdvertRegistry, RegistryError};
pub use stage::{Genre, Stage, UnknownGenre, UnknownStage};
pub use store::{
    dedup_first, AppSet, EventKey, FirstOccurrenceStore, FunnelReport, FunnelViolation, StoreError, StoredEvent,
};
