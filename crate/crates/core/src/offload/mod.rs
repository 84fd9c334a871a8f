//! Tiered parameter storage and the pipelined training schedule.
//!
//! Geometric rows and their Adam states stay on the device for culling and
//! projection. Appearance rows, their states and the defer counters live on
//! the host, which forwards the rows each view needs and applies updates
//! lazily. Device memory is an accounted arena rather than a real
//! accelerator; the schedule and byte counts are the same.

mod engine;
pub mod host;
mod memory;
mod store;
mod timeline;

pub use engine::{Engine, EngineConfig, IterationResult, Schedule, View};
pub use host::SlotEvent;
pub use memory::{Breakdown, MemoryReport};
pub use store::{plan_chunks, setup_tiers, validate_chunk_bytes, TieredStore, DEFAULT_CHUNK_BYTES, MIN_CHUNK_BYTES};
pub use timeline::{write_events_csv, Event, Stage, Timeline, Worker};
