//! Configuration, persistence and diagnostics.

pub mod config;
pub mod extended_float;
pub mod snapshot;
pub mod summary;

pub use config::{load_config, Mode, RunConfig};
pub use snapshot::{
    load_state, read_particle_table, write_cycle_snapshot, write_manifest, write_particle_table,
    Manifest,
};
pub use summary::{compare_sample_sets, summarize, MarginalComparison, Summary};
