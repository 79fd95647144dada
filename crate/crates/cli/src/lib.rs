//! IO, generator backends, loop orchestration, and CLI plumbing around
//! `vigor-core`.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod generator;
pub mod orchestrator;
pub mod report;

pub use config::AppConfig;
pub use generator::{ConfounderGenerator, GeneratorError, GeneratorRequest};
pub use orchestrator::{run_loop, GenerationRecord, RoundSignal, RunLog};
