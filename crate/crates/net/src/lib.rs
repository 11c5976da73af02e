//! Distributed roles over the framed wire protocol: a replay hub that owns
//! the shared buffer, samplers that stream episodes into it, and trainers
//! that pull batches and publish actor weights.
//!
//! Every request gets exactly one reply:
//!
//! | request           | reply                                             |
//! |-------------------|---------------------------------------------------|
//! | `HELLO`           | `HELLO` from the hub                              |
//! | `PUSH_EPISODE`    | `STATS`, or `ERROR` (empty / malformed episode)   |
//! | `WEIGHTS_REQUEST` | `WEIGHTS` if newer ones exist, else `ERROR`       |
//! | `WEIGHTS`         | `STATS` (publisher only, version must increase)   |
//! | `SAMPLE_REQUEST`  | `SAMPLE_BATCH`, or `ERROR` not-ready / bad profile |
//! | `STATS_REQUEST`   | `STATS`                                           |
//!
//! A frame that fails to decode gets a protocol `ERROR` and the connection
//! is closed.

mod conn;
mod error;
pub mod hub;
pub mod sampler;
pub mod trainer;

pub use conn::{Backoff, Connection};
pub use error::{NetError, Result};
pub use hub::{HubConfig, HubHandle, HubState};
pub use sampler::{run_episode, run_sampler, run_sampler_with, EpisodeInfo, SamplerConfig, SamplerReport};
pub use trainer::{BatchSource, LocalSource, RemoteSource, ScriptedSource, Trainer, TrainerConfig};
