//! Progressive four-phase training, event logging and checkpoints.

mod checkpoint;
mod config;
mod data;
mod log;
mod run;

pub use checkpoint::{synthesize, Checkpoint, CheckpointHeader, NetState};
pub use config::{DataSettings, DiscriminatorSettings, GeneratorSettings, PhaseEpochs, TrainConfig};
pub use data::{Sample, TrainSet};
pub use log::{Event, EventKind, EventLog, Module, StepLosses};
pub use run::Trainer;
