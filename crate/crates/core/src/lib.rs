//! Hierarchical conditional modality selection for multimodal sequence
//! classification: three stacked LSTMs over audio, appearance and motion
//! features, with learned per-step gates that decide which expensive
//! modalities to compute, plus a GFLOPs ledger and budgeted inference.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod cost_ledger;
pub mod data;
pub mod error;
pub mod gating;
pub mod layers;
pub mod model;
pub mod train_eval;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use cost_ledger::{reference_table, CostModel, ReferenceRow, BACKBONE_GFLOPS};
pub use data::{generate_synthetic, read_dataset, write_dataset, Dataset, FeatureSequence, SyntheticSpec};
pub use error::{Error, Result};
pub use gating::{GateMode, TemperatureSchedule};
pub use model::{Architecture, DecisionTrace, DimsPreset, Modality, ModalityOrder, Network};
