//! Memristive crossbar inference simulator wrapped in an EEG seizure-prediction
//! pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`device`] samples individual memristive devices (variability, discrete
//!   conductance states, current-mirror offset).
//! * [`crossbar`] maps weight matrices onto tiled crossbars and computes
//!   vector-matrix products through programmed conductances.
//! * [`network`] is the spectrogram CNN with an ideal and a crossbar backend,
//!   plus its backward pass and weight container.
//! * [`preprocess`] parses EDF recordings and seizure summaries, builds STFT
//!   spectrogram windows and labels/balances them.
//! * [`training`] holds the loss, the DiffGrad optimizer, stratified k-fold
//!   planning and the training loop.
//! * [`costmodel`] estimates power, area, latency and energy of a mapped network.
//! * [`eval`] computes classification metrics and runs nonideality sweeps.
//! * [`synth`] generates the bundled toy datasets and EDF fixtures.

pub mod costmodel;
pub mod crossbar;
pub mod device;
pub mod eval;
pub mod io;
pub mod network;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod training;

pub use costmodel::{CostReport, HardwareParams, ReadoutMode};
pub use crossbar::{MappedLayer, TileConfig, WeightScheme};
pub use device::{DeviceInstance, DeviceParameters, StateCount};
pub use eval::{MetricsReport, SweepGrid};
pub use network::{Backend, LayerWeights, MappedNetwork, NetworkSpec};
pub use preprocess::{ClinicalWindows, EegRecord, Label, LabeledWindow, SeizureAnnotation};
pub use training::{FoldPlan, OptimizerState, TrainConfig};
