//! Developmental-age regression from cardiotocography (CTG) traces.
//!
//! A fetal heart-rate (FHR) time series is mapped to a predicted
//! developmental age in days by a 1D residual convolutional network with
//! squeeze-and-excitation blocks, trained with a distribution-aligned
//! regression loss that counteracts label imbalance. The difference
//! between predicted and actual gestational age (the "gap") is then used
//! as a clinical marker: records are stratified into gap bands and
//! adverse-outcome incidence is compared across bands.
//!
//! The crate is self-contained: it ships its own reverse-mode automatic
//! differentiation engine ([`tensor`]), a synthetic cohort generator with
//! planted effects for end-to-end validation ([`synth`]), the model and
//! loss ([`net1d`], [`loss`]), a deterministic trainer ([`train`]),
//! input-gradient attention maps ([`interpret`]), and the gap-band
//! statistics ([`stats`]). See the `examples/` directory for one runnable
//! walkthrough per capability, and the `ctgage` binary for the pipeline
//! subcommands (`simulate`, `train`, `predict`, `evaluate`, `analyze`,
//! `attend`).

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod interpret;
pub mod loss;
pub mod net1d;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use data::{Cohort, CtgRecord, Split};
pub use error::{Error, Result};
pub use loss::{LossWeights, PriorVector};
pub use net1d::{Model, Net1DConfig};
pub use stats::{GapBand, GapRecord};
pub use synth::SynthSpec;
pub use train::{Metrics, TrainConfig};
