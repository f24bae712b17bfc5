//! Simulator and experiment harness for autoencoder-based semantic
//! communications over an AWGN channel, with backdoor (Trojan) poisoning
//! attacks on the semantic task classifier.
//!
//! The pipeline is `encoder -> power normalization -> AWGN -> decoder ->
//! classifier`. The crate covers training (interactive autoencoder/
//! classifier rounds), trigger poisoning, the four attack/accuracy
//! metrics, and reproducible parameter sweeps.

pub mod backdoor;
pub mod channel;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;

pub use backdoor::{
    apply_trigger, build_poisoned_testset, default_trigger, derive_signal_trigger, poison_dataset,
    PoisonConfig, PoisonedDataset, Provenance, TriggerDomain, TriggerSpec,
};
pub use channel::{
    apply_awgn, normalize_power, normalize_power_backward, snr_to_noise_std, ChannelConfig,
    NoiseSource, PowerNormalization,
};
pub use data::{load_idx, subsample, synthetic_fixture, Dataset, SplitTag};
pub use error::{Error, Result};
pub use experiments::{
    load_source_data, run_condition, run_label_grid, run_sweep, Condition, ConditionOutcome,
    ExperimentConfig, LabelGridResult, LoadedData, SweepAxis, SweepResult,
};
pub use metrics::{ConditionDesc, Confusion, Counted, MetricsReport};
pub use nn::{Activation, DenseLayer, GradientSet, Network, OptimizerState};
pub use pipeline::{
    build_model, combined_loss, compute_tau, end_to_end_forward, train_pipeline, train_round,
    SemComModel, TrainConfig, TrainingState,
};
pub use seed::derive_seed;
