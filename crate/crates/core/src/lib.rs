//! Core library for the mental-health first-aid workbench.
//!
//! The crate is organised around the data flow of the assistant:
//!
//! * [`cohort`] ingests wearable + self-report cohorts and bundles them weekly.
//! * [`synth`] generates synthetic cohorts from a linear latent-status model.
//! * [`gateway`] talks to chat / logprob / embedding backends (HTTP or scripted mock).
//! * [`report`] renders weekly bundles into compact tables and refines the format.
//! * [`forge`] builds pretraining manifests, SFT pairs and counterfactual pairs.
//! * [`analysis`] runs the five-phase analysis, monitoring dialogues and simulations.
//! * [`eval`] holds the evaluation kernels (metrics, Pearson, silhouette, recall, ...).

pub mod analysis;
pub mod cohort;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod report;
pub mod synth;
pub mod templates;
pub mod util;

pub use cohort::{
    BehaviorField, Cohort, DailyBehavior, IndicatorName, LabelSource, MentalIndicator,
    MentalRecordEntry, Outcome, Participant, UserPortrait, WeeklyBundle,
};
pub use gateway::{Gateway, GatewayError};
