//! Mixture of experts for new parts: one surrogate per known part, a point
//! cloud encoder that embeds part geometry, and distance-based gating.

mod cloud;
mod encoder;
mod gating;

pub use cloud::{choose_k_emb, resample, PointCloud, ResampleMode};
pub use encoder::{train_encoder, EncoderConfig, EncoderTraining, GeometricEncoder};
pub use gating::{gate, gate_by_distance, mix_moments, mixture_predict, GatingDecision, GatingMode, DEFAULT_CUTOFF};
