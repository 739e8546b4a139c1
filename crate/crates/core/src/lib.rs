//! Disentangled attribute editing by soft mixing of condition embeddings.
//!
//! A deterministic DDIM generator runs over an analytic Gaussian-mixture
//! world whose exact denoiser stands in for a trained noise predictor. Each
//! denoising step receives an affine blend `λ_t·c1 + (1 − λ_t)·c0` of a
//! neutral condition and a styled one; the per-step weights are optimized
//! against a directional embedding loss plus a perceptual anchor. Real
//! samples are edited through exact inversion with per-step correction
//! terms, followed by optional re-diffusion.
//!
//! Step indexing follows the denoising chain: `t = T` is the first step
//! applied to pure noise and `t = 1` is the last. "Late" steps therefore
//! have *small* `t`.

pub mod error;
pub mod inversion;
pub mod objective;
pub mod optim;
pub mod sampler;
pub mod schedule;
pub mod world;

pub use error::{Error, Result};
pub use inversion::{
    edit, generate_corrected, invert, rediffuse, Corrections, EditDiagnostics, EditOptions,
    EditOutcome, InversionTrack, RediffusionCondition, RediffusionNoise,
};
pub use objective::{directional_loss, perceptual_loss, total_loss, LossReport};
pub use optim::{
    fd_gradient, grid_oracle, lambda_cosine, optimize_lambda, transfer, AdamState, GridOptimum,
    InitScheme, OptimConfig, OptimResult, PipelineObjective, Source,
};
pub use sampler::{
    generate, generate_output, generate_single, hard_schedule, mix, replacement_sweep, sample_noise, MixingSchedule, SweepEntry,
    Trajectory,
};
pub use schedule::{transition_coefficients, Schedule, ScheduleParams};
pub use world::{Activation, Condition, MixturePosterior, Sample, ToyWorld, WorldConfig, WorldParts};

/// Dense real vector used for data samples, conditions and embeddings.
pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
