//! Inversion of a given sample into a terminal state, per-step correction
//! terms that make regeneration exact, corrected generation under mixed
//! conditions, and re-diffusion.

use crate::error::{Error, Result};
use crate::objective::{total_loss, LossReport};
use crate::sampler::{ddim_step, denoise_from, mix, sample_noise, MixingSchedule};
use crate::schedule::Schedule;
use crate::world::{Condition, ToyWorld};
use crate::Vector;

/// Correction terms `E_1..E_T` (stored at `terms[t − 1]`) and the guidance
/// scale of the denoiser they were computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrections {
    pub terms: Vec<Vector>,
    pub guidance: f64,
}

impl Corrections {
    /// All-zero corrections; corrected generation then reduces to plain DDIM.
    pub fn zeros(steps: usize, dim: usize, guidance: f64) -> Self {
        Corrections {
            terms: vec![Vector::zeros(dim); steps],
            guidance,
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.terms.iter().map(|e| e.norm()).collect()
    }
}

/// Inverted chain `X̂_0..X̂_T` of a source sample with its corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionTrack {
    /// `states[t] = X̂_t`; `states[0]` is the source.
    pub states: Vec<Vector>,
    pub corrections: Corrections,
    pub condition: Condition,
}

impl InversionTrack {
    pub fn source(&self) -> &Vector {
        &self.states[0]
    }

    pub fn terminal(&self) -> &Vector {
        self.states.last().expect("track has T + 1 states")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn guidance(&self) -> f64 {
        self.corrections.guidance
    }

    /// Re-derives `E_t` from the stored states.
    pub fn recompute_correction(&self, world: &ToyWorld, s: &Schedule, t: usize) -> Result<Vector> {
        correction_term(world, s, &self.states, &self.condition, t)
    }
}

/// `E_t = X̂_{t−1} − (γ_t0·X̂_t + γ_t1·ε_g(X̂_t, t, c0))`
///
/// The bracket is evaluated exactly as the generator evaluates its step, so
/// regeneration from `X̂_T` reproduces each `X̂_{t−1}` up to one rounding of
/// the final addition instead of accumulating reassociation error.
fn correction_term(
    world: &ToyWorld,
    s: &Schedule,
    states: &[Vector],
    c0: &Condition,
    t: usize,
) -> Result<Vector> {
    let (g0, g1) = s.gamma(t)?;
    let eps = world.guided_denoiser(s, &states[t], t, c0)?;
    Ok(&states[t - 1] - ddim_step(g0, g1, &states[t], &eps))
}

fn check_finite(x: &Vector, step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step });
    }
    Ok(())
}

/// Runs `X̂_{t+1} = γ'_t0·X̂_t + γ'_t1·ε_g(X̂_t, t, c)` for `t` in `0..steps`.
fn invert_states(
    world: &ToyWorld,
    s: &Schedule,
    source: &Vector,
    c: &Condition,
    steps: usize,
) -> Result<Vec<Vector>> {
    check_finite(source, 0)?;
    if source.len() != world.data_dim() {
        return Err(Error::Dimension {
            expected: world.data_dim(),
            actual: source.len(),
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(source.clone());
    for t in 0..steps {
        let (g0, g1) = s.gamma_inv(t)?;
        let eps = world.guided_denoiser(s, &states[t], t, c)?;
        let next = g0 * &states[t] + g1 * eps;
        check_finite(&next, t + 1)?;
        states.push(next);
    }
    Ok(states)
}

pub fn invert(
    world: &ToyWorld,
    s: &Schedule,
    source: &Vector,
    c0: &Condition,
) -> Result<InversionTrack> {
    let states = invert_states(world, s, source, c0, s.steps())?;
    let terms = (1..=s.steps())
        .map(|t| correction_term(world, s, &states, c0, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(InversionTrack {
        states,
        corrections: Corrections {
            terms,
            guidance: world.guidance(),
        },
        condition: c0.clone(),
    })
}

/// Corrected generator `g̃(X_start, c_{1:T}, E_{1:T})` with `c_t = mix(c0, c1, λ_t)`.
pub fn generate_corrected(
    world: &ToyWorld,
    s: &Schedule,
    x_start: &Vector,
    c0: &Condition,
    c1: &Condition,
    lambda: &MixingSchedule,
    corrections: &Corrections,
) -> Result<Vector> {
    let steps = s.steps();
    if lambda.steps() != steps {
        return Err(Error::Dimension {
            expected: steps,
            actual: lambda.steps(),
        });
    }
    if corrections.terms.len() != steps {
        return Err(Error::Dimension {
            expected: steps,
            actual: corrections.terms.len(),
        });
    }
    if corrections.guidance != world.guidance() {
        return Err(Error::GuidanceMismatch {
            track: corrections.guidance,
            world: world.guidance(),
        });
    }
    denoise_from(
        world,
        s,
        x_start,
        steps,
        |t| mix(c0, c1, lambda.weight(t)),
        Some(&corrections.terms),
        |_, _, _| {},
    )
}

/// How the edited sample is brought back up to step `t_re`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RediffusionNoise {
    /// `sqrt(α)·x0 + sqrt(1 − α)·ε` with seeded `ε`.
    #[default]
    ForwardNoise,
    /// Deterministic inversion under the re-diffusion condition; no noise is used.
    Inversion,
}

/// Condition that drives re-denoising after an edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RediffusionCondition {
    /// `mix(c0, c1, λ_1)`, the condition of the final denoising step.
    #[default]
    FinalMix,
    Styled,
}

/// Re-noises `x0` to step `t_re` and denoises back under `c`.
pub fn rediffuse(
    world: &ToyWorld,
    s: &Schedule,
    x0: &Vector,
    t_re: usize,
    c: &Condition,
    noise_seed: u64,
    mode: RediffusionNoise,
) -> Result<Vector> {
    if t_re == 0 || t_re > s.steps() {
        return Err(Error::StepOutOfRange {
            index: t_re,
            min: 1,
            max: s.steps(),
        });
    }
    let noisy = match mode {
        RediffusionNoise::ForwardNoise => {
            let alpha = s.alpha(t_re)?;
            let eps = sample_noise(noise_seed, world.data_dim());
            alpha.sqrt() * x0 + (1.0 - alpha).sqrt() * eps
        }
        RediffusionNoise::Inversion => invert_states(world, s, x0, c, t_re)?.pop().unwrap(),
    };
    denoise_from(world, s, &noisy, t_re, |_| Ok(c.clone()), None, |_, _, _| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOptions {
    /// Re-diffusion depth; 0 skips re-diffusion.
    pub t_re: usize,
    pub noise_seed: u64,
    pub condition: RediffusionCondition,
    pub noise: RediffusionNoise,
    pub beta: f64,
}

impl Default for EditOptions {
    fn default() -> Self {
        EditOptions {
            t_re: 20,
            noise_seed: 5,
            condition: RediffusionCondition::default(),
            noise: RediffusionNoise::default(),
            beta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditDiagnostics {
    /// Max-abs error of `g̃(X̂_T, c0, E)` against the source.
    pub reconstruction_error: f64,
    /// Corrected generation under `λ`, before re-diffusion.
    pub corrected: Vector,
    pub rediffused: Option<Vector>,
    /// Losses of the edited sample against the source; `None` when `c1 = c0`.
    pub loss: Option<LossReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub edited: Vector,
    pub track: InversionTrack,
    pub diagnostics: EditDiagnostics,
}

/// Invert, regenerate under `λ` with fixed corrections, then re-diffuse.
pub fn edit(
    world: &ToyWorld,
    s: &Schedule,
    source: &Vector,
    c0: &Condition,
    c1: &Condition,
    lambda: &MixingSchedule,
    opts: &EditOptions,
) -> Result<EditOutcome> {
    let track = invert(world, s, source, c0)?;
    let steps = s.steps();
    let recon = generate_corrected(
        world,
        s,
        track.terminal(),
        c0,
        c1,
        &MixingSchedule::constant(steps, 0.0),
        &track.corrections,
    )?;
    let reconstruction_error = (&recon - source).amax();
    let corrected = generate_corrected(
        world,
        s,
        track.terminal(),
        c0,
        c1,
        lambda,
        &track.corrections,
    )?;
    let rediffused = if opts.t_re == 0 {
        None
    } else {
        let c = match opts.condition {
            RediffusionCondition::FinalMix => mix(c0, c1, lambda.weight(1))?,
            RediffusionCondition::Styled => c1.clone(),
        };
        Some(rediffuse(
            world,
            s,
            &corrected,
            opts.t_re,
            &c,
            opts.noise_seed,
            opts.noise,
        )?)
    };
    let edited = rediffused.clone().unwrap_or_else(|| corrected.clone());
    let loss = match total_loss(world, source, &edited, c0, c1, opts.beta) {
        Ok(r) => Some(r),
        Err(Error::ZeroDirection(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EditOutcome {
        edited,
        track,
        diagnostics: EditDiagnostics {
            reconstruction_error,
            corrected,
            rediffused,
            loss,
        },
    })
}
