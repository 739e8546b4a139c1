//! Deterministic DDIM generation with per-step condition mixing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::world::{Condition, ToyWorld};
use crate::Vector;

/// Per-step mixing weights `λ_1..λ_T`, stored so that `lambda[t − 1] = λ_t`.
///
/// Values are deliberately unclamped: extrapolation past `c1` (λ > 1) is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSchedule {
    lambda: Vec<f64>,
}

impl MixingSchedule {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Config("mixing schedule must have at least one step".into()));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("mixing weights must be finite".into()));
        }
        Ok(MixingSchedule { lambda })
    }

    pub fn constant(steps: usize, value: f64) -> Self {
        MixingSchedule {
            lambda: vec![value; steps],
        }
    }

    /// Two-phase replacement: `λ_t = 1` for `t ≤ t_prime`, else 0.
    pub fn hard(steps: usize, t_prime: usize) -> Result<Self> {
        if t_prime > steps {
            return Err(Error::StepOutOfRange {
                index: t_prime,
                min: 0,
                max: steps,
            });
        }
        Ok(MixingSchedule {
            lambda: (1..=steps)
                .map(|t| if t <= t_prime { 1.0 } else { 0.0 })
                .collect(),
        })
    }

    pub fn steps(&self) -> usize {
        self.lambda.len()
    }

    /// `λ_t` for `t` in `1..=T`.
    pub fn weight(&self, t: usize) -> f64 {
        self.lambda[t - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lambda
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.lambda
    }
}

/// `T` from the sampler's point of view; see [`MixingSchedule::hard`].
pub fn hard_schedule(steps: usize, t_prime: usize) -> Result<MixingSchedule> {
    MixingSchedule::hard(steps, t_prime)
}

/// Soft combination `λ·c1 + (1 − λ)·c0`.
pub fn mix(c0: &Condition, c1: &Condition, lambda: f64) -> Result<Condition> {
    if c0.dim() != c1.dim() {
        return Err(Error::Dimension {
            expected: c0.dim(),
            actual: c1.dim(),
        });
    }
    Ok(Condition {
        vector: lambda * &c1.vector + (1.0 - lambda) * &c0.vector,
        label: format!("mix({},{};{lambda})", c0.label, c1.label),
    })
}

/// Standard-normal vector from a ChaCha20 stream keyed by `seed`.
pub fn sample_noise(seed: u64, dim: usize) -> Vector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Vector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Full denoising chain. `states[t]` holds `X_t`; `conditions[t − 1]` is the
/// condition fed at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub conditions: Vec<Condition>,
}

impl Trajectory {
    pub fn output(&self) -> &Vector {
        &self.states[0]
    }

    pub fn terminal(&self) -> &Vector {
        self.states.last().expect("trajectory has T + 1 states")
    }
}

/// `γ0·x + γ1·ε`. Shared by generation and correction terms so both round identically.
pub(crate) fn ddim_step(g0: f64, g1: f64, x: &Vector, eps: &Vector) -> Vector {
    g0 * x + g1 * eps
}

/// Runs `X_{t−1} = γ_t0·X_t + γ_t1·ε_g(X_t, t, c_t) [+ E_t]` from `start` down to 1.
///
/// `corrections[t − 1]` is added at step `t` when given. `observe` sees each
/// new state and the condition that produced it.
pub(crate) fn denoise_from<F>(
    world: &ToyWorld,
    s: &Schedule,
    x_start: &Vector,
    start: usize,
    condition_at: F,
    corrections: Option<&[Vector]>,
    mut observe: impl FnMut(usize, &Vector, &Condition),
) -> Result<Vector>
where
    F: Fn(usize) -> Result<Condition>,
{
    if x_start.len() != world.data_dim() {
        return Err(Error::Dimension {
            expected: world.data_dim(),
            actual: x_start.len(),
        });
    }
    let mut x = x_start.clone();
    for t in (1..=start).rev() {
        let c = condition_at(t)?;
        let (g0, g1) = s.gamma(t)?;
        let eps = world.guided_denoiser(s, &x, t, &c)?;
        let mut next = ddim_step(g0, g1, &x, &eps);
        if let Some(e) = corrections {
            next += &e[t - 1];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t });
        }
        observe(t - 1, &next, &c);
        x = next;
    }
    Ok(x)
}

fn check_lambda(s: &Schedule, lambda: &MixingSchedule) -> Result<()> {
    if lambda.steps() != s.steps() {
        return Err(Error::Dimension {
            expected: s.steps(),
            actual: lambda.steps(),
        });
    }
    Ok(())
}

/// Generator `g(X_T, c_{1:T})` with `c_t = mix(c0, c1, λ_t)`.
pub fn generate(
    world: &ToyWorld,
    s: &Schedule,
    x_t: &Vector,
    c0: &Condition,
    c1: &Condition,
    lambda: &MixingSchedule,
) -> Result<Trajectory> {
    check_lambda(s, lambda)?;
    let steps = s.steps();
    let mut states = vec![Vector::zeros(0); steps + 1];
    let mut conditions = vec![c0.clone(); steps];
    states[steps] = x_t.clone();
    denoise_from(
        world,
        s,
        x_t,
        steps,
        |t| mix(c0, c1, lambda.weight(t)),
        None,
        |t, x, c| {
            states[t] = x.clone();
            conditions[t] = c.clone();
        },
    )?;
    Ok(Trajectory { states, conditions })
}

/// Final output of [`generate`] without recording the chain.
pub fn generate_output(
    world: &ToyWorld,
    s: &Schedule,
    x_t: &Vector,
    c0: &Condition,
    c1: &Condition,
    lambda: &MixingSchedule,
) -> Result<Vector> {
    check_lambda(s, lambda)?;
    denoise_from(
        world,
        s,
        x_t,
        s.steps(),
        |t| mix(c0, c1, lambda.weight(t)),
        None,
        |_, _, _| {},
    )
}

/// Generation with one condition at every step.
pub fn generate_single(
    world: &ToyWorld,
    s: &Schedule,
    x_t: &Vector,
    c: &Condition,
) -> Result<Trajectory> {
    let steps = s.steps();
    let mut states = vec![Vector::zeros(0); steps + 1];
    states[steps] = x_t.clone();
    denoise_from(world, s, x_t, steps, |_| Ok(c.clone()), None, |t, x, _| {
        states[t] = x.clone();
    })?;
    Ok(Trajectory {
        states,
        conditions: vec![c.clone(); steps],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub t_prime: usize,
    pub output: Vector,
    /// Embedding distance to the pure-`c0` output.
    pub dist_neutral: f64,
    /// Embedding distance to the pure-`c1` output.
    pub dist_styled: f64,
}

/// One hard-replacement generation per `t′`, with embedding distances to both endpoints.
pub fn replacement_sweep(
    world: &ToyWorld,
    s: &Schedule,
    x_t: &Vector,
    c0: &Condition,
    c1: &Condition,
    t_primes: &[usize],
) -> Result<Vec<SweepEntry>> {
    let steps = s.steps();
    let neutral = generate_output(world, s, x_t, c0, c1, &MixingSchedule::hard(steps, 0)?)?;
    let styled = generate_output(world, s, x_t, c0, c1, &MixingSchedule::hard(steps, steps)?)?;
    let e_neutral = world.embed_image(&neutral);
    let e_styled = world.embed_image(&styled);
    t_primes
        .iter()
        .map(|&tp| {
            let lambda = MixingSchedule::hard(steps, tp)?;
            let output = generate_output(world, s, x_t, c0, c1, &lambda)?;
            let e = world.embed_image(&output);
            Ok(SweepEntry {
                t_prime: tp,
                dist_neutral: (&e - &e_neutral).norm(),
                dist_styled: (&e - &e_styled).norm(),
                output,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;
    use crate::world::WorldConfig;

    fn setup() -> (ToyWorld, Schedule, Condition, Condition) {
        let w = ToyWorld::build(7, &WorldConfig::default()).unwrap();
        let s = Schedule::new(ScheduleParams::default(), 50).unwrap();
        let (c0, c1) = w.condition_pair("base-A", "attr-1", 1.0).unwrap();
        (w, s, c0, c1)
    }

    #[test]
    fn mix_endpoints_and_extrapolation() {
        let (_, _, c0, c1) = setup();
        assert_eq!(mix(&c0, &c1, 0.0).unwrap().vector, c0.vector);
        assert_eq!(mix(&c0, &c1, 1.0).unwrap().vector, c1.vector);
        let ext = mix(&c0, &c1, 1.2).unwrap().vector;
        let expected = &c0.vector + 1.2 * (&c1.vector - &c0.vector);
        assert!((ext - expected).amax() < 1e-14);
        let short = Condition::new("s", Vector::zeros(2)).unwrap();
        assert!(matches!(mix(&c0, &short, 0.5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hard_schedules() {
        assert!(MixingSchedule::hard(50, 0).unwrap().as_slice().iter().all(|v| *v == 0.0));
        assert!(MixingSchedule::hard(50, 50).unwrap().as_slice().iter().all(|v| *v == 1.0));
        let tp = (0.7f64 * 50.0).round() as usize;
        let h = MixingSchedule::hard(50, tp).unwrap();
        assert_eq!(tp, 35);
        assert!(h.as_slice()[..35].iter().all(|v| *v == 1.0));
        assert!(h.as_slice()[35..].iter().all(|v| *v == 0.0));
        assert_eq!(h.weight(35), 1.0);
        assert_eq!(h.weight(36), 0.0);
        assert!(MixingSchedule::hard(50, 51).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        assert_eq!(sample_noise(1, 8), sample_noise(1, 8));
        assert_ne!(sample_noise(1, 8), sample_noise(2, 8));
    }

    #[test]
    fn generation_is_deterministic() {
        let (w, s, c0, c1) = setup();
        let x = sample_noise(3, 8);
        let lam = MixingSchedule::hard(50, 35).unwrap();
        let a = generate(&w, &s, &x, &c0, &c1, &lam).unwrap();
        let b = generate(&w, &s, &x, &c0, &c1, &lam).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 51);
        assert_eq!(a.terminal(), &x);
        let out = generate_output(&w, &s, &x, &c0, &c1, &lam).unwrap();
        assert_eq!(&out, a.output());
    }

    #[test]
    fn conditions_follow_two_phase_rule() {
        let (w, s, c0, c1) = setup();
        let x = sample_noise(4, 8);
        let traj = generate(&w, &s, &x, &c0, &c1, &MixingSchedule::hard(50, 35).unwrap()).unwrap();
        for t in 1..=50 {
            let expected = if t <= 35 { &c1.vector } else { &c0.vector };
            assert_eq!(&traj.conditions[t - 1].vector, expected, "t={t}");
        }
    }

    #[test]
    fn point_mass_generation_collapses_to_mean() {
        let cfg = WorldConfig {
            components: 1,
            sigma_min: 0.0,
            sigma_max: 0.0,
            guidance: 1.0,
            ..WorldConfig::default()
        };
        let w = ToyWorld::build(7, &cfg).unwrap();
        let s = Schedule::new(ScheduleParams::default(), 50).unwrap();
        let (c0, c1) = w.condition_pair("base-A", "attr-1", 1.0).unwrap();
        let mu = w.component_mean(0, &c0);
        for seed in 0..10 {
            let x = sample_noise(seed, 8);
            let out = generate(&w, &s, &x, &c0, &c1, &MixingSchedule::constant(50, 0.0)).unwrap();
            assert!((out.output() - &mu).amax() < 1e-9);
        }
    }

    #[test]
    fn wrong_lambda_length_is_rejected() {
        let (w, s, c0, c1) = setup();
        let x = sample_noise(3, 8);
        let lam = MixingSchedule::constant(10, 0.0);
        assert!(matches!(
            generate(&w, &s, &x, &c0, &c1, &lam),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn extreme_extrapolation_reports_divergence_step() {
        let (w, s, c0, c1) = setup();
        let x = sample_noise(3, 8);
        let lam = MixingSchedule::constant(50, 1e300);
        let err = generate(&w, &s, &x, &c0, &c1, &lam).unwrap_err();
        assert!(err.is_divergence(), "{err:?}");
    }

    #[test]
    fn sweep_endpoints_are_exact() {
        let (w, s, c0, c1) = setup();
        let x = sample_noise(3, 8);
        let sweep = replacement_sweep(&w, &s, &x, &c0, &c1, &[0, 35, 50]).unwrap();
        assert_eq!(sweep[0].dist_neutral, 0.0);
        assert_eq!(sweep[2].dist_styled, 0.0);
        let single0 = generate_single(&w, &s, &x, &c0).unwrap();
        let single1 = generate_single(&w, &s, &x, &c1).unwrap();
        assert_eq!(&sweep[0].output, single0.output());
        assert_eq!(&sweep[2].output, single1.output());
    }
}
