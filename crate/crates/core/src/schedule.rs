//! Cumulative signal-retention schedule `α_0..α_T` and the DDIM transition
//! coefficients derived from it.

use crate::error::{Error, Result};

/// Negative radicands closer to zero than this are rounding noise.
const RADICAND_TOLERANCE: f64 = 1e-12;

/// Upper bound on per-step betas for the cosine schedule, keeping `α_T > 0`.
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleParams {
    /// Betas linearly spaced from `beta_min` (step 1) to `beta_max` (step T).
    LinearBeta { beta_min: f64, beta_max: f64 },
    /// Squared-cosine cumulative schedule with offset `s`.
    Cosine { offset: f64 },
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams::LinearBeta {
            beta_min: 1e-4,
            beta_max: 0.2,
        }
    }
}

/// Immutable diffusion schedule. `alpha[0] = 1`, strictly decreasing, `alpha[T] > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    params: ScheduleParams,
    alpha: Vec<f64>,
}

impl Schedule {
    pub fn new(params: ScheduleParams, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let alpha = match params {
            ScheduleParams::LinearBeta { beta_min, beta_max } => {
                if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
                    return Err(Error::Config(format!(
                        "linear-beta needs 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
                    )));
                }
                let mut alpha = Vec::with_capacity(steps + 1);
                alpha.push(1.0);
                let mut prod = 1.0;
                for i in 1..=steps {
                    let beta = if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * (i - 1) as f64 / (steps - 1) as f64
                    };
                    prod *= 1.0 - beta;
                    alpha.push(prod);
                }
                alpha
            }
            ScheduleParams::Cosine { offset } => {
                if !(offset > 0.0 && offset.is_finite()) {
                    return Err(Error::Config(format!(
                        "cosine schedule needs offset > 0, got {offset}"
                    )));
                }
                let f = |t: usize| {
                    let u = (t as f64 / steps as f64 + offset) / (1.0 + offset);
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                let f0 = f(0);
                let mut alpha = Vec::with_capacity(steps + 1);
                alpha.push(1.0);
                let mut prev_bar = 1.0;
                let mut prod = 1.0;
                for t in 1..=steps {
                    let bar = f(t) / f0;
                    let beta = (1.0 - bar / prev_bar).min(COSINE_MAX_BETA);
                    prev_bar = bar;
                    prod *= 1.0 - beta;
                    alpha.push(prod);
                }
                alpha
            }
        };
        validate_alphas(&alpha)?;
        Ok(Schedule { params, alpha })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `α_t` for `t` in `0..=T`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.alpha.get(t).copied().ok_or(Error::StepOutOfRange {
            index: t,
            min: 0,
            max: self.steps(),
        })
    }

    /// Coefficients `(γ_t0, γ_t1)` of the denoising step `X_t → X_{t−1}`, `t` in `1..=T`.
    pub fn gamma(&self, t: usize) -> Result<(f64, f64)> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                index: t,
                min: 1,
                max: self.steps(),
            });
        }
        transition_coefficients(self.alpha[t], self.alpha[t - 1])
    }

    /// Coefficients `(γ'_t0, γ'_t1)` of the inversion step `X̂_t → X̂_{t+1}`, `t` in `0..T`.
    pub fn gamma_inv(&self, t: usize) -> Result<(f64, f64)> {
        if t >= self.steps() {
            return Err(Error::StepOutOfRange {
                index: t,
                min: 0,
                max: self.steps() - 1,
            });
        }
        transition_coefficients(self.alpha[t], self.alpha[t + 1])
    }
}

fn validate_alphas(alpha: &[f64]) -> Result<()> {
    for (t, &a) in alpha.iter().enumerate() {
        if !a.is_finite() || a <= 0.0 || a > 1.0 {
            return Err(Error::Schedule {
                index: t,
                reason: format!("alpha {a} outside (0, 1]"),
            });
        }
        if t > 0 && a >= alpha[t - 1] {
            return Err(Error::Schedule {
                index: t,
                reason: format!("alpha {a} does not decrease from {}", alpha[t - 1]),
            });
        }
    }
    Ok(())
}

/// Deterministic DDIM transition from a state at cumulative level `alpha_from`
/// to one at `alpha_to`:
///
/// `x_to = sqrt(α_to/α_from)·x_from + (sqrt(1−α_to) − sqrt(α_to/α_from − α_to))·ε`.
///
/// Denoising uses `(α_t, α_{t−1})`, inversion uses `(α_t, α_{t+1})`.
pub fn transition_coefficients(alpha_from: f64, alpha_to: f64) -> Result<(f64, f64)> {
    let ratio = alpha_to / alpha_from;
    let mut radicand = ratio - alpha_to;
    if radicand < 0.0 {
        if radicand < -RADICAND_TOLERANCE {
            return Err(Error::NegativeRadicand { value: radicand });
        }
        radicand = 0.0;
    }
    let scale = ratio.sqrt();
    let noise = (1.0 - alpha_to).sqrt() - radicand.sqrt();
    Ok((scale, noise))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> Schedule {
        Schedule::new(ScheduleParams::default(), 50).unwrap()
    }

    #[test]
    fn default_linear_beta_has_51_alphas() {
        let s = default_schedule();
        assert_eq!(s.alphas().len(), 51);
        assert_eq!(s.alpha(0).unwrap(), 1.0);
        let terminal = s.alpha(50).unwrap();
        assert!((terminal - 0.004_616_111_011_266_996).abs() < 1e-15);
    }

    #[test]
    fn single_step_chains() {
        for params in [
            ScheduleParams::default(),
            ScheduleParams::Cosine { offset: 0.008 },
        ] {
            let s = Schedule::new(params, 1).unwrap();
            assert_eq!(s.alphas().len(), 2);
            assert_eq!(s.alphas()[0], 1.0);
            assert!(s.alphas()[1] > 0.0 && s.alphas()[1] < 1.0);
        }
    }

    #[test]
    fn short_linear_product() {
        // 0.9 · 0.85 · 0.8 · 0.75 · 0.7 = 0.3213 (50-digit reference).
        let s = Schedule::new(
            ScheduleParams::LinearBeta {
                beta_min: 0.1,
                beta_max: 0.3,
            },
            5,
        )
        .unwrap();
        let a5 = s.alpha(5).unwrap();
        assert!(((a5 - 0.3213) / 0.3213).abs() < 1e-14, "{a5}");
    }

    #[test]
    fn cosine_schedule_is_valid() {
        let s = Schedule::new(ScheduleParams::Cosine { offset: 0.008 }, 50).unwrap();
        assert!(s.alphas().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha(50).unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = [
            ScheduleParams::LinearBeta {
                beta_min: 0.3,
                beta_max: 0.1,
            },
            ScheduleParams::LinearBeta {
                beta_min: 0.0,
                beta_max: 0.1,
            },
            ScheduleParams::LinearBeta {
                beta_min: 0.1,
                beta_max: 1.0,
            },
            ScheduleParams::Cosine { offset: 0.0 },
        ];
        for p in bad {
            assert!(matches!(Schedule::new(p, 10), Err(Error::Config(_))));
        }
        assert!(Schedule::new(ScheduleParams::default(), 0).is_err());
    }

    #[test]
    fn validation_names_offending_index() {
        let err = validate_alphas(&[1.0, 0.9, 0.95, 0.5]).unwrap_err();
        assert!(matches!(err, Error::Schedule { index: 2, .. }));
        let err = validate_alphas(&[1.0, 0.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Schedule { index: 2, .. }));
    }

    #[test]
    fn equal_alpha_is_identity_step() {
        for a in [1.0, 0.7, 0.01] {
            let (g0, g1) = transition_coefficients(a, a).unwrap();
            assert_eq!(g0, 1.0);
            assert!(g1.abs() < 1e-15, "{g1}");
        }
    }

    #[test]
    fn forward_half_alpha() {
        // α_{t−1} = 1, α_t = 0.5 → (sqrt 2, −1)
        let (g0, g1) = transition_coefficients(0.5, 1.0).unwrap();
        assert!((g0 - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((g1 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_half_alpha() {
        // α_t = 1, α_{t+1} = 0.5 → (sqrt 0.5, sqrt 0.5)
        let (g0, g1) = transition_coefficients(1.0, 0.5).unwrap();
        assert!((g0 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((g1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn gamma_identity_and_bounds() {
        let s = default_schedule();
        for t in 1..=50 {
            let (g0, g1) = s.gamma(t).unwrap();
            let a_prev = s.alpha(t - 1).unwrap();
            let a_t = s.alpha(t).unwrap();
            let rearranged = (1.0 - a_prev).sqrt() - g0 * (1.0 - a_t).sqrt();
            assert!((g1 - rearranged).abs() < 1e-13, "t={t}");
            assert!(g0 > 1.0);
        }
    }

    #[test]
    fn index_errors() {
        let s = default_schedule();
        assert!(matches!(s.gamma(0), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.gamma(51), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.gamma_inv(50), Err(Error::StepOutOfRange { .. })));
        assert!(s.gamma_inv(0).is_ok());
        assert!(s.alpha(51).is_err());
    }

    #[test]
    fn radicand_clamping() {
        // alpha_from slightly above one pushes the radicand a hair below zero.
        let (_, g1) = transition_coefficients(1.0 + 1e-14, 0.5).unwrap();
        assert!(g1.is_finite());
        assert!(matches!(
            transition_coefficients(2.0, 0.5),
            Err(Error::NegativeRadicand { .. })
        ));
    }

    #[test]
    fn inverse_then_forward_round_trip() {
        let s = default_schedule();
        let eps = -0.37;
        for t in 0..50 {
            let x = 0.8 - 0.01 * t as f64;
            let (i0, i1) = s.gamma_inv(t).unwrap();
            let up = i0 * x + i1 * eps;
            let (g0, g1) = s.gamma(t + 1).unwrap();
            let back = g0 * up + g1 * eps;
            assert!((back - x).abs() < 1e-12, "t={t}: {back} vs {x}");
        }
    }

    #[test]
    fn construction_is_bit_deterministic() {
        let a = default_schedule();
        let b = default_schedule();
        let bits = |s: &Schedule| s.alphas().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
