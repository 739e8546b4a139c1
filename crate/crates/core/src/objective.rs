//! Directional embedding loss plus β-weighted perceptual loss.

use crate::error::{Error, Result};
use crate::world::{Condition, ToyWorld};
use crate::Vector;

const MIN_DIRECTION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// `1 − cos(ΔI, ΔT)`, in `[0, 2]`.
    pub clip: f64,
    /// L1 distance between perceptual features.
    pub perc: f64,
    pub beta: f64,
    /// `clip + beta·perc`
    pub total: f64,
}

/// `1 − cos(ΔI, ΔT)` where `ΔI` is the image-embedding change from
/// `x_neutral` to `x_mixed` and `ΔT` the condition-embedding change from
/// `c0` to `c1`.
///
/// A vanishing `ΔI` carries no direction; the loss is then exactly 1.
pub fn directional_loss(
    world: &ToyWorld,
    x_neutral: &Vector,
    x_mixed: &Vector,
    c0: &Condition,
    c1: &Condition,
) -> Result<f64> {
    let delta_t = world.embed_cond(c1) - world.embed_cond(c0);
    let norm_t = delta_t.norm();
    if norm_t < MIN_DIRECTION_NORM {
        return Err(Error::ZeroDirection("condition pair has no embedding direction"));
    }
    let delta_i = world.embed_image(x_mixed) - world.embed_image(x_neutral);
    let norm_i = delta_i.norm();
    if norm_i < MIN_DIRECTION_NORM {
        return Ok(1.0);
    }
    let cos = (delta_i.dot(&delta_t) / (norm_i * norm_t)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// `‖h(x_neutral) − h(x_mixed)‖₁`
pub fn perceptual_loss(world: &ToyWorld, x_neutral: &Vector, x_mixed: &Vector) -> f64 {
    let a = world.perceptual_features(x_neutral);
    let b = world.perceptual_features(x_mixed);
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum()
}

pub fn total_loss(
    world: &ToyWorld,
    x_neutral: &Vector,
    x_mixed: &Vector,
    c0: &Condition,
    c1: &Condition,
    beta: f64,
) -> Result<LossReport> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let clip = directional_loss(world, x_neutral, x_mixed, c0, c1)?;
    let perc = perceptual_loss(world, x_neutral, x_mixed);
    Ok(LossReport {
        clip,
        perc,
        beta,
        total: clip + beta * perc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Activation, WorldConfig};
    use proptest::prelude::*;

    fn world() -> ToyWorld {
        ToyWorld::build(7, &WorldConfig::default()).unwrap()
    }

    /// Seed-7 world with a linear embedder, where embedding differences are
    /// exactly `E·Δx`.
    fn linear_world() -> ToyWorld {
        let mut parts = world().parts().clone();
        parts.embed_activation = Activation::Identity;
        ToyWorld::from_parts(parts).unwrap()
    }

    #[test]
    fn aligned_shift_has_zero_loss() {
        let w = linear_world();
        let (c0, c1) = w.condition_pair("base-A", "attr-1", 1.0).unwrap();
        let x0 = crate::sampler::sample_noise(9, 8);
        let shift = w.mixture_mean(&c1) - w.mixture_mean(&c0);
        let loss = directional_loss(&w, &x0, &(&x0 + 0.7 * &shift), &c0, &c1).unwrap();
        assert!(loss.abs() <= 1e-6, "{loss}");
        let anti = directional_loss(&w, &x0, &(&x0 - 0.7 * &shift), &c0, &c1).unwrap();
        assert!((anti - 2.0).abs() <= 1e-12, "{anti}");
    }

    #[test]
    fn scale_invariance_in_linear_world() {
        let w = linear_world();
        let (c0, c1) = w.condition_pair("base-B", "attr-2", 1.0).unwrap();
        let x0 = crate::sampler::sample_noise(1, 8);
        let dx = crate::sampler::sample_noise(2, 8);
        let a = directional_loss(&w, &x0, &(&x0 + &dx), &c0, &c1).unwrap();
        let b = directional_loss(&w, &x0, &(&x0 + 3.5 * &dx), &c0, &c1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn no_change_scores_one() {
        let w = world();
        let (c0, c1) = w.condition_pair("base-A", "attr-1", 1.0).unwrap();
        let x = crate::sampler::sample_noise(3, 8);
        assert_eq!(directional_loss(&w, &x, &x, &c0, &c1).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_pair_is_an_error() {
        let w = world();
        let c0 = w.base("base-A").unwrap();
        let x = crate::sampler::sample_noise(3, 8);
        assert!(matches!(
            directional_loss(&w, &x, &x, &c0, &c0),
            Err(Error::ZeroDirection(_))
        ));
        assert!(total_loss(&w, &x, &x, &c0, &c0, 0.05).is_err());
    }

    #[test]
    fn total_combines_terms() {
        let w = world();
        let (c0, c1) = w.condition_pair("base-A", "attr-1", 1.0).unwrap();
        let a = crate::sampler::sample_noise(3, 8);
        let b = crate::sampler::sample_noise(4, 8);
        let r = total_loss(&w, &a, &b, &c0, &c1, 0.0).unwrap();
        assert_eq!(r.total, r.clip);
        for beta in [0.05, 0.03] {
            let r = total_loss(&w, &a, &b, &c0, &c1, beta).unwrap();
            assert_eq!(r.total, r.clip + beta * r.perc);
            assert_eq!(r.beta, beta);
        }
        assert!(total_loss(&w, &a, &b, &c0, &c1, -1.0).is_err());
    }

    #[test]
    fn perceptual_identity_and_symmetry() {
        let w = world();
        let a = crate::sampler::sample_noise(3, 8);
        let b = crate::sampler::sample_noise(4, 8);
        assert_eq!(perceptual_loss(&w, &a, &a), 0.0);
        assert_eq!(perceptual_loss(&w, &a, &b), perceptual_loss(&w, &b, &a));
        assert!(perceptual_loss(&w, &a, &b) > 0.0);
    }

    fn vec8() -> impl Strategy<Value = Vector> {
        prop::collection::vec(-5.0f64..5.0, 8).prop_map(Vector::from_vec)
    }

    proptest! {
        #[test]
        fn directional_loss_in_range(a in vec8(), b in vec8()) {
            let w = world();
            let (c0, c1) = w.condition_pair("base-C", "attr-3", 1.0).unwrap();
            let l = directional_loss(&w, &a, &b, &c0, &c1).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
        }

        #[test]
        fn perceptual_triangle_inequality(a in vec8(), b in vec8(), c in vec8()) {
            let w = world();
            let ab = perceptual_loss(&w, &a, &b);
            let bc = perceptual_loss(&w, &b, &c);
            let ac = perceptual_loss(&w, &a, &c);
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn embedder_is_lipschitz(a in vec8(), b in vec8()) {
            let w = world();
            let op_norm = w.parts().embed_matrix.clone().svd(false, false).singular_values.max();
            let lhs = (w.embed_image(&a) - w.embed_image(&b)).norm();
            prop_assert!(lhs <= op_norm * (&a - &b).norm() * (1.0 + 1e-12));
        }
    }
}
