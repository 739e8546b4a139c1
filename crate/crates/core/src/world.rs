//! Analytic toy world: a condition-parameterized Gaussian mixture with an
//! exact noise predictor, a surrogate joint embedder and a surrogate
//! perceptual network, all built deterministically from a seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::Vector;

/// A condition embedding `c` with a readable name.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub vector: Vector,
    pub label: String,
}

impl Condition {
    pub fn new(label: impl Into<String>, vector: Vector) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("condition has non-finite entries".into()));
        }
        Ok(Condition {
            vector,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// A point of the chain: `t = 0` is clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub t: usize,
}

/// Nonlinearity of the joint embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Linear embedder, used by tests that need exact directional geometry.
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub joint_dim: usize,
    pub components: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub guidance: f64,
    pub bases: usize,
    pub attributes: usize,
    /// Scale of the component offsets `b_k`.
    pub offset_scale: f64,
    /// Scale of the shared part of the condition maps `M_k`.
    pub map_scale: f64,
    /// Relative scale of the per-component deviation of `M_k` from the shared map.
    pub map_spread: f64,
    pub cond_scale: f64,
    pub attribute_scale: f64,
    pub embed_gain: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            data_dim: 8,
            cond_dim: 4,
            joint_dim: 6,
            components: 4,
            sigma_min: 0.05,
            sigma_max: 0.2,
            guidance: 7.5,
            bases: 4,
            attributes: 3,
            offset_scale: 1.5,
            map_scale: 0.25,
            map_spread: 0.5,
            cond_scale: 1.0,
            attribute_scale: 0.6,
            embed_gain: 0.6,
        }
    }
}

impl WorldConfig {
    /// Two-dimensional preset used for density rendering.
    pub fn planar() -> Self {
        WorldConfig {
            data_dim: 2,
            cond_dim: 2,
            joint_dim: 2,
            components: 3,
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("data_dim", self.data_dim),
            ("cond_dim", self.cond_dim),
            ("joint_dim", self.joint_dim),
            ("components", self.components),
            ("bases", self.bases),
            ("attributes", self.attributes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::Config(format!(
                "need 0 <= sigma_min <= sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.guidance >= 1.0 && self.guidance.is_finite()) {
            return Err(Error::Config(format!(
                "guidance must be >= 1, got {}",
                self.guidance
            )));
        }
        let scales = [
            self.offset_scale,
            self.map_scale,
            self.map_spread,
            self.cond_scale,
            self.attribute_scale,
            self.embed_gain,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("scales must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Explicit parameters for a world. [`ToyWorld::build`] draws these from a
/// seed; tests assemble special-purpose worlds directly.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldParts {
    pub maps: Vec<DMatrix<f64>>,
    pub offsets: Vec<Vector>,
    pub weights: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub guidance: f64,
    pub null_condition: Vector,
    pub embed_matrix: DMatrix<f64>,
    pub embed_bias: Vector,
    pub embed_activation: Activation,
    pub perc_w1: DMatrix<f64>,
    pub perc_b1: Vector,
    pub perc_w2: DMatrix<f64>,
    pub perc_b2: Vector,
    pub bases: Vec<Condition>,
    pub attributes: Vec<(String, Vector)>,
}

/// Exact marginal of the diffused mixture at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePosterior {
    pub responsibilities: Vec<f64>,
    /// `sqrt(α_t)·μ_k(c)`
    pub means: Vec<Vector>,
    /// `α_t·σ_k² + 1 − α_t`
    pub variances: Vec<f64>,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    seed: Option<u64>,
    parts: WorldParts,
    log_weights: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // Row-major draw order so the layout does not depend on nalgebra's storage.
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            m[(r, c)] = scale * z;
        }
    }
    m
}

fn gaussian_vector(rng: &mut ChaCha20Rng, len: usize, scale: f64) -> Vector {
    Vector::from_iterator(len, (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)))
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Orthonormal columns from the QR factor of a seeded Gaussian matrix.
fn orthonormal(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rows, cols, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity of Householder QR so the result is canonical.
    let r = qr.r();
    for c in 0..q.ncols().min(r.nrows()) {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

fn base_label(i: usize) -> String {
    let letters = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    if i < letters.len() {
        format!("base-{}", letters[i] as char)
    } else {
        format!("base-{i}")
    }
}

impl ToyWorld {
    /// Builds a world whose every parameter is a pure function of `(seed, config)`.
    pub fn build(seed: u64, config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let d = config.data_dim;
        let m = config.cond_dim;
        let k = config.components;

        let mut rng = stream(seed, 0);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let sigmas = (0..k)
            .map(|_| {
                let u: f64 = rng.random();
                config.sigma_min + (config.sigma_max - config.sigma_min) * u
            })
            .collect();

        let mut rng = stream(seed, 1);
        let map_scale = config.map_scale / (m as f64).sqrt();
        let shared = gaussian_matrix(&mut rng, d, m, map_scale);
        let maps = (0..k)
            .map(|_| &shared + gaussian_matrix(&mut rng, d, m, map_scale * config.map_spread))
            .collect();
        let offsets = (0..k)
            .map(|_| gaussian_vector(&mut rng, d, config.offset_scale))
            .collect();

        let mut rng = stream(seed, 2);
        let embed_matrix = gaussian_matrix(
            &mut rng,
            config.joint_dim,
            d,
            config.embed_gain / (d as f64).sqrt(),
        );
        let embed_bias = gaussian_vector(&mut rng, config.joint_dim, 0.1);

        let mut rng = stream(seed, 3);
        let p = 2 * d;
        let perc_w1 = orthonormal(&mut rng, p, d);
        let perc_b1 = gaussian_vector(&mut rng, p, 0.1);
        let perc_w2 = orthonormal(&mut rng, p, p);
        let perc_b2 = gaussian_vector(&mut rng, p, 0.1);

        let mut rng = stream(seed, 4);
        let bases = (0..config.bases)
            .map(|i| Condition {
                vector: gaussian_vector(&mut rng, m, config.cond_scale),
                label: base_label(i),
            })
            .collect();
        let attributes = (0..config.attributes)
            .map(|i| {
                (
                    format!("attr-{}", i + 1),
                    gaussian_vector(&mut rng, m, config.attribute_scale),
                )
            })
            .collect();

        let parts = WorldParts {
            maps,
            offsets,
            weights,
            sigmas,
            guidance: config.guidance,
            null_condition: Vector::zeros(m),
            embed_matrix,
            embed_bias,
            embed_activation: Activation::Tanh,
            perc_w1,
            perc_b1,
            perc_w2,
            perc_b2,
            bases,
            attributes,
        };
        let mut world = ToyWorld::from_parts(parts)?;
        world.seed = Some(seed);
        Ok(world)
    }

    pub fn from_parts(parts: WorldParts) -> Result<Self> {
        let k = parts.maps.len();
        if k == 0 {
            return Err(Error::Config("world needs at least one component".into()));
        }
        let d = parts.maps[0].nrows();
        let m = parts.maps[0].ncols();
        if d == 0 || m == 0 {
            return Err(Error::Config("world dimensions must be positive".into()));
        }
        if parts.maps.iter().any(|mk| mk.shape() != (d, m))
            || parts.offsets.len() != k
            || parts.offsets.iter().any(|b| b.len() != d)
        {
            return Err(Error::Config("component maps and offsets disagree in shape".into()));
        }
        if parts.weights.len() != k || parts.sigmas.len() != k {
            return Err(Error::Config("need one weight and one sigma per component".into()));
        }
        if parts.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("component weights must be positive".into()));
        }
        let wsum: f64 = parts.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("component weights sum to {wsum}, not 1")));
        }
        if parts.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("component sigmas must be non-negative".into()));
        }
        if !(parts.guidance >= 1.0 && parts.guidance.is_finite()) {
            return Err(Error::Config("guidance must be >= 1".into()));
        }
        if parts.null_condition.len() != m {
            return Err(Error::Dimension {
                expected: m,
                actual: parts.null_condition.len(),
            });
        }
        if parts.embed_matrix.ncols() != d || parts.embed_bias.len() != parts.embed_matrix.nrows()
        {
            return Err(Error::Config("embedder shape mismatch".into()));
        }
        let p = parts.perc_w1.nrows();
        if parts.perc_w1.ncols() != d
            || parts.perc_b1.len() != p
            || parts.perc_w2.ncols() != p
            || parts.perc_b2.len() != parts.perc_w2.nrows()
        {
            return Err(Error::Config("perceptual network shape mismatch".into()));
        }
        if parts.bases.iter().any(|c| c.dim() != m)
            || parts.attributes.iter().any(|(_, a)| a.len() != m)
        {
            return Err(Error::Config("vocabulary vectors must have condition dimension".into()));
        }
        let log_weights = parts.weights.iter().map(|w| w.ln()).collect();
        Ok(ToyWorld {
            seed: None,
            parts,
            log_weights,
        })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn parts(&self) -> &WorldParts {
        &self.parts
    }

    pub fn data_dim(&self) -> usize {
        self.parts.maps[0].nrows()
    }

    pub fn cond_dim(&self) -> usize {
        self.parts.maps[0].ncols()
    }

    pub fn components(&self) -> usize {
        self.parts.maps.len()
    }

    pub fn guidance(&self) -> f64 {
        self.parts.guidance
    }

    /// Same world with a different guidance scale.
    pub fn with_guidance(&self, guidance: f64) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.guidance = guidance;
        let mut world = ToyWorld::from_parts(parts)?;
        world.seed = self.seed;
        Ok(world)
    }

    pub fn null_condition(&self) -> Condition {
        Condition {
            vector: self.parts.null_condition.clone(),
            label: "null".into(),
        }
    }

    /// SHA-256 over every parameter, for detecting mutation.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        let p = &self.parts;
        for mk in &p.maps {
            mk.iter().for_each(|v| put(*v));
        }
        for b in &p.offsets {
            b.iter().for_each(|v| put(*v));
        }
        p.weights.iter().for_each(|v| put(*v));
        p.sigmas.iter().for_each(|v| put(*v));
        put(p.guidance);
        p.null_condition.iter().for_each(|v| put(*v));
        for mat in [&p.embed_matrix, &p.perc_w1, &p.perc_w2] {
            mat.iter().for_each(|v| put(*v));
        }
        for vec in [&p.embed_bias, &p.perc_b1, &p.perc_b2] {
            vec.iter().for_each(|v| put(*v));
        }
        for c in &p.bases {
            c.vector.iter().for_each(|v| put(*v));
        }
        for (_, a) in &p.attributes {
            a.iter().for_each(|v| put(*v));
        }
        let mut h = h;
        h.update([p.embed_activation as u8]);
        for c in &p.bases {
            h.update(c.label.as_bytes());
        }
        for (l, _) in &p.attributes {
            h.update(l.as_bytes());
        }
        h.finalize().into()
    }

    fn check_data(&self, x: &Vector) -> Result<()> {
        if x.len() != self.data_dim() {
            return Err(Error::Dimension {
                expected: self.data_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_cond(&self, c: &Condition) -> Result<()> {
        if c.dim() != self.cond_dim() {
            return Err(Error::Dimension {
                expected: self.cond_dim(),
                actual: c.dim(),
            });
        }
        Ok(())
    }

    /// Clean component mean `μ_k(c) = M_k·c + b_k`.
    pub fn component_mean(&self, k: usize, c: &Condition) -> Vector {
        &self.parts.maps[k] * &c.vector + &self.parts.offsets[k]
    }

    /// `Σ_k w_k μ_k(c)`
    pub fn mixture_mean(&self, c: &Condition) -> Vector {
        let mut acc = Vector::zeros(self.data_dim());
        for k in 0..self.components() {
            acc += self.parts.weights[k] * self.component_mean(k, c);
        }
        acc
    }

    pub fn mixture_posterior(
        &self,
        s: &Schedule,
        x: &Vector,
        t: usize,
        c: &Condition,
    ) -> Result<MixturePosterior> {
        self.check_data(x)?;
        self.check_cond(c)?;
        let alpha = s.alpha(t)?;
        let root = alpha.sqrt();
        let d = self.data_dim() as f64;
        let k = self.components();
        let mut means = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for i in 0..k {
            let mean = root * self.component_mean(i, c);
            let v = alpha * self.parts.sigmas[i].powi(2) + (1.0 - alpha);
            let dist2 = (x - &mean).norm_squared();
            let log_pdf = if v > 0.0 {
                -0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - dist2 / (2.0 * v)
            } else if dist2 == 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            logits.push(self.log_weights[i] + log_pdf);
            means.push(mean);
            variances.push(v);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateDensity { step: t });
        }
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_density = max + sum.ln();
        let responsibilities = logits.iter().map(|l| (l - log_density).exp()).collect();
        Ok(MixturePosterior {
            responsibilities,
            means,
            variances,
            log_density,
        })
    }

    /// Log of the exact diffused mixture density `p_t(x | c)`.
    pub fn log_density(&self, s: &Schedule, x: &Vector, t: usize, c: &Condition) -> Result<f64> {
        Ok(self.mixture_posterior(s, x, t, c)?.log_density)
    }

    /// Score `∇ₓ log p_t(x | c) = Σ_k r_k (sqrt(α_t)μ_k(c) − x) / v_k`.
    pub fn score(&self, s: &Schedule, x: &Vector, t: usize, c: &Condition) -> Result<Vector> {
        let post = self.mixture_posterior(s, x, t, c)?;
        let mut score = Vector::zeros(x.len());
        for ((r, mean), v) in post
            .responsibilities
            .iter()
            .zip(&post.means)
            .zip(&post.variances)
        {
            score += (*r / *v) * (mean - x);
        }
        Ok(score)
    }

    /// Exact MMSE noise prediction `ε*(x, t, c) = −sqrt(1 − α_t)·∇ₓ log p_t(x | c)`.
    ///
    /// At `t = 0` (`α_0 = 1`) the prefactor vanishes and the prediction is zero.
    pub fn denoiser(&self, s: &Schedule, x: &Vector, t: usize, c: &Condition) -> Result<Vector> {
        let alpha = s.alpha(t)?;
        if alpha >= 1.0 {
            self.check_data(x)?;
            self.check_cond(c)?;
            return Ok(Vector::zeros(x.len()));
        }
        let score = self.score(s, x, t, c)?;
        Ok(-(1.0 - alpha).sqrt() * score)
    }

    /// Classifier-free guided prediction `ε(c_∅) + s·(ε(c) − ε(c_∅))`.
    pub fn guided_denoiser(
        &self,
        s: &Schedule,
        x: &Vector,
        t: usize,
        c: &Condition,
    ) -> Result<Vector> {
        if self.parts.guidance == 1.0 {
            return self.denoiser(s, x, t, c);
        }
        let null = self.null_condition();
        let uncond = self.denoiser(s, x, t, &null)?;
        if c.vector == null.vector {
            return Ok(uncond);
        }
        let cond = self.denoiser(s, x, t, c)?;
        Ok(&uncond + self.parts.guidance * (cond - &uncond))
    }

    /// Surrogate image embedder: `act(E·x + e)`.
    pub fn embed_image(&self, x: &Vector) -> Vector {
        let mut z = &self.parts.embed_matrix * x + &self.parts.embed_bias;
        let act = self.parts.embed_activation;
        z.apply(|v| *v = act.apply(*v));
        z
    }

    /// Surrogate condition embedder: the image embedder applied to the mixture mean.
    pub fn embed_cond(&self, c: &Condition) -> Vector {
        self.embed_image(&self.mixture_mean(c))
    }

    /// Two affine layers with a tanh between them; injective by construction.
    pub fn perceptual_features(&self, x: &Vector) -> Vector {
        let mut hidden = &self.parts.perc_w1 * x + &self.parts.perc_b1;
        hidden.apply(|v| *v = v.tanh());
        &self.parts.perc_w2 * hidden + &self.parts.perc_b2
    }

    pub fn base(&self, label: &str) -> Result<Condition> {
        self.parts
            .bases
            .iter()
            .find(|c| c.label == label)
            .cloned()
            .ok_or_else(|| Error::Vocabulary(label.to_string()))
    }

    pub fn attribute(&self, label: &str) -> Result<&Vector> {
        self.parts
            .attributes
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Vocabulary(label.to_string()))
    }

    pub fn base_labels(&self) -> Vec<&str> {
        self.parts.bases.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn attribute_labels(&self) -> Vec<&str> {
        self.parts.attributes.iter().map(|(l, _)| l.as_str()).collect()
    }

    /// Base condition plus a weighted sum of attribute offsets.
    pub fn compose(&self, base: &str, attributes: &[(&str, f64)]) -> Result<Condition> {
        let mut c = self.base(base)?;
        for (label, strength) in attributes {
            c.vector += *strength * self.attribute(label)?;
            c.label.push_str(&format!("+{label}@{strength}"));
        }
        Ok(c)
    }

    /// Neutral condition `c0` and styled `c1 = c0 + strength·a`.
    pub fn condition_pair(
        &self,
        base: &str,
        attribute: &str,
        strength: f64,
    ) -> Result<(Condition, Condition)> {
        let c0 = self.base(base)?;
        let c1 = self.compose(base, &[(attribute, strength)])?;
        Ok((c0, c1))
    }

    /// Draws a clean sample from the conditional mixture.
    pub fn sample_data(&self, c: &Condition, seed: u64) -> Result<Sample> {
        self.check_cond(c)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.parts.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let noise = gaussian_vector(&mut rng, self.data_dim(), self.parts.sigmas[k]);
        Ok(Sample {
            x: self.component_mean(k, c) + noise,
            t: 0,
        })
    }
}
