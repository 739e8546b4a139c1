//! TOML experiment configuration. Every key is optional; omitted keys take
//! the reference defaults (T = 50, guidance 7.5, lr 0.03, β 0.05 person-like
//! or 0.03 scene-like, t_re = 20).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use softmix::{
    EditOptions, InitScheme, OptimConfig, RediffusionCondition, RediffusionNoise, Schedule,
    ScheduleParams, ToyWorld, WorldConfig,
};

use crate::error::{HarnessError, Result};

/// Overrides `[experiment].output_root` when set.
pub const OUTPUT_ROOT_ENV: &str = "SOFTMIX_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sweep,
    Disentangle,
    Edit,
    Transfer,
    Robustness,
    LambdaAnalysis,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Disentangle => "disentangle",
            ExperimentKind::Edit => "edit",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::LambdaAnalysis => "lambda-analysis",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub world: WorldSection,
    pub schedule: ScheduleSection,
    pub conditions: ConditionSection,
    pub optim: OptimSection,
    pub seeds: SeedSection,
    pub edit: EditSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub output_root: PathBuf,
    /// Directory under the output root; defaults to the kind.
    pub name: Option<String>,
    /// Emit PGM/PPM renders (planar worlds only).
    pub render: bool,
    /// Replacement steps for the sweep; default `0, 0.1T, …, T`.
    pub sweep_steps: Option<Vec<usize>>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::Disentangle,
            output_root: PathBuf::from("runs"),
            name: None,
            render: false,
            sweep_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub seed: u64,
    /// `default` (d = 8) or `planar` (d = 2); the keys below override it.
    pub preset: String,
    pub data_dim: Option<usize>,
    pub cond_dim: Option<usize>,
    pub joint_dim: Option<usize>,
    pub components: Option<usize>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub guidance: Option<f64>,
    pub bases: Option<usize>,
    pub attributes: Option<usize>,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            seed: 7,
            preset: "default".into(),
            data_dim: None,
            cond_dim: None,
            joint_dim: None,
            components: None,
            sigma_min: None,
            sigma_max: None,
            guidance: None,
            bases: None,
            attributes: None,
        }
    }
}

impl WorldSection {
    pub fn world_config(&self) -> Result<WorldConfig> {
        let mut w = match self.preset.as_str() {
            "default" => WorldConfig::default(),
            "planar" => WorldConfig::planar(),
            other => return Err(HarnessError::Config(format!("unknown world preset `{other}`"))),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { w.$f = v; })* };
        }
        set!(data_dim, cond_dim, joint_dim, components, sigma_min, sigma_max, guidance, bases, attributes);
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// `linear-beta` or `cosine`.
    pub kind: String,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub offset: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            kind: "linear-beta".into(),
            steps: 50,
            beta_min: 1e-4,
            beta_max: 0.2,
            offset: 0.008,
        }
    }
}

impl ScheduleSection {
    pub fn schedule(&self) -> Result<Schedule> {
        let params = match self.kind.as_str() {
            "linear-beta" => ScheduleParams::LinearBeta {
                beta_min: self.beta_min,
                beta_max: self.beta_max,
            },
            "cosine" => ScheduleParams::Cosine { offset: self.offset },
            other => return Err(HarnessError::Config(format!("unknown schedule kind `{other}`"))),
        };
        Ok(Schedule::new(params, self.steps)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSection {
    pub base: String,
    pub attribute: String,
    pub strength: f64,
    /// Robustness recipe: strengths to try for `attribute`.
    pub strengths: Vec<f64>,
    /// Robustness recipe: further attributes composed onto both conditions.
    pub distractors: Vec<String>,
}

impl Default for ConditionSection {
    fn default() -> Self {
        ConditionSection {
            base: "base-A".into(),
            attribute: "attr-1".into(),
            strength: 1.0,
            strengths: vec![0.5, 1.0, 1.5],
            distractors: vec!["attr-2".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    /// `person-like` or `scene-like`; picks the default β and init.
    pub kind: String,
    pub learning_rate: f64,
    pub beta: Option<f64>,
    pub iterations: usize,
    pub fd_step: f64,
    /// `person-like`, `scene-like`, `constant` or `custom`; defaults to `kind`.
    pub init: Option<String>,
    pub init_value: f64,
    pub init_values: Vec<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clamp: Option<[f64; 2]>,
}

impl Default for OptimSection {
    fn default() -> Self {
        let p = OptimConfig::person_like();
        OptimSection {
            kind: "person-like".into(),
            learning_rate: p.learning_rate,
            beta: None,
            iterations: p.iterations,
            fd_step: p.fd_step,
            init: None,
            init_value: 0.0,
            init_values: Vec::new(),
            adam_beta1: p.adam_beta1,
            adam_beta2: p.adam_beta2,
            adam_eps: p.adam_eps,
            clamp: None,
        }
    }
}

impl OptimSection {
    pub fn optim_config(&self, seed: u64) -> Result<OptimConfig> {
        let base = match self.kind.as_str() {
            "person-like" => OptimConfig::person_like(),
            "scene-like" => OptimConfig::scene_like(),
            other => return Err(HarnessError::Config(format!("unknown optim kind `{other}`"))),
        };
        let init = match self.init.as_deref().unwrap_or(&self.kind) {
            "person-like" => InitScheme::PersonLike,
            "scene-like" => InitScheme::SceneLike,
            "constant" => InitScheme::Constant(self.init_value),
            "custom" => InitScheme::Custom(self.init_values.clone()),
            other => return Err(HarnessError::Config(format!("unknown init scheme `{other}`"))),
        };
        let cfg = OptimConfig {
            learning_rate: self.learning_rate,
            beta: self.beta.unwrap_or(base.beta),
            iterations: self.iterations,
            fd_step: self.fd_step,
            init,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            clamp: self.clamp.map(|[lo, hi]| (lo, hi)),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    /// Terminal-noise seeds: one optimization (or sweep) per seed.
    pub noise: Vec<u64>,
    /// Fresh seeds for the transfer recipe.
    pub transfer: Vec<u64>,
    /// Data-sample seeds for the edit recipe.
    pub source: Vec<u64>,
    pub rediffusion: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection {
            noise: (100..105).collect(),
            transfer: (500..520).collect(),
            source: vec![11],
            rediffusion: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSection {
    /// Re-diffusion depth; 0 disables it.
    pub t_re: usize,
    /// `forward-noise` or `inversion`.
    pub noise: String,
    /// `final-mix` or `styled`.
    pub condition: String,
}

impl Default for EditSection {
    fn default() -> Self {
        EditSection {
            t_re: 20,
            noise: "forward-noise".into(),
            condition: "final-mix".into(),
        }
    }
}

impl EditSection {
    pub fn options(&self, noise_seed: u64, beta: f64) -> Result<EditOptions> {
        let noise = match self.noise.as_str() {
            "forward-noise" => RediffusionNoise::ForwardNoise,
            "inversion" => RediffusionNoise::Inversion,
            other => return Err(HarnessError::Config(format!("unknown re-diffusion noise `{other}`"))),
        };
        let condition = match self.condition.as_str() {
            "final-mix" => RediffusionCondition::FinalMix,
            "styled" => RediffusionCondition::Styled,
            other => return Err(HarnessError::Config(format!("unknown re-diffusion condition `{other}`"))),
        };
        Ok(EditOptions {
            t_re: self.t_re,
            noise_seed,
            condition,
            noise,
            beta,
        })
    }
}

/// Everything a recipe needs, built and checked once.
pub struct Resolved {
    pub world: ToyWorld,
    pub schedule: Schedule,
    pub optim: OptimConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Output root from the environment if set, else from the config.
    pub fn output_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.experiment.output_root.clone());
        let name = self.experiment.name.as_deref().unwrap_or(self.experiment.kind.name());
        root.join(name)
    }

    /// Builds the world and checks everything that can be checked before running.
    pub fn resolve(&self) -> Result<Resolved> {
        let world = ToyWorld::build(self.world.seed, &self.world.world_config()?)?;
        let schedule = self.schedule.schedule()?;
        let optim = self.optim.optim_config(self.world.seed)?;
        let c = &self.conditions;
        world.base(&c.base)?;
        for label in std::iter::once(&c.attribute).chain(&c.distractors) {
            world.attribute(label)?;
        }
        if !c.strength.is_finite() || c.strength == 0.0 {
            return Err(HarnessError::Config("conditions.strength must be finite and nonzero".into()));
        }
        let s = &self.seeds;
        let kind = self.experiment.kind;
        if s.noise.is_empty() {
            return Err(HarnessError::Config("seeds.noise must not be empty".into()));
        }
        if kind == ExperimentKind::Transfer && s.transfer.is_empty() {
            return Err(HarnessError::Config("seeds.transfer must not be empty".into()));
        }
        if kind == ExperimentKind::Edit && s.source.is_empty() {
            return Err(HarnessError::Config("seeds.source must not be empty".into()));
        }
        if kind == ExperimentKind::Robustness && c.strengths.is_empty() {
            return Err(HarnessError::Config("conditions.strengths must not be empty".into()));
        }
        if kind == ExperimentKind::LambdaAnalysis && s.noise.len() < 2 {
            return Err(HarnessError::Config("lambda-analysis needs at least two noise seeds".into()));
        }
        if let Some(steps) = &self.experiment.sweep_steps {
            if steps.is_empty() || steps.iter().any(|t| *t > schedule.steps()) {
                return Err(HarnessError::Config(format!(
                    "sweep_steps must be non-empty and within 0..={}",
                    schedule.steps()
                )));
            }
        }
        if self.edit.t_re > schedule.steps() {
            return Err(HarnessError::Config(format!("edit.t_re exceeds {} steps", schedule.steps())));
        }
        self.edit.options(s.rediffusion, optim.beta)?;
        if self.experiment.render && world.data_dim() != 2 {
            return Err(HarnessError::Config("render needs a planar (d = 2) world".into()));
        }
        if self.experiment.name.as_deref() == Some("") {
            return Err(HarnessError::Config("experiment.name must not be empty".into()));
        }
        Ok(Resolved { world, schedule, optim })
    }
}
