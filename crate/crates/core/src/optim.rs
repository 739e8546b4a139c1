//! Optimization of the per-step mixing weights: initialization schemes,
//! central finite-difference gradients through the whole generation chain,
//! bias-corrected Adam, an exhaustive grid oracle, and transfer/analysis
//! helpers.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inversion::{generate_corrected, InversionTrack};
use crate::objective::{total_loss, LossReport};
use crate::sampler::{generate_output, sample_noise, MixingSchedule};
use crate::schedule::Schedule;
use crate::world::{Condition, ToyWorld};
use crate::Vector;

/// Largest Cartesian product the grid oracle will enumerate.
pub const GRID_ORACLE_BUDGET: u64 = 1_000_000;

/// Consecutive divergent iterations tolerated before the optimizer aborts.
const MAX_CONSECUTIVE_DIVERGENT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    /// `λ_t = 0` for zero-based step index ≥ 0.8T (the earliest fifth of denoising), 1 after.
    PersonLike,
    /// `λ_t = 0` for zero-based step index ≥ 0.9T, 1.2 after.
    SceneLike,
    Constant(f64),
    Custom(Vec<f64>),
}

impl InitScheme {
    pub fn init(&self, steps: usize) -> Result<MixingSchedule> {
        // Zero-based index i = t − 1, so "t ≥ 0.8T" covers the 0.2T earliest denoising steps.
        let split = |frac: f64, early: f64, late: f64| {
            (0..steps)
                .map(|i| if i as f64 >= frac * steps as f64 { early } else { late })
                .collect::<Vec<_>>()
        };
        match self {
            InitScheme::PersonLike => MixingSchedule::new(split(0.8, 0.0, 1.0)),
            InitScheme::SceneLike => MixingSchedule::new(split(0.9, 0.0, 1.2)),
            InitScheme::Constant(v) => MixingSchedule::new(vec![*v; steps]),
            InitScheme::Custom(values) => {
                if values.len() != steps {
                    return Err(Error::Dimension {
                        expected: steps,
                        actual: values.len(),
                    });
                }
                MixingSchedule::new(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub iterations: usize,
    pub fd_step: f64,
    pub init: InitScheme,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clamp: Option<(f64, f64)>,
    /// Echoed into run manifests; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig::person_like()
    }
}

impl OptimConfig {
    pub fn person_like() -> Self {
        OptimConfig {
            learning_rate: 0.03,
            beta: 0.05,
            iterations: 150,
            fd_step: 1e-3,
            init: InitScheme::PersonLike,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clamp: None,
            seed: 0,
        }
    }

    pub fn scene_like() -> Self {
        OptimConfig {
            beta: 0.03,
            init: InitScheme::SceneLike,
            ..OptimConfig::person_like()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::Config("clamp range must satisfy lo < hi".into()));
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(
        &mut self,
        lambda: &MixingSchedule,
        grad: &[f64],
        cfg: &OptimConfig,
    ) -> Result<MixingSchedule> {
        if grad.len() != self.m.len() || lambda.steps() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                actual: grad.len().min(lambda.steps()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step);
        let mut next = lambda.clone();
        for (i, value) in next.as_mut_slice().iter_mut().enumerate() {
            let g = grad[i];
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g;
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *value -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if let Some((lo, hi)) = cfg.clamp {
                *value = value.clamp(lo, hi);
            }
        }
        Ok(next)
    }
}

/// Central-difference probes, one result per coordinate, in index order.
fn fd_probes<F>(objective: &F, lambda: &MixingSchedule, h: f64) -> Vec<Result<f64>>
where
    F: Fn(&MixingSchedule) -> Result<f64> + Sync,
{
    (0..lambda.steps())
        .into_par_iter()
        .map(|i| {
            let mut plus = lambda.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = lambda.clone();
            minus.as_mut_slice()[i] -= h;
            let fp = objective(&plus)?;
            let fm = objective(&minus)?;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

/// `g_t = (f(λ + h·e_t) − f(λ − h·e_t)) / 2h` for every coordinate.
///
/// Probes may run concurrently but are combined in index order, so the
/// result does not depend on scheduling.
pub fn fd_gradient<F>(objective: F, lambda: &MixingSchedule, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&MixingSchedule) -> Result<f64> + Sync,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    fd_probes(&objective, lambda, h)
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Probe {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Where the neutral sample comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source<'a> {
    /// Fixed terminal noise `X_T`; outputs come from plain generation.
    Generation { x_t: Vector },
    /// Inverted real sample; outputs come from corrected generation.
    Editing { track: &'a InversionTrack },
}

impl Source<'_> {
    pub fn noise(seed: u64, dim: usize) -> Self {
        Source::Generation {
            x_t: sample_noise(seed, dim),
        }
    }
}

/// `λ ↦ L_clip(X_0^(0), X_0^(λ)) + β·L_perc(X_0^(0), X_0^(λ))` with the
/// neutral output computed once.
#[derive(Debug, Clone)]
pub struct PipelineObjective<'a> {
    world: &'a ToyWorld,
    schedule: &'a Schedule,
    source: Source<'a>,
    c0: &'a Condition,
    c1: &'a Condition,
    beta: f64,
    neutral: Vector,
}

impl<'a> PipelineObjective<'a> {
    pub fn new(
        world: &'a ToyWorld,
        schedule: &'a Schedule,
        source: Source<'a>,
        c0: &'a Condition,
        c1: &'a Condition,
        beta: f64,
    ) -> Result<Self> {
        if (world.embed_cond(c1) - world.embed_cond(c0)).norm() < 1e-12 {
            return Err(Error::ZeroDirection("condition pair has no embedding direction"));
        }
        let mut objective = PipelineObjective {
            world,
            schedule,
            source,
            c0,
            c1,
            beta,
            neutral: Vector::zeros(0),
        };
        objective.neutral =
            objective.output(&MixingSchedule::constant(schedule.steps(), 0.0))?;
        Ok(objective)
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn neutral(&self) -> &Vector {
        &self.neutral
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `X_0^(λ)` (or `X̃_0^(λ)` in editing mode).
    pub fn output(&self, lambda: &MixingSchedule) -> Result<Vector> {
        match &self.source {
            Source::Generation { x_t } => {
                generate_output(self.world, self.schedule, x_t, self.c0, self.c1, lambda)
            }
            Source::Editing { track } => generate_corrected(
                self.world,
                self.schedule,
                track.terminal(),
                self.c0,
                self.c1,
                lambda,
                &track.corrections,
            ),
        }
    }

    pub fn evaluate_with_output(&self, lambda: &MixingSchedule) -> Result<(Vector, LossReport)> {
        let out = self.output(lambda)?;
        let report = total_loss(self.world, &self.neutral, &out, self.c0, self.c1, self.beta)?;
        Ok((out, report))
    }

    pub fn evaluate(&self, lambda: &MixingSchedule) -> Result<LossReport> {
        Ok(self.evaluate_with_output(lambda)?.1)
    }

    pub fn total(&self, lambda: &MixingSchedule) -> Result<f64> {
        Ok(self.evaluate(lambda)?.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Best iterate by total loss.
    pub lambda_star: MixingSchedule,
    /// Loss at the initialization followed by one report per iteration.
    pub loss_trace: Vec<LossReport>,
    pub initial_report: LossReport,
    pub final_report: LossReport,
    pub best_iteration: usize,
    /// Iterations in which some evaluation diverged.
    pub divergent_iterations: Vec<usize>,
    pub wall_time: Duration,
}

impl OptimResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &OptimResult) -> bool {
        self.lambda_star == other.lambda_star
            && self.loss_trace == other.loss_trace
            && self.best_iteration == other.best_iteration
            && self.divergent_iterations == other.divergent_iterations
    }
}

/// Minimizes the pipeline objective over `λ_{1:T}` with Adam on
/// finite-difference gradients; returns the best iterate seen.
pub fn optimize_lambda(
    world: &ToyWorld,
    s: &Schedule,
    source: Source<'_>,
    c0: &Condition,
    c1: &Condition,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    let started = Instant::now();
    let objective = PipelineObjective::new(world, s, source, c0, c1, cfg.beta)?;
    let f = |lam: &MixingSchedule| objective.total(lam);

    let mut lambda = cfg.init.init(s.steps())?;
    let initial_report = objective.evaluate(&lambda)?;
    let mut report = initial_report;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(report);
    let mut best = (0, lambda.clone(), report);
    let mut adam = AdamState::new(s.steps());
    let mut divergent_iterations = Vec::new();
    let mut consecutive = 0;

    for iter in 1..=cfg.iterations {
        let mut last_err = None;
        let mut grad = Vec::with_capacity(s.steps());
        for (index, probe) in fd_probes(&f, &lambda, cfg.fd_step).into_iter().enumerate() {
            match probe {
                Ok(g) => grad.push(g),
                Err(e) if e.is_divergence() => {
                    grad.push(0.0);
                    last_err = Some(e);
                }
                Err(e) => {
                    return Err(Error::Probe {
                        index,
                        source: Box::new(e),
                    })
                }
            }
        }
        let candidate = adam.step(&lambda, &grad, cfg)?;
        match objective.evaluate(&candidate) {
            Ok(r) => {
                lambda = candidate;
                report = r;
            }
            Err(e) if e.is_divergence() => last_err = Some(e),
            Err(e) => return Err(e),
        }
        if let Some(e) = last_err {
            divergent_iterations.push(iter);
            consecutive += 1;
            if consecutive >= MAX_CONSECUTIVE_DIVERGENT {
                return Err(e);
            }
        } else {
            consecutive = 0;
        }
        trace.push(report);
        if report.total < best.2.total {
            best = (iter, lambda.clone(), report);
        }
    }

    Ok(OptimResult {
        lambda_star: best.1,
        loss_trace: trace,
        initial_report,
        final_report: best.2,
        best_iteration: best.0,
        divergent_iterations,
        wall_time: started.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub lambda: MixingSchedule,
    pub report: LossReport,
    pub evaluations: usize,
}

/// Exhaustive minimization over `grid^T` in lexicographic order (first
/// coordinate most significant); ties keep the first minimizer found.
pub fn grid_oracle(objective: &PipelineObjective<'_>, grid: &[f64]) -> Result<GridOptimum> {
    if grid.is_empty() {
        return Err(Error::Config("grid oracle needs at least one value".into()));
    }
    let steps = objective.steps();
    let needed = (grid.len() as f64).powi(steps as i32);
    if needed > GRID_ORACLE_BUDGET as f64 {
        return Err(Error::OracleBudget {
            needed,
            budget: GRID_ORACLE_BUDGET,
        });
    }
    let count = needed as usize;
    let base = grid.len();
    let point = |mut n: usize| {
        let mut values = vec![0.0; steps];
        for slot in values.iter_mut().rev() {
            *slot = grid[n % base];
            n /= base;
        }
        MixingSchedule::new(values)
    };
    let reports: Vec<Result<LossReport>> = (0..count)
        .into_par_iter()
        .map(|n| objective.evaluate(&point(n)?))
        .collect();
    let mut best: Option<(usize, LossReport)> = None;
    for (n, r) in reports.into_iter().enumerate() {
        let r = r?;
        if best.is_none_or(|(_, b)| r.total < b.total) {
            best = Some((n, r));
        }
    }
    let (n, report) = best.expect("grid is non-empty");
    Ok(GridOptimum {
        lambda: point(n)?,
        report,
        evaluations: count,
    })
}

/// Applies a learned `λ` unchanged to a new source and scores it against
/// that source's own neutral output.
pub fn transfer(
    world: &ToyWorld,
    s: &Schedule,
    lambda_star: &MixingSchedule,
    new_source: Source<'_>,
    c0: &Condition,
    c1: &Condition,
    beta: f64,
) -> Result<(Vector, LossReport)> {
    if lambda_star.steps() != s.steps() {
        return Err(Error::Dimension {
            expected: s.steps(),
            actual: lambda_star.steps(),
        });
    }
    let objective = PipelineObjective::new(world, s, new_source, c0, c1, beta)?;
    objective.evaluate_with_output(lambda_star)
}

/// Cosine similarity of two mixing schedules.
pub fn lambda_cosine(a: &MixingSchedule, b: &MixingSchedule) -> Result<f64> {
    if a.steps() != b.steps() {
        return Err(Error::Dimension {
            expected: a.steps(),
            actual: b.steps(),
        });
    }
    let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    let na = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroDirection("mixing schedule is all zeros"));
    }
    Ok(dot / (na * nb))
}
