//! The six experiment recipes. Each writes its CSVs through an
//! [`ArtifactWriter`]; independent seeds run in parallel but rows are always
//! emitted in seed order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use softmix::{
    edit, hard_schedule, invert, lambda_cosine, optimize_lambda, replacement_sweep, transfer,
    Condition, OptimConfig, OptimResult, Schedule, Source, ToyWorld, Vector,
};

use crate::artifacts::{indexed, num, strings, ArtifactWriter, Manifest};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::render::{render_density, render_points, Grid, Overlay, EDITED, NEUTRAL};

pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    world: ToyWorld,
    s: Schedule,
    optim: OptimConfig,
    c0: Condition,
    c1: Condition,
}

impl Ctx<'_> {
    fn optimize(&self, noise_seed: u64, c0: &Condition, c1: &Condition) -> Result<OptimResult> {
        let source = Source::noise(noise_seed, self.world.data_dim());
        Ok(optimize_lambda(&self.world, &self.s, source, c0, c1, &self.optim)?)
    }

    fn optimize_seeds(&self, seeds: &[u64]) -> Result<Vec<OptimResult>> {
        seeds
            .par_iter()
            .map(|seed| self.optimize(*seed, &self.c0, &self.c1))
            .collect()
    }

    fn output(&self, noise_seed: u64, lambda: &softmix::MixingSchedule) -> Result<Vector> {
        let x_t = softmix::sample_noise(noise_seed, self.world.data_dim());
        Ok(softmix::generate_output(&self.world, &self.s, &x_t, &self.c0, &self.c1, lambda)?)
    }

    fn render_pair(&self, out: &mut ArtifactWriter, neutral: &[Vector], edited: &[Vector]) -> Result<()> {
        if !self.cfg.experiment.render {
            return Ok(());
        }
        let grid = Grid::default();
        for (name, c) in [("density_c0.pgm", &self.c0), ("density_c1.pgm", &self.c1)] {
            out.write_bytes(name, render_density(&self.world, &self.s, c, 0, &grid)?.as_bytes())?;
        }
        let overlays = [
            Overlay { points: neutral, rgb: NEUTRAL },
            Overlay { points: edited, rgb: EDITED },
        ];
        out.write_bytes("samples.ppm", render_points(&overlays, &grid)?.as_bytes())
    }
}

fn point_rows<'a>(rows: impl IntoIterator<Item = (String, &'a str, &'a Vector)>) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|(key, role, x)| {
            let mut row = vec![key, role.to_string()];
            row.extend(x.iter().map(|v| num(*v)));
            row
        })
        .collect()
}

/// Validates `cfg`, runs its recipe into `dir`, and writes the manifest.
pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let r = cfg.resolve()?;
    let c = &cfg.conditions;
    let (c0, c1) = r.world.condition_pair(&c.base, &c.attribute, c.strength)?;
    let digest = r.world.digest();
    let ctx = Ctx {
        cfg,
        world: r.world,
        s: r.schedule,
        optim: r.optim,
        c0,
        c1,
    };
    let mut out = ArtifactWriter::create(dir)?;
    out.write_schedule("schedule.csv", &ctx.s)?;
    let setup = started.elapsed();
    let recipe_start = Instant::now();
    match cfg.experiment.kind {
        ExperimentKind::Sweep => sweep(&ctx, &mut out)?,
        ExperimentKind::Disentangle => disentangle(&ctx, &mut out)?,
        ExperimentKind::Edit => edit_recipe(&ctx, &mut out)?,
        ExperimentKind::Transfer => transfer_recipe(&ctx, &mut out)?,
        ExperimentKind::Robustness => robustness(&ctx, &mut out)?,
        ExperimentKind::LambdaAnalysis => lambda_analysis(&ctx, &mut out)?,
    }
    if ctx.world.digest() != digest {
        return Err(HarnessError::Config("world parameters changed during the run".into()));
    }
    let timings = [
        ("setup".to_string(), setup),
        (cfg.experiment.kind.name().to_string(), recipe_start.elapsed()),
        ("total".to_string(), started.elapsed()),
    ];
    let manifest = out.finish(cfg, &digest, &timings)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        manifest,
    })
}

/// [`run_in`] at the configured (or environment-overridden) output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_in(cfg, &cfg.output_dir())
}

fn sweep(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let steps = ctx.s.steps();
    let t_primes = ctx
        .cfg
        .experiment
        .sweep_steps
        .clone()
        .unwrap_or_else(|| (0..=10).map(|i| i * steps / 10).collect());
    let seeds = &ctx.cfg.seeds.noise;
    let sweeps = seeds
        .par_iter()
        .map(|seed| {
            let x_t = softmix::sample_noise(*seed, ctx.world.data_dim());
            replacement_sweep(&ctx.world, &ctx.s, &x_t, &ctx.c0, &ctx.c1, &t_primes)
        })
        .collect::<softmix::Result<Vec<_>>>()?;
    let d = ctx.world.data_dim();
    let mut header = strings(&["seed", "t_prime", "dist_neutral", "dist_styled"]);
    header.extend(indexed("x", d));
    let rows = seeds.iter().zip(&sweeps).flat_map(|(seed, entries)| {
        entries.iter().map(move |e| {
            let mut row = vec![seed.to_string(), e.t_prime.to_string(), num(e.dist_neutral), num(e.dist_styled)];
            row.extend(e.output.iter().map(|v| num(*v)));
            row
        })
    });
    out.write_csv("sweep.csv", &header, rows)?;

    // the two-phase trajectory at t′ = 0.7T for the first seed
    let t_prime = (7 * steps).div_ceil(10);
    let x_t = softmix::sample_noise(seeds[0], d);
    let lam = hard_schedule(steps, t_prime)?;
    let traj = softmix::generate(&ctx.world, &ctx.s, &x_t, &ctx.c0, &ctx.c1, &lam)?;
    out.write_trajectory(&format!("trajectory_seed{}_t{t_prime}.csv", seeds[0]), &traj)?;

    let neutral: Vec<Vector> = sweeps.iter().map(|e| e.first().unwrap().output.clone()).collect();
    let styled: Vec<Vector> = sweeps.iter().map(|e| e.last().unwrap().output.clone()).collect();
    ctx.render_pair(out, &neutral, &styled)
}

fn write_optimization(out: &mut ArtifactWriter, tag: &str, r: &OptimResult) -> Result<()> {
    out.write_lambda(&format!("lambda_{tag}.csv"), &r.lambda_star)?;
    out.write_trace(&format!("trace_{tag}.csv"), &r.loss_trace)
}

fn optimization_header() -> Vec<String> {
    strings(&[
        "initial_total",
        "initial_clip",
        "initial_perc",
        "final_total",
        "final_clip",
        "final_perc",
        "best_iteration",
        "divergent_iterations",
        "improved",
    ])
}

fn optimization_cells(r: &OptimResult) -> Vec<String> {
    let (a, b) = (r.initial_report, r.final_report);
    vec![
        num(a.total),
        num(a.clip),
        num(a.perc),
        num(b.total),
        num(b.clip),
        num(b.perc),
        r.best_iteration.to_string(),
        r.divergent_iterations.len().to_string(),
        (b.total < a.total).to_string(),
    ]
}

fn disentangle(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let seeds = &ctx.cfg.seeds.noise;
    let results = ctx.optimize_seeds(seeds)?;
    let mut header = strings(&["seed"]);
    header.extend(optimization_header());
    let rows = seeds.iter().zip(&results).map(|(seed, r)| {
        let mut row = vec![seed.to_string()];
        row.extend(optimization_cells(r));
        row
    });
    out.write_csv("aggregate.csv", &header, rows)?;
    for (seed, r) in seeds.iter().zip(&results) {
        write_optimization(out, &format!("seed{seed}"), r)?;
    }
    let zero = softmix::MixingSchedule::constant(ctx.s.steps(), 0.0);
    let mut neutral = Vec::new();
    let mut edited = Vec::new();
    for (seed, r) in seeds.iter().zip(&results) {
        neutral.push(ctx.output(*seed, &zero)?);
        edited.push(ctx.output(*seed, &r.lambda_star)?);
    }
    let mut header = strings(&["seed", "role"]);
    header.extend(indexed("x", ctx.world.data_dim()));
    let labelled = seeds.iter().enumerate().flat_map(|(i, seed)| {
        [(seed.to_string(), "neutral", &neutral[i]), (seed.to_string(), "edited", &edited[i])]
    });
    out.write_csv("outputs.csv", &header, point_rows(labelled))?;
    ctx.render_pair(out, &neutral, &edited)
}

fn edit_recipe(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let seeds = &ctx.cfg.seeds.source;
    let opts = ctx.cfg.edit.options(ctx.cfg.seeds.rediffusion, ctx.optim.beta)?;
    let runs = seeds
        .par_iter()
        .map(|seed| -> Result<_> {
            let source = ctx.world.sample_data(&ctx.c0, *seed)?.x;
            let track = invert(&ctx.world, &ctx.s, &source, &ctx.c0)?;
            let r = optimize_lambda(
                &ctx.world,
                &ctx.s,
                Source::Editing { track: &track },
                &ctx.c0,
                &ctx.c1,
                &ctx.optim,
            )?;
            let outcome = edit(&ctx.world, &ctx.s, &source, &ctx.c0, &ctx.c1, &r.lambda_star, &opts)?;
            Ok((source, track, r, outcome))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut header = strings(&["source_seed", "reconstruction_error", "clip", "perc", "total"]);
    header.extend(optimization_header());
    let rows = seeds.iter().zip(&runs).map(|(seed, (_, _, r, o))| {
        let mut row = vec![seed.to_string(), num(o.diagnostics.reconstruction_error)];
        match o.diagnostics.loss {
            Some(l) => row.extend([num(l.clip), num(l.perc), num(l.total)]),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.extend(optimization_cells(r));
        row
    });
    out.write_csv("edit_summary.csv", &header, rows)?;

    let mut header = strings(&["source_seed", "role"]);
    header.extend(indexed("x", ctx.world.data_dim()));
    let labelled = seeds.iter().zip(&runs).flat_map(|(seed, (source, _, _, o))| {
        let mut v = vec![
            (seed.to_string(), "source", source),
            (seed.to_string(), "corrected", &o.diagnostics.corrected),
        ];
        if let Some(re) = &o.diagnostics.rediffused {
            v.push((seed.to_string(), "rediffused", re));
        }
        v.push((seed.to_string(), "edited", &o.edited));
        v
    });
    out.write_csv("edits.csv", &header, point_rows(labelled))?;

    for (seed, (_, track, r, _)) in seeds.iter().zip(&runs) {
        out.write_track(&format!("track_source{seed}.csv"), track)?;
        write_optimization(out, &format!("source{seed}"), r)?;
    }
    let sources: Vec<Vector> = runs.iter().map(|r| r.0.clone()).collect();
    let edited: Vec<Vector> = runs.iter().map(|r| r.3.edited.clone()).collect();
    ctx.render_pair(out, &sources, &edited)
}

fn transfer_recipe(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let train = ctx.cfg.seeds.noise[0];
    let r = ctx.optimize(train, &ctx.c0, &ctx.c1)?;
    write_optimization(out, &format!("seed{train}"), &r)?;
    let seeds = &ctx.cfg.seeds.transfer;
    let d = ctx.world.data_dim();
    let results = seeds
        .par_iter()
        .map(|seed| {
            let source = Source::noise(*seed, d);
            transfer(&ctx.world, &ctx.s, &r.lambda_star, source, &ctx.c0, &ctx.c1, ctx.optim.beta)
        })
        .collect::<softmix::Result<Vec<_>>>()?;
    // λ ≡ 0 reproduces the neutral output: clip 1 by convention, perc 0
    let baseline = 1.0;
    let rows = seeds.iter().zip(&results).map(|(seed, (_, rep))| {
        vec![
            seed.to_string(),
            num(rep.clip),
            num(rep.perc),
            num(rep.total),
            num(baseline),
            (rep.total < baseline).to_string(),
        ]
    });
    let header = strings(&["seed", "clip", "perc", "total", "neutral_total", "improved"]);
    out.write_csv("transfer.csv", &header, rows)?;
    let improved = results.iter().filter(|(_, rep)| rep.total < baseline).count();
    let summary = [vec![
        train.to_string(),
        seeds.len().to_string(),
        improved.to_string(),
        num(improved as f64 / seeds.len() as f64),
    ]];
    let header = strings(&["optimization_seed", "transfer_seeds", "improved", "success_rate"]);
    out.write_csv("transfer_summary.csv", &header, summary)?;
    let zero = softmix::MixingSchedule::constant(ctx.s.steps(), 0.0);
    let neutral = seeds.iter().map(|s| ctx.output(*s, &zero)).collect::<Result<Vec<_>>>()?;
    let edited: Vec<Vector> = results.into_iter().map(|(x, _)| x).collect();
    ctx.render_pair(out, &neutral, &edited)
}

fn robustness(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let c = &ctx.cfg.conditions;
    let w = &ctx.world;
    let mut variants: Vec<(String, f64, Condition, Condition)> = Vec::new();
    for &strength in &c.strengths {
        let (c0, c1) = w.condition_pair(&c.base, &c.attribute, strength)?;
        variants.push(("plain".into(), strength, c0, c1));
        for extra in &c.distractors {
            let c0 = w.compose(&c.base, &[(extra, 1.0)])?;
            let c1 = w.compose(&c.base, &[(extra, 1.0), (&c.attribute, strength)])?;
            variants.push((format!("with-{extra}"), strength, c0, c1));
        }
    }
    let seed = ctx.cfg.seeds.noise[0];
    let results = variants
        .par_iter()
        .map(|(_, _, c0, c1)| ctx.optimize(seed, c0, c1))
        .collect::<Result<Vec<_>>>()?;
    let reference = &results[0].lambda_star;
    let mut header = strings(&["variant", "strength"]);
    header.extend(optimization_header());
    header.push("cosine_to_first".into());
    let mut rows = Vec::new();
    for ((name, strength, _, _), r) in variants.iter().zip(&results) {
        let mut row = vec![name.clone(), num(*strength)];
        row.extend(optimization_cells(r));
        row.push(lambda_cosine(reference, &r.lambda_star).map(num).unwrap_or_default());
        rows.push(row);
    }
    out.write_csv("robustness.csv", &header, rows)?;
    for ((name, strength, _, _), r) in variants.iter().zip(&results) {
        write_optimization(out, &format!("{name}_s{strength}"), r)?;
    }
    Ok(())
}

fn lambda_analysis(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<()> {
    let seeds = &ctx.cfg.seeds.noise;
    let results = ctx.optimize_seeds(seeds)?;
    let mut header = strings(&["t"]);
    header.extend(seeds.iter().map(|s| format!("lambda_seed{s}")));
    let rows = (0..ctx.s.steps()).map(|i| {
        let mut row = vec![(i + 1).to_string()];
        row.extend(results.iter().map(|r| num(r.lambda_star.as_slice()[i])));
        row
    });
    out.write_csv("lambdas.csv", &header, rows)?;
    let mut rows = Vec::new();
    for i in 0..seeds.len() {
        for j in i + 1..seeds.len() {
            let cos = lambda_cosine(&results[i].lambda_star, &results[j].lambda_star)?;
            rows.push(vec![seeds[i].to_string(), seeds[j].to_string(), num(cos)]);
        }
    }
    out.write_csv("cosine.csv", &strings(&["seed_a", "seed_b", "cosine"]), rows)?;
    for (seed, r) in seeds.iter().zip(&results) {
        out.write_trace(&format!("trace_seed{seed}.csv"), &r.loss_trace)?;
    }
    Ok(())
}
