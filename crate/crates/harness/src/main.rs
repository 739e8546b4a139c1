use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softmix::{ScheduleParams, Schedule, ToyWorld, Vector, WorldConfig};
use softmix_harness::{
    render_density, render_points, ExperimentConfig, Grid, HarnessError, Overlay, Result,
};

/// Soft condition mixing in an analytic diffusion world.
///
/// Exit codes: 0 ok, 1 other failure, 2 invalid config, 3 numerical
/// divergence, 4 grid-oracle budget exceeded, 5 I/O error.
#[derive(Parser)]
#[command(name = "softmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Render a planar density or a point cloud.
    Render {
        #[command(subcommand)]
        what: RenderCommand,
    },
    /// Print the version.
    Version,
}

#[derive(clap::Args)]
struct GridArgs {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// x_min,x_max,y_min,y_max
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [-4.0, 4.0, -4.0, 4.0])]
    bounds: Vec<f64>,
}

impl GridArgs {
    fn grid(&self) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            x_min: self.bounds[0],
            x_max: self.bounds[1],
            y_min: self.bounds[2],
            y_max: self.bounds[3],
        }
    }
}

#[derive(Subcommand)]
enum RenderCommand {
    /// Density of a planar world as a PGM.
    Density {
        #[arg(long, default_value_t = 7)]
        world_seed: u64,
        #[arg(long, default_value = "base-A")]
        base: String,
        /// attr=strength, repeatable
        #[arg(long)]
        attribute: Vec<String>,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter of the x0,x1 columns of a CSV as a PPM; rows whose `role`
    /// column is `neutral` or `source` are red, the rest green.
    Points {
        input: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn render(cmd: RenderCommand) -> Result<()> {
    match cmd {
        RenderCommand::Density { world_seed, base, attribute, step, steps, grid, out } => {
            let world = ToyWorld::build(world_seed, &WorldConfig::planar())?;
            let s = Schedule::new(ScheduleParams::default(), steps)?;
            let mut attrs = Vec::new();
            for a in &attribute {
                let (label, strength) = a
                    .split_once('=')
                    .ok_or_else(|| HarnessError::Config(format!("expected attr=strength, got `{a}`")))?;
                let strength: f64 = strength
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("bad strength in `{a}`")))?;
                attrs.push((label, strength));
            }
            let c = world.compose(&base, &attrs)?;
            write(&out, &render_density(&world, &s, &c, step, &grid.grid())?)
        }
        RenderCommand::Points { input, grid, out } => {
            let mut rdr = csv::Reader::from_path(&input).map_err(|e| HarnessError::io(&input, e.into()))?;
            let headers = rdr.headers().map_err(|e| HarnessError::io(&input, e.into()))?.clone();
            let col = |name: &str| headers.iter().position(|h| h == name);
            let (x0, x1) = match (col("x0"), col("x1")) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(HarnessError::Render("input needs x0 and x1 columns".into())),
            };
            let role = col("role");
            let (mut neutral, mut edited) = (Vec::new(), Vec::new());
            for rec in rdr.records() {
                let rec = rec.map_err(|e| HarnessError::io(&input, e.into()))?;
                let parse = |i: usize| {
                    rec[i].parse::<f64>().map_err(|_| HarnessError::Render(format!("bad number `{}`", &rec[i])))
                };
                let p = Vector::from_vec(vec![parse(x0)?, parse(x1)?]);
                match role.map(|i| &rec[i]) {
                    Some("neutral" | "source") => neutral.push(p),
                    _ => edited.push(p),
                }
            }
            let overlays = [
                Overlay { points: &neutral, rgb: softmix_harness::render::NEUTRAL },
                Overlay { points: &edited, rgb: softmix_harness::render::EDITED },
            ];
            write(&out, &render_points(&overlays, &grid.grid())?)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = softmix_harness::run(&cfg)?;
            println!("{} artifacts in {}", summary.manifest.artifacts.len(), summary.dir.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.resolve()?;
            println!("ok: {} -> {}", cfg.experiment.kind.name(), cfg.output_dir().display());
        }
        Command::Render { what } => render(what)?,
        Command::Version => println!("softmix {}", softmix_harness::VERSION),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
