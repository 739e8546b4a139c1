//! Artifact emission: CSV at 17 significant digits, and a TOML manifest that
//! records the config, seeds, checksums and timings of a run.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use softmix::{InversionTrack, LossReport, MixingSchedule, Schedule, Trajectory};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.toml";

/// Formats a float with 17 significant digits so it round-trips exactly.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files into one run directory and remembers their checksums.
pub struct ArtifactWriter {
    dir: PathBuf,
    records: Vec<ArtifactRecord>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.records
    }

    pub fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, data).map_err(|e| HarnessError::io(&path, e))?;
        self.records.push(ArtifactRecord {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len(),
        });
        Ok(())
    }

    pub fn write_csv<I, R>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| HarnessError::io(self.dir.join(name), e.into());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let data = w.into_inner().map_err(|e| HarnessError::io(self.dir.join(name), e.into_error()))?;
        self.write_bytes(name, &data)
    }

    /// `t, alpha, gamma0, gamma1`; the coefficients are empty at `t = 0`.
    pub fn write_schedule(&mut self, name: &str, s: &Schedule) -> Result<()> {
        let rows = (0..=s.steps()).map(|t| {
            let mut row = vec![t.to_string(), num(s.alphas()[t])];
            match s.gamma(t) {
                Ok((g0, g1)) => row.extend([num(g0), num(g1)]),
                Err(_) => row.extend([String::new(), String::new()]),
            }
            row
        });
        self.write_csv(name, &strings(&["t", "alpha", "gamma0", "gamma1"]), rows)
    }

    /// `t, lambda`
    pub fn write_lambda(&mut self, name: &str, lambda: &MixingSchedule) -> Result<()> {
        let rows = lambda
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), num(*v)]);
        self.write_csv(name, &strings(&["t", "lambda"]), rows)
    }

    /// One row per iteration, iteration 0 being the initialization.
    pub fn write_trace(&mut self, name: &str, trace: &[LossReport]) -> Result<()> {
        let rows = trace
            .iter()
            .enumerate()
            .map(|(i, r)| vec![i.to_string(), num(r.clip), num(r.perc), num(r.total)]);
        self.write_csv(name, &strings(&["iteration", "clip", "perc", "total"]), rows)
    }

    /// `t, condition label, x_0..x_{d−1}`; the condition column is empty at `t = T`.
    pub fn write_trajectory(&mut self, name: &str, traj: &Trajectory) -> Result<()> {
        let d = traj.output().len();
        let mut header = strings(&["t", "condition"]);
        header.extend(indexed("x", d));
        let steps = traj.conditions.len();
        let rows = (0..=steps).rev().map(|t| {
            let label = if t == steps { String::new() } else { traj.conditions[t].label.clone() };
            let mut row = vec![t.to_string(), label];
            row.extend(traj.states[t].iter().map(|v| num(*v)));
            row
        });
        self.write_csv(name, &header, rows)
    }

    /// `t, x̂_t…, E_t…, ‖E_t‖`; the correction columns are empty at `t = 0`.
    pub fn write_track(&mut self, name: &str, track: &InversionTrack) -> Result<()> {
        let d = track.source().len();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("x", d));
        header.extend(indexed("e", d));
        header.push("e_norm".into());
        let rows = (0..=track.steps()).map(|t| {
            let mut row = vec![t.to_string()];
            row.extend(track.states[t].iter().map(|v| num(*v)));
            if t == 0 {
                row.extend(std::iter::repeat_n(String::new(), d + 1));
            } else {
                let e = &track.corrections.terms[t - 1];
                row.extend(e.iter().map(|v| num(*v)));
                row.push(num(e.norm()));
            }
            row
        });
        self.write_csv(name, &header, rows)
    }

    /// Writes `manifest.toml`; the manifest itself is not checksummed.
    pub fn finish(self, config: &ExperimentConfig, world_digest: &[u8; 32], timings: &[(String, Duration)]) -> Result<Manifest> {
        let manifest = Manifest {
            version: crate::VERSION.to_string(),
            experiment: config.experiment.kind.name().to_string(),
            world_digest: hex::encode(world_digest),
            seeds: SeedEcho {
                world: config.world.seed,
                noise: config.seeds.noise.clone(),
                transfer: config.seeds.transfer.clone(),
                source: config.seeds.source.clone(),
                rediffusion: config.seeds.rediffusion,
            },
            timings: timings
                .iter()
                .map(|(phase, d)| Timing {
                    phase: phase.clone(),
                    seconds: d.as_secs_f64(),
                })
                .collect(),
            artifacts: self.records,
            config: config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| HarnessError::Config(e.to_string()))?;
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedEcho {
    pub world: u64,
    pub noise: Vec<u64>,
    pub transfer: Vec<u64>,
    pub source: Vec<u64>,
    pub rediffusion: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub experiment: String,
    pub world_digest: String,
    pub seeds: SeedEcho,
    pub timings: Vec<Timing>,
    pub artifacts: Vec<ArtifactRecord>,
    pub config: ExperimentConfig,
}

pub fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `prefix0, prefix1, …`
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use softmix::ScheduleParams;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 7.5, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn checksums_match_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path()).unwrap();
        let s = Schedule::new(ScheduleParams::default(), 5).unwrap();
        w.write_schedule("schedule.csv", &s).unwrap();
        w.write_lambda("lambda.csv", &MixingSchedule::constant(5, 0.25)).unwrap();
        for r in w.records() {
            let data = std::fs::read(dir.path().join(&r.name)).unwrap();
            assert_eq!(hex::encode(Sha256::digest(&data)), r.sha256);
            assert_eq!(data.len(), r.bytes);
        }
        let text = std::fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("t,alpha,gamma0,gamma1\n0,1.0000000000000000e0,,\n"));
    }
}
