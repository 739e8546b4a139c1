#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use softmix::*;

pub const WORLD_SEED: u64 = 7;
pub const NOISE_SEED: u64 = 3;
pub const SOURCE_SEED: u64 = 11;
pub const REDIFFUSION_SEED: u64 = 5;
pub const T_PRIME: usize = 35;
pub const T_RE: usize = 20;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Fixture {
    pub world: ToyWorld,
    pub schedule: Schedule,
    pub c0: Condition,
    pub c1: Condition,
    pub x_t: Vector,
    pub source: Vector,
}

pub fn fixture() -> Fixture {
    let world = ToyWorld::build(WORLD_SEED, &WorldConfig::default()).unwrap();
    let schedule = Schedule::new(ScheduleParams::default(), 50).unwrap();
    let (c0, c1) = world.condition_pair("base-A", "attr-1", 1.0).unwrap();
    let x_t = sample_noise(NOISE_SEED, world.data_dim());
    let source = world.sample_data(&c0, SOURCE_SEED).unwrap().x;
    Fixture { world, schedule, c0, c1, x_t, source }
}

/// Long-format `name,index,value` rows at 17 significant digits.
pub fn rows(entries: &[(&str, Vec<f64>)]) -> String {
    let mut out = String::from("name,index,value\n");
    for (name, values) in entries {
        for (i, v) in values.iter().enumerate() {
            writeln!(out, "{name},{i},{v:.16e}").unwrap();
        }
    }
    out
}

pub fn read_rows(name: &str) -> BTreeMap<String, Vec<f64>> {
    let mut rdr = csv::Reader::from_path(fixture_path(name)).unwrap();
    let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let entry = map.entry(rec[0].to_string()).or_default();
        assert_eq!(rec[1].parse::<usize>().unwrap(), entry.len());
        entry.push(rec[2].parse().unwrap());
    }
    map
}

pub fn flat(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    // row-major
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

/// Every input the external oracle needs to rebuild the fixture.
pub fn world_dump(f: &Fixture) -> String {
    let p = f.world.parts();
    let mut entries: Vec<(String, Vec<f64>)> = vec![
        ("dims".into(), vec![
            f.world.data_dim() as f64,
            f.world.cond_dim() as f64,
            p.embed_matrix.nrows() as f64,
            f.world.components() as f64,
            p.perc_w1.nrows() as f64,
        ]),
        ("guidance".into(), vec![p.guidance]),
        ("weights".into(), p.weights.clone()),
        ("sigmas".into(), p.sigmas.clone()),
        ("null".into(), p.null_condition.as_slice().to_vec()),
        ("embed_matrix".into(), flat(&p.embed_matrix)),
        ("embed_bias".into(), p.embed_bias.as_slice().to_vec()),
        ("perc_w1".into(), flat(&p.perc_w1)),
        ("perc_b1".into(), p.perc_b1.as_slice().to_vec()),
        ("perc_w2".into(), flat(&p.perc_w2)),
        ("perc_b2".into(), p.perc_b2.as_slice().to_vec()),
        ("c0".into(), f.c0.vector.as_slice().to_vec()),
        ("c1".into(), f.c1.vector.as_slice().to_vec()),
        ("x_t".into(), f.x_t.as_slice().to_vec()),
        ("source".into(), f.source.as_slice().to_vec()),
        ("rediffusion_noise".into(), sample_noise(REDIFFUSION_SEED, f.world.data_dim()).as_slice().to_vec()),
    ];
    for (k, m) in p.maps.iter().enumerate() {
        entries.push((format!("map{k}"), flat(m)));
        entries.push((format!("offset{k}"), p.offsets[k].as_slice().to_vec()));
    }
    let refs: Vec<(&str, Vec<f64>)> = entries.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    rows(&refs)
}

pub fn assert_close(name: &str, got: &[f64], want: &[f64], rel: f64, abs: f64) {
    assert_eq!(got.len(), want.len(), "{name}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let tol = abs + rel * w.abs();
        assert!((g - w).abs() <= tol, "{name}[{i}]: got {g:e}, want {w:e}, tol {tol:e}");
    }
}
