use std::process::Command;

fn softmix() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softmix"))
}

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| softmix().args(args).env("SOFTMIX_OUTPUT_ROOT", dir.path()).status().unwrap().code();

    let ok = write_config(dir.path(), "[experiment]\nkind = \"sweep\"\n[seeds]\nnoise = [3]\n");
    assert_eq!(code(&["validate", ok.to_str().unwrap()]), Some(0));
    assert_eq!(code(&["version"]), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[conditions]\nbase = \"base-Q\"\n").unwrap();
    assert_eq!(code(&["validate", bad.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["run", bad.to_str().unwrap()]), Some(2));

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&["run", missing.to_str().unwrap()]), Some(5));

    // enormous extrapolation blows up the guided dynamics
    let diverge = dir.path().join("diverge.toml");
    std::fs::write(
        &diverge,
        "[experiment]\nkind = \"transfer\"\n[conditions]\nstrength = 1e200\n[optim]\niterations = 1\n[seeds]\nnoise = [1]\ntransfer = [2]\n",
    )
    .unwrap();
    assert_eq!(code(&["run", diverge.to_str().unwrap()]), Some(3));
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\nkind = \"sweep\"\nname = \"here\"\noutput_root = \"/nonexistent/elsewhere\"\n[seeds]\nnoise = [3]\n");
    let status = softmix()
        .args(["run", cfg.to_str().unwrap()])
        .env("SOFTMIX_OUTPUT_ROOT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("here/manifest.toml").exists());
    assert!(dir.path().join("here/sweep.csv").exists());
}

#[test]
fn render_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("d.pgm");
    let status = softmix()
        .args(["render", "density", "--step", "10", "--attribute", "attr-1=1.0", "--out", pgm.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&pgm).unwrap().starts_with("P2\n64 64\n255\n"));

    let input = dir.path().join("pts.csv");
    std::fs::write(&input, "seed,role,x0,x1\n1,neutral,0.5,0.5\n1,edited,-1,2\n").unwrap();
    let ppm = dir.path().join("p.ppm");
    let status = softmix()
        .args(["render", "points", input.to_str().unwrap(), "--out", ppm.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "x0,x1\n").unwrap();
    let status = softmix()
        .args(["render", "points", empty.to_str().unwrap(), "--out", ppm.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
