use std::path::Path;
use std::process::{Command, Output};

use simloop::manifest::Manifest;
use simloop::stages::Stage;

fn simloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simloop"))
        .args(args)
        .env_remove("SIMLOOP_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn make_fixture(root: &Path) -> std::path::PathBuf {
    let bundle = root.join("bundle");
    let o = simloop(&["make-fixture", "--out", s(&bundle)]);
    assert!(o.status.success(), "{}", stderr(&o));
    bundle
}

#[test]
fn offset_below_one_is_rejected_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = make_fixture(dir.path());
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[domain]\nC = 0.5\n").unwrap();
    let out = dir.path().join("out");
    let o = simloop(&["pipeline", "--config", s(&cfg), "--bundle", s(&bundle), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("C >= 1"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_domain_names_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = make_fixture(dir.path());
    let out = dir.path().join("out");
    let o = simloop(&["pipeline", "--stage", "simulate", "--bundle", s(&bundle), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[simulate]") && err.contains("init-domain") && err.contains("domain.json"), "{err}");
}

#[test]
fn exit_codes_for_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = simloop(&["ingest", "--bundle", s(&missing), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = simloop(&["ingest", "--bundle", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let unknown = dir.path().join("a.xyz");
    std::fs::write(&unknown, "x").unwrap();
    assert_eq!(simloop(&["inspect", s(&unknown)]).status.code(), Some(2));
    let o = simloop(&["make-fixture", "--out", s(&dir.path().join("f")), "--composition", "granite"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn fixture_pipeline_runs_every_stage_and_stages_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = make_fixture(dir.path());
    let out = dir.path().join("out");
    let o = simloop(&["pipeline", "--bundle", s(&bundle), "--out", s(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.stages.iter().map(|e| e.stage).collect::<Vec<_>>(), Stage::PIPELINE.to_vec());
    let frames = 25;
    for (dir, ext, count) in [
        ("render", "png", frames),
        ("mask", "png", frames),
        ("depth", "f32", frames),
        ("corr", "bin", frames - 1),
        ("sim_flow", "flo", frames - 1),
        ("flow", "flo", frames - 1),
        ("targets", "src.png", frames - 1),
    ] {
        let n = std::fs::read_dir(out.join(dir))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(&format!(".{ext}")))
            .count();
        assert_eq!(n, count, "{dir}");
    }

    // Rerunning a stage with unchanged inputs reproduces its outputs.
    let o = simloop(&["render", "--bundle", s(&bundle), "--out", s(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(again.output_hashes(), manifest.output_hashes());
    let render = |m: &Manifest| m.stages.iter().find(|e| e.stage == Stage::Render).unwrap().inputs_hash.clone();
    assert_eq!(render(&again), render(&manifest));

    let o = simloop(&["eval-loss", "--bundle", s(&bundle), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("L_TTCO"), "{table}");
    assert_eq!(table.lines().count(), 1 + (frames - 1) + 1);

    let o = simloop(&["inspect", s(&out.join("trajectory.bin"))]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("particles, 25 frames, 24 fps"), "{text}");
    let o = simloop(&["inspect", s(&out.join("flow/0003.flo"))]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("magnitude (px): mean"));
    let o = simloop(&["inspect", s(&out.join("corr/0003.bin"))]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("correspondences"));
}
