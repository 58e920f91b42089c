use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleet_core::scenes::bundled_scene;
use fleet_core::{start_session, Mode, SessionConfig};

fn fleet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenes")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_bundled_scene_files() {
    let house = scenes_dir().join("house.toml");
    let out = fleet(&["validate", house.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("house min_steps=3"));
}

#[test]
fn validate_rejects_broken_files_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "format = \"fleet-scenario/9\"\n").unwrap();
    assert_eq!(fleet(&["validate", bad.to_str().unwrap()]).status.code(), Some(2));

    // A wrong min_steps claim is a validation failure too.
    let text = std::fs::read_to_string(scenes_dir().join("house.toml")).unwrap();
    let lying = dir.path().join("lying.toml");
    std::fs::write(
        &lying,
        text.replace("min_steps = 3", "min_steps = 2")
            .replace("manual = \"manuals/a4wd3.md\"", ""),
    )
    .unwrap();
    let out = fleet(&["validate", lying.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("takes 3"));
}

#[test]
fn strict_ablation_over_bundled_scenes_passes() {
    let out = fleet(&[
        "ablate", "--scenes", "bundled", "--reps", "10", "--seed", "1", "--strict",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Full (reference)"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn strict_ablation_fails_with_exit_3_when_ordering_breaks() {
    // An exception that fires after the work is done: the scene counts as
    // exception-bearing, yet every mode succeeds, so Full cannot strictly
    // beat NoHumanNoVerify.
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenes_dir().join("house.toml")).unwrap();
    let text = text.replace("manual = \"manuals/a4wd3.md\"", "")
        + "\n[[exceptions]]\nrobot = \"Dog1\"\ntick = 50\nkind = \"terrain_block\"\ndetail = \"late debris\"\n";
    std::fs::write(dir.path().join("house.toml"), text).unwrap();
    let scenes = dir.path().to_str().unwrap();

    let strict = fleet(&["ablate", "--scenes", scenes, "--reps", "2", "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
    assert!(stdout(&strict).contains("strict [FAIL]"));
    assert_eq!(
        fleet(&["ablate", "--scenes", scenes, "--reps", "2"]).status.code(),
        Some(0)
    );
}

#[test]
fn run_writes_bundles_that_replay_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = fleet(&[
        "run",
        "--scenes",
        "bundled",
        "--mode",
        "no-human-no-verify",
        "--seed",
        "3",
        "--reps",
        "2",
        "--format",
        "jsonl",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // One line per scene plus the average row.
    assert_eq!(stdout(&out).lines().count(), 6);

    let index = std::fs::read_to_string(out_dir.join("bundles.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = index.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 10);
    for entry in entries.iter().step_by(3) {
        let bundle = entry["bundle"].as_str().unwrap();
        let replayed = fleet(&["replay", bundle]);
        assert_eq!(replayed.status.code(), Some(0));
        assert_eq!(
            stdout(&replayed).trim(),
            format!("report_sha256 {}", entry["report_sha256"].as_str().unwrap())
        );
    }
}

#[test]
fn tampered_bundles_and_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let house = scenes_dir().join("house.toml");
    let out = fleet(&["run", house.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let path = out_dir.join("run1.bundle");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"seed\": 1", "\"seed\": 2")).unwrap();
    assert_eq!(fleet(&["replay", path.to_str().unwrap()]).status.code(), Some(4));

    std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
    assert_eq!(fleet(&["replay", path.to_str().unwrap()]).status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, "not a checkpoint").unwrap();
    assert_eq!(fleet(&["replay", junk.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn checkpoint_replay_matches_an_uninterrupted_run() {
    let scenario = bundled_scene("office").unwrap().unwrap();
    let config = SessionConfig::new(Mode::Full, 2);
    let expected = start_session(config.clone(), &scenario).unwrap().run_to_completion();

    let mut session = start_session(config, &scenario).unwrap();
    for _ in 0..5 {
        session.step();
    }
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("office.ckpt");
    std::fs::write(&ckpt, session.checkpoint()).unwrap();

    let out = fleet(&["replay", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out).trim(),
        format!("report_sha256 {}", fleet_core::session::report_hash(&expected))
    );
}

#[test]
fn csv_report_is_stable_across_invocations() {
    let args = ["run", "--scenes", "bundled", "--reps", "3", "--format", "csv"];
    let a = fleet(&args);
    let b = fleet(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let summary = fleet_core::bench::parse_csv(&stdout(&a)).unwrap();
    assert_eq!(summary.scenes.len(), 5);
}

#[test]
fn usage_errors_are_nonzero() {
    assert_eq!(fleet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fleet(&["run"]).status.code(), Some(1));
    assert_eq!(
        fleet(&["run", "--scenes", "bundled", "--mode", "solo"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fleet(&["run", "--scenes", "bundled", "--format", "xml"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fleet(&["run", "--scenes", "bundled", "--backend", "external"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(fleet(&["--help"]).status.code(), Some(0));
}

#[test]
fn planner_credential_never_reaches_the_output() {
    let secret = "fleet-test-credential-7f3a";
    let out = Command::new(env!("CARGO_BIN_EXE_fleet"))
        .args([
            "-vv",
            "run",
            "--scenes",
            "bundled",
            "--backend",
            "external",
            "--backend-cmd",
            "/bin/false",
        ])
        .env(fleet_core::planner::CREDENTIAL_ENV, secret)
        .output()
        .unwrap();
    let all = format!("{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(all.contains("credential_present=true"), "{all}");
    assert!(!all.contains(secret));
}
