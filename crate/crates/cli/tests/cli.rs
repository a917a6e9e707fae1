use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skelnas::controller::planted_benchmark;
use skelnas::searchspace::encode_config;

fn skelnas() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skelnas"));
    cmd.env_remove("SKELNAS_OUTPUT_DIR");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn skelnas");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn desk_space() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs/search_space_desk.toml")
}

fn corpus(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.skl");
    let out = run(skelnas().args(["gen-data", "--frames", "32", "--samples-per-subject", "6", "--out"]).arg(&path));
    assert!(stdout(&out).contains("wrote 60 samples"));
    path
}

fn tiny_search(dataset: &Path) -> Command {
    let mut cmd = skelnas();
    cmd.args(["search", "--rollouts", "2", "--cycles", "1", "--student-epochs", "1", "--argmax-epochs", "1"])
        .arg("--dataset")
        .arg(dataset)
        .arg("--space")
        .arg(desk_space());
    cmd
}

#[test]
fn search_export_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path());
    let run_dir = dir.path().join("run");
    let out = run(tiny_search(&data).env("SKELNAS_OUTPUT_DIR", &run_dir));
    let table = stdout(&out);
    assert!(table.starts_with("Rollouts"), "{table}");
    assert!(table.contains("1st update"));
    let events: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events.first().unwrap()["event"], "start");
    assert_eq!(events.last().unwrap()["event"], "finish");
    for name in ["state.json", "log.jsonl", "search_table.txt", "best_config.toml", "argmax_cycle1.skm"] {
        assert!(run_dir.join(name).exists(), "{name}");
    }

    let csv = dir.path().join("history.csv");
    let out = run(skelnas().args(["export-history", "--state"]).arg(&run_dir).arg("--out").arg(&csv));
    assert!(stdout(&out).starts_with("wrote "));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 1);

    let out = run(skelnas()
        .args(["eval", "--checkpoint"])
        .arg(run_dir.join("argmax_cycle1.skm"))
        .arg("--dataset")
        .arg(&data));
    assert!(stdout(&out).starts_with("accuracy "), "{}", stdout(&out));

    let out = run(skelnas()
        .args(["train-argmax", "--argmax-epochs", "1", "--config"])
        .arg(run_dir.join("best_config.toml"))
        .arg("--dataset")
        .arg(&data)
        .arg("--space")
        .arg(desk_space())
        .arg("--out")
        .arg(dir.path().join("again.skm")));
    assert!(stdout(&out).contains("saved "));
    assert!(dir.path().join("again.skm").exists());
}

#[test]
fn planted_search_needs_no_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (space, planted) = planted_benchmark();
    let space_path = dir.path().join("space.toml");
    std::fs::write(&space_path, space.to_toml_string()).unwrap();
    let planted_path = dir.path().join("planted.toml");
    std::fs::write(&planted_path, encode_config(&space, &planted).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(skelnas()
        .args(["search", "--rollouts", "10", "--cycles", "5", "--space"])
        .arg(&space_path)
        .arg("--planted")
        .arg(&planted_path)
        .arg("--output-dir")
        .arg(&out_dir));
    assert!(stdout(&out).starts_with("Rollouts"));

    let out = run(skelnas()
        .args(["random-search", "--rollouts", "10", "--cycles", "5", "--space"])
        .arg(&space_path)
        .arg("--planted")
        .arg(&planted_path)
        .arg("--output-dir")
        .arg(&out_dir));
    let table = stdout(&out);
    assert!(table.contains("Random search") && table.contains("Controller search"), "{table}");
    assert!(table.contains("50 iterations"));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_search(&dir.path().join("missing.skl")).arg("--output-dir").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = skelnas().args(["search", "--rollouts", "0", "--output-dir"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());

    let out = skelnas().args(["eval", "--protocol", "diagonal"]).output().unwrap();
    assert!(!out.status.success());
}
