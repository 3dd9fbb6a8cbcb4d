use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn riskcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskcast"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RISKCAST_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn scenario_files(dir: &Path) -> Vec<PathBuf> {
    listing(dir).into_iter().filter(|p| p.file_name().unwrap() != "run_config.json").collect()
}

const SMALL_MODEL: [&str; 8] = [
    "--set",
    "model.interaction.embed_dim=16",
    "--set",
    "model.decoder.hidden=16",
    "--set",
    "train.stage1_epochs=1",
    "--set",
    "model.decoder.prob_hidden=16",
];

#[test]
fn gen_writes_requested_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = riskcast(&["gen", "--template", "straight", "--count", "10", "--seed", "1", "--out", "d/"], tmp.path());
    ok(&out);
    let dir = tmp.path().join("d");
    assert_eq!(scenario_files(&dir).len(), 10);
    assert!(dir.join("run_config.json").is_file());
    for p in scenario_files(&dir) {
        let scn = riskcast::scene::Scenario::load(&p).unwrap();
        assert_eq!(scn.template, Some(riskcast::scene::Template::Straight));
    }
    assert_eq!(listing(tmp.path()), vec![dir]);
}

#[test]
fn missing_input_exits_one_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = riskcast(&["predict", "--model", "m.ckpt", "--scenario", "missing.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("m.ckpt"), "{err}");

    let gen = riskcast(&["gen", "--count", "1", "--out", "d"], tmp.path());
    ok(&gen);
    let out = riskcast(&["risk", "--scenario", "missing.json", "--model", "m.ckpt", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn invalid_input_file_exits_one_with_reason() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"dt": 0.1}"#).unwrap();
    let out = riskcast(&["eval", "--data", "bad.json", "--model", "m", "--out", "e"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("missing field"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen", "--bogus"],
        vec!["frobnicate"],
        vec![],
        vec!["gen", "--set", "train.learning_rate=1"],
        vec!["gen", "--set", "noequals"],
        vec!["gen", "--template", "roundabout"],
        vec!["predict", "--scenario", "x.json"],
    ] {
        let out = riskcast(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(listing(tmp.path()).is_empty());
}

#[test]
fn env_seed_sits_below_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed_env: &str, args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_riskcast"))
            .args(args)
            .current_dir(tmp.path())
            .env("RISKCAST_SEED", seed_env)
            .output()
            .unwrap();
        ok(&out);
    };
    run("4", &["gen", "--count", "1", "--out", "a"]);
    run("5", &["gen", "--count", "1", "--out", "b", "--seed", "4"]);
    let read = |d: &str| fs::read(tmp.path().join(d).join("scenario_00000.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    let cfg: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 4);
}

#[test]
fn pipeline_end_to_end_and_reproducible_from_run_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(&riskcast(&["gen", "--count", "10", "--agents", "2", "--seed", "3", "--out", "data"], cwd));

    let mut train = vec!["train", "--data", "data", "--epochs", "2", "--batch-size", "4", "--out", "run"];
    train.extend(SMALL_MODEL);
    ok(&riskcast(&train, cwd));
    for f in ["train_log.csv", "model.ckpt.json", "epoch_0002.ckpt.json", "train_report.json", "run_config.json"] {
        assert!(cwd.join("run").join(f).is_file(), "{f}");
    }

    ok(&riskcast(&["predict", "--model", "run/model.ckpt.json", "--scenario", "data", "--out", "pred"], cwd));
    let preds: Vec<_> =
        listing(&cwd.join("pred")).into_iter().filter(|p| p.to_string_lossy().ends_with(".prediction.json")).collect();
    assert_eq!(preds.len(), 10);
    let csv = fs::read_to_string(cwd.join("pred/predictions.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,agent_id,mode_k,t,x,y,p_k"));

    ok(&riskcast(&["risk", "--scenario", "data", "--predictions", "pred", "--out", "risk"], cwd));
    let risk_files: Vec<_> =
        listing(&cwd.join("risk")).into_iter().filter(|p| p.to_string_lossy().ends_with(".risk.json")).collect();
    assert_eq!(risk_files.len(), 10);
    let reports: Vec<riskcast::risk::RiskReport> = serde_json::from_slice(&fs::read(&risk_files[0]).unwrap()).unwrap();
    let mut ranks: Vec<usize> = reports.iter().map(|r| r.rank).collect();
    ranks.sort();
    assert_eq!(ranks, (1..=reports.len()).collect::<Vec<_>>());

    ok(&riskcast(&["eval", "--data", "data", "--predictions", "pred", "--out", "eval"], cwd));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(cwd.join("eval/metrics.json")).unwrap()).unwrap();
    let text = json.to_string();
    assert!(text.contains("constant_velocity") && text.contains("\"model\""), "{text}");
    assert!(!fs::read_to_string(cwd.join("eval/metrics.csv")).unwrap().is_empty());

    ok(&riskcast(&["eval", "--data", "data", "--model", "run/model.ckpt.json", "--out", "eval_model"], cwd));
    assert_eq!(
        fs::read(cwd.join("eval/metrics.json")).unwrap(),
        fs::read(cwd.join("eval_model/metrics.json")).unwrap()
    );

    ok(&riskcast(&["gen", "--config", "data/run_config.json", "--out", "data2"], cwd));
    ok(&riskcast(&["train", "--config", "run/run_config.json", "--out", "run2"], cwd));
    for (a, b) in [("data", "data2"), ("run", "run2")] {
        let (la, lb) = (listing(&cwd.join(a)), listing(&cwd.join(b)));
        assert_eq!(la.len(), lb.len());
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
    }

    let mut names: Vec<_> = listing(cwd).into_iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    names.sort();
    assert_eq!(names, ["data", "data2", "eval", "eval_model", "pred", "risk", "run", "run2"]);
}
