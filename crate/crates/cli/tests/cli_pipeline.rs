use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
meta_train { outer_steps = 2  batch = 2  pairs = 1  min_steps = 3  max_steps = 5  hidden = 4  bank = 2  checkpoint_every = 1 }
sweep { optimizers = ["adam"]  lrs = [0.1, 0.01]  steps = 10  seeds = [0, 1] }
evaluation { steps = 10  seeds = [0, 1] }
continuation { modes = ["naive", "increase_steps"]  t1 = 4  t2 = 3 }
batch_sweep { examples = 64  batch_sizes = [8, 16]  optimizers = ["adam", "velo"] }
timing { params = [100, 1000, 10000]  reps = 3 }
worker { cache_size = 1  max_gradients = 4 }
family "ImageMLP" {
  static { hidden_sizes = [4]  image_size = 4  batch_size = 8  num_classes = 10  dataset = "synthetic:0" }
  dynamic { activation = "relu"  initializer = "normal"  init_scale = 1.0 }
}
"#;

fn velo(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_velo")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "velo {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let common = ["--config", s(&cfg), "--out", s(&out)];

    velo(&[&["meta-train"][..], &common, &["--seed", "3"]].concat());
    let theta = out.join("theta.theta");
    assert!(theta.exists() && out.join("ckpt/step_2.theta").exists());
    assert_eq!(std::fs::read_to_string(out.join("meta_train.jsonl")).unwrap().lines().count(), 2);

    velo(&[&["baseline-sweep"][..], &common].concat());
    velo(&[&["apply"][..], &common, &["--theta", s(&theta)]].concat());
    velo(&[&["normalize"][..], &common].concat());
    let sp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("speedups.json")).unwrap()).unwrap();
    assert_eq!(sp["optimizers"]["velo"].as_object().unwrap().len(), 1);
    let report = velo(&[&["report"][..], &common].concat());
    assert!(String::from_utf8_lossy(&report.stdout).starts_with("optimizer,tasks,mean_speedup"));
    for f in ["report.csv", "report.json", "report.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }

    velo(&[&["continue"][..], &common, &["--theta", s(&theta)]].concat());
    let cont: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("continuation.json")).unwrap()).unwrap();
    assert_eq!(cont.as_array().unwrap().len(), 2);

    velo(&[&["batch-sweep"][..], &common, &["--theta", s(&theta)]].concat());
    assert_eq!(std::fs::read_to_string(out.join("batch_sweep.csv")).unwrap().lines().count(), 5);

    velo(&[&["fit-timing"][..], &common, &["--theta", s(&theta)]].concat());
    assert!(out.join("timing.json").exists());
}

#[test]
fn learner_and_worker_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("learner");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut learner = Command::new(env!("CARGO_BIN_EXE_velo"))
        .args(["serve-learner", "--config", s(&cfg), "--out", s(&out), "--listen", &addr])
        .spawn()
        .unwrap();
    let worker = velo(&["run-worker", "--config", s(&cfg), "--learner", &addr, "--seed", "1"]);
    let stats: serde_json::Value = serde_json::from_slice(&worker.stdout).unwrap();
    assert_eq!(stats["submitted"], 4);
    assert!(learner.wait().unwrap().success());
    assert!(out.join("theta.theta").exists());
    assert!(out.join("learner.jsonl").exists());
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "meta_train { sigma = }").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_velo"))
        .args(["meta-train", "--config", s(&cfg)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
