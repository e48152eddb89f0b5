use std::path::Path;
use std::process::{Command, Output};

fn reselm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reselm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> (String, String, String) {
    let out = dir.join("data");
    let o = reselm(&[
        "gen-synth",
        "--subjects",
        "60",
        "--modality",
        "a:30:6",
        "--modality",
        "b:20:0",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (
        p(&out.join("features.csv")).to_string(),
        p(&out.join("labels.csv")).to_string(),
        p(&out.join("blocks.json")).to_string(),
    )
}

#[test]
fn help_exits_zero() {
    let o = reselm(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-synth", "fc", "train", "prune", "evaluate", "sweep", "diagnose", "verify"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    assert_eq!(code(&reselm(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&reselm(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&reselm(&[])), 1);
    assert_eq!(code(&reselm(&["train", "--model", "svm"])), 1);
    // A missing required value is a validation error, not an I/O error.
    assert_eq!(code(&reselm(&["train", "--labels", "x.csv"])), 1);
}

#[test]
fn missing_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let o = reselm(&["train", "--features", p(&missing), "--labels", p(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    let l = dir.path().join("l.csv");
    std::fs::write(&f, "f0,f1\n1,2\n3\n").unwrap();
    std::fs::write(&l, "label\n1\n2\n").unwrap();
    assert_eq!(code(&reselm(&["train", "--features", p(&f), "--labels", p(&l)])), 1);
}

#[test]
fn full_sparsity_res_elm_matches_elm() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l, _) = synth(dir.path());
    let run = |model: &str, sp: &str| {
        let o = reselm(&[
            "train", "--features", &f, "--labels", &l, "--model", model, "--sp", sp, "--neurons", "40", "--seed",
            "9",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        json(&o)
    };
    let elm = run("elm", "100");
    let res = run("res-elm", "100");
    assert_eq!(res["retained"], 40);
    assert_eq!(elm["training_accuracy"], res["training_accuracy"]);
}

#[test]
fn train_save_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l, b) = synth(dir.path());
    let model = dir.path().join("m.bin");
    let o = reselm(&[
        "train", "--features", &f, "--labels", &l, "--blocks", &b, "--neurons", "50", "--sp", "20", "--out",
        p(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trained = json(&o);
    assert_eq!(trained["retained"], 10);
    let shares = trained["attribution"].as_array().unwrap();
    assert_eq!(shares.len(), 2);
    let total: f64 = shares.iter().map(|s| s["fraction"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let preds = dir.path().join("pred.csv");
    let o = reselm(&["evaluate", "--features", &f, "--labels", &l, "--model-file", p(&model), "--out", p(&preds)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["accuracy"], trained["training_accuracy"]);
    let written = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(written.lines().count(), 61);

    std::fs::write(&model, b"garbage").unwrap();
    let o = reselm(&["evaluate", "--features", &f, "--labels", &l, "--model-file", p(&model)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l, _) = synth(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "rp-elm", "neurons": 50, "sp": 30, "seed": 4}"#).unwrap();
    let o = reselm(&["prune", "--config", p(&cfg), "--features", &f, "--labels", &l, "--neurons", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["model"], "RP_ELM");
    assert_eq!(v["neurons"], 20);
    assert_eq!(v["selected"].as_array().unwrap().len(), 6);

    std::fs::write(&cfg, r#"{"nonsense": 1}"#).unwrap();
    assert_eq!(code(&reselm(&["prune", "--config", p(&cfg), "--features", &f, "--labels", &l])), 1);
}

#[test]
fn fc_writes_upper_triangle_features() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for s in 0..3u64 {
        let path = dir.path().join(format!("tc{s}.csv"));
        let mut text = String::new();
        for c in 0..100u64 {
            let row: Vec<String> = (0..12u64)
                .map(|t| format!("{}", (((c + 1) * (t + 3) * (s + 7)) % 23) as f64 / 7.0))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        inputs.push(path);
    }
    let out = dir.path().join("fc.csv");
    let mut args = vec!["fc", "--components", "100", "--out", p(&out), "--input"];
    args.extend(inputs.iter().map(|x| p(x)));
    let o = reselm(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 4950);
    assert_eq!(lines.count(), 3);

    let o = reselm(&["fc", "--components", "50", "--out", p(&out), "--input", p(&inputs[0])]);
    assert_eq!(code(&o), 1);
}

#[test]
fn fc_binarises_ages() {
    let dir = tempfile::tempdir().unwrap();
    let ages = [20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];
    let mut args: Vec<String> = vec!["fc".into()];
    for (s, _) in ages.iter().enumerate() {
        let path = dir.path().join(format!("tc{s}.csv"));
        std::fs::write(&path, format!("1,2,3,{s}\n0,5,1,2\n4,4,{s},1\n")).unwrap();
        args.push("--input".into());
        args.push(p(&path).into());
    }
    let ages_path = dir.path().join("ages.csv");
    let body: Vec<String> = ages.iter().map(|a| a.to_string()).collect();
    std::fs::write(&ages_path, format!("age\n{}\n", body.join("\n"))).unwrap();
    let feats = dir.path().join("x.csv");
    let labels = dir.path().join("y.csv");
    args.extend(
        [
            "--ages",
            p(&ages_path),
            "--z-cut",
            "1",
            "--labels-out",
            p(&labels),
            "--out",
            p(&feats),
        ]
        .map(String::from),
    );
    let o = reselm(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Sample std of the ages is ~10.8, so only 20 and 50 lie beyond one z.
    assert_eq!(std::fs::read_to_string(&labels).unwrap(), "label\n1\n2\n");
    let x = std::fs::read_to_string(&feats).unwrap();
    assert_eq!(x.lines().count(), 3);
    assert_eq!(x.lines().next().unwrap().split(',').count(), 3);
}

#[test]
fn sweep_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l, _) = synth(dir.path());
    let report = dir.path().join("report.json");
    let o = reselm(&[
        "sweep", "--features", &f, "--labels", &l, "--neurons", "30", "--sp", "10,20", "--epsilon", "1e-8", "--z",
        "1", "--reps", "2", "--name", "synthetic", "--out", p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["best"].as_array().unwrap().len(), 3);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["config"]["repetitions"], 2);
    let table = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("synthetic,"));
    assert_eq!(std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap().lines().count(), 2);
    assert!(dir.path().join("report.timings.json").exists());

    // Same seed, sequential scheduling: identical report bytes.
    let again = dir.path().join("again.json");
    let o = reselm(&[
        "sweep", "--features", &f, "--labels", &l, "--neurons", "30", "--sp", "10,20", "--epsilon", "1e-8", "--z",
        "1", "--reps", "2", "--name", "synthetic", "--sequential", "--out", p(&again),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn diagnose_reports_curve_and_pruning() {
    let dir = tempfile::tempdir().unwrap();
    let (f, l, _) = synth(dir.path());
    let out = dir.path().join("diag.json");
    let o = reselm(&[
        "diagnose", "--features", &f, "--labels", &l, "--neurons", "20,80", "--sp", "25", "--trials", "2", "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let curve = v["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 2);
    // 60 subjects cannot support 80 independent neurons.
    assert!(curve[1]["retained_rank"].as_u64().unwrap() <= 60);
    assert!(curve[1]["relative_deviation"].as_f64().unwrap() > 0.0);
    let pruning = v["pruning"].as_array().unwrap();
    assert_eq!(pruning.len(), 2);
    assert_eq!(pruning[0]["retained"], 20);
}

#[test]
fn verify_small_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let o = reselm(&["verify", "--trials", "4", "--interlacing-trials", "4", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["monotonicity"]["violations"], 0);
    assert_eq!(v["interlacing"]["violations"], 0);
}
