use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn invoamc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invoamc"))
        .args(args)
        .output()
        .expect("spawn invoamc")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SPEC: &str = r#"{
    "formats": ["BPSK", "QPSK", "QAM16"],
    "n": 64,
    "frames_per_format_per_snr": 10,
    "snr_list_db": [-4, 8, 20]
}"#;

const CONFIG: &str = r#"{
    "model": {
        "stem_channels": 8,
        "pyramid": [{"channels": 16, "downsample": true}],
        "num_classes": 3
    },
    "sgd": {"epochs": 2, "batch_size": 8}
}"#;

#[test]
fn params_on_default_config() {
    let o = invoamc(&["params"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let field = |key: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or_else(|| panic!("no {key} in {out}"))
            .trim()
            .parse()
            .unwrap()
    };
    let inv = field("involution_params");
    let conv = field("convolution_params");
    let frac = field("reduction_fraction");
    assert!(inv < conv);
    assert!((0.0..=1.0).contains(&frac));
    assert!((frac - (1.0 - inv / conv)).abs() < 1e-6);
}

#[test]
fn params_accepts_model_or_training_config() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(&model, r#"{"groups": 2}"#).unwrap();
    let full = dir.path().join("train.json");
    fs::write(&full, r#"{"model": {"groups": 2}}"#).unwrap();
    let a = invoamc(&["params", "--config", p(&model)]);
    let b = invoamc(&["params", "--config", p(&full)]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&invoamc(&["params"])));
}

#[test]
fn gradcheck_passes_on_a_fresh_build() {
    let o = invoamc(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert_eq!(stdout(&o).lines().count(), 16);
}

#[test]
fn gradcheck_single_layer_and_unknown_layer() {
    let o = invoamc(&["gradcheck", "--layer", "involution", "--seed", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("involution "));
    let o = invoamc(&["gradcheck", "--layer", "nope"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown gradcheck layer"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.json"), SPEC).unwrap();
    fs::write(d.join("train.json"), CONFIG).unwrap();
    let data = d.join("data");
    let ckpt = d.join("run/model.ckpt");
    let log = d.join("loss.csv");
    let report = d.join("report");

    let o = invoamc(&[
        "gen-data",
        "--spec",
        p(&d.join("spec.json")),
        "--out",
        p(&data),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("index.json").exists() && data.join("frames.bin").exists());

    let o = invoamc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&d.join("train.json")),
        "--out",
        p(&ckpt),
        "--log",
        p(&log),
        "--seed",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log_text = fs::read_to_string(&log).unwrap();
    let mut lines = log_text.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss,lr"));
    assert_eq!(lines.count(), 2);

    let o = invoamc(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc = fs::read_to_string(report.join("accuracy_vs_snr.csv")).unwrap();
    let rows: Vec<&str> = acc.lines().collect();
    assert_eq!(rows.len(), 3 + 1);
    assert_eq!(rows[0], "snr_db,accuracy");
    for (row, snr) in rows[1..].iter().zip(["-4", "8", "20"]) {
        let (s, a) = row.split_once(',').unwrap();
        assert_eq!(s, snr);
        let a: f64 = a.parse().unwrap();
        assert!((0.0..=1.0).contains(&a));

        // accuracy equals trace / total of the matching confusion file
        let conf = fs::read_to_string(report.join(format!("confusion_{snr}.csv"))).unwrap();
        let m: Vec<Vec<u64>> = conf
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(m.len(), 3);
        let total: u64 = m.iter().flatten().sum();
        let trace: u64 = (0..3).map(|i| m[i][i]).sum();
        assert_eq!(total, 3 * 2);
        assert!((a - trace as f64 / total as f64).abs() < 1e-12);
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    for key in [
        "per_snr_accuracy",
        "confusion",
        "overall_pr_cc",
        "loss_history",
        "param_count",
    ] {
        assert!(json.get(key).is_some(), "report.json lacks {key}");
    }
    assert_eq!(json["loss_history"].as_array().unwrap().len(), 2);
    assert_eq!(json["operator"], "involution");
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.json"), SPEC).unwrap();
    fs::write(d.join("train.json"), CONFIG).unwrap();
    let data = d.join("data");
    assert!(invoamc(&[
        "gen-data",
        "--spec",
        p(&d.join("spec.json")),
        "--out",
        p(&data)
    ])
    .status
    .success());
    let mut blobs = Vec::new();
    for (name, seed) in [("a.ckpt", "7"), ("b.ckpt", "7"), ("c.ckpt", "8")] {
        let ckpt = d.join(name);
        let o = invoamc(&[
            "train",
            "--data",
            p(&data),
            "--config",
            p(&d.join("train.json")),
            "--out",
            p(&ckpt),
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        blobs.push(fs::read(d.join(format!("{name}.bin"))).unwrap());
    }
    assert_eq!(blobs[0], blobs[1]);
    assert_ne!(blobs[0], blobs[2]);
}

#[test]
fn malformed_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let unknown = d.join("unknown.json");
    fs::write(&unknown, r#"{"frames": 3}"#).unwrap();
    let invalid = d.join("invalid.json");
    fs::write(&invalid, r#"{"snr_list_db": []}"#).unwrap();
    let missing = d.join("missing.json");
    let ckpt = d.join("x.ckpt");

    let cases: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--spec", p(&bad), "--out", p(d)],
        vec!["gen-data", "--spec", p(&unknown), "--out", p(d)],
        vec!["gen-data", "--spec", p(&invalid), "--out", p(d)],
        vec!["gen-data", "--spec", p(&missing), "--out", p(d)],
        vec!["params", "--config", p(&bad)],
        vec!["params", "--config", p(&unknown)],
        vec!["train", "--data", p(d), "--out", p(&ckpt)],
        vec!["eval", "--ckpt", p(&bad), "--data", p(d), "--report", p(d)],
        vec!["params", "--frobnicate"],
        vec!["gen-data"],
        vec!["launch"],
    ];
    for args in cases {
        let o = invoamc(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(
            !stderr(&o).trim().is_empty(),
            "{args:?} printed nothing on stderr"
        );
    }
}
