use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const TINY: &str = r#"{
  "seed": 11,
  "replicates": 200,
  "eof_k_primes": [1, 2, 5],
  "synth": {"n_lat": 4, "n_lon": 8, "n_samples": 40, "members": 3, "lead_weeks": 2},
  "train": {"max_epochs": 2, "batch_size": 16, "widths": [2, 3]},
  "vnn": {"latent_dim": 32},
  "dnn": {"sampler": {"kind": "strided", "steps": 10, "eta": 1.0, "temperature": 1.0}}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_downscale"))
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> i32 {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    if !o.status.success() {
        eprintln!("{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap_or(-1)
}

fn ok(cfg: &Path, out: &Path, args: &[&str]) {
    assert_eq!(run(cfg, out, args), 0, "{args:?}");
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn full_pipeline(cfg: &Path, out: &Path) {
    ok(cfg, out, &["synth"]);
    for model in ["snn", "qnn", "vnn", "dnn"] {
        ok(cfg, out, &["train", "--model", model]);
        for week in ["1", "2"] {
            if model == "snn" {
                ok(cfg, out, &["calibrate", "--lead-week", week]);
            }
            for cmd in ["generate", "verify", "eof", "spectrum", "bootstrap"] {
                ok(cfg, out, &[cmd, "--model", model, "--lead-week", week]);
            }
        }
    }
    ok(cfg, out, &["report"]);
}

#[test]
fn pipeline_summary_and_idempotence() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    full_pipeline(&cfg, &out);

    let summary: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for model in ["snn", "qnn", "vnn", "dnn", "benchmark"] {
        for week in ["1", "2"] {
            let m = &summary[model][week];
            for metric in ["mse", "crps", "ssr"] {
                assert!(m[metric].is_finite(), "{model} {week} {metric}");
            }
        }
    }
    let members = |model: &str, p: usize| {
        let e = ensemble_downscaling::fields::load_ensemble(&out.join(format!("ensembles/{model}_w1.gfld"))).unwrap();
        assert_eq!(e.n_members(), 3 * p, "{model}");
    };
    members("qnn", 10);
    members("dnn", 20);

    let first = snapshot(&out);
    full_pipeline(&cfg, &out);
    let second = snapshot(&out);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(second[k] == *v, "{} changed on rerun", k.display());
    }
}

#[test]
fn identical_model_and_benchmark_give_zero_delta() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    ok(&cfg, &out, &["synth"]);
    ok(&cfg, &out, &["calibrate"]);
    for ext in ["gfld", "meta.json"] {
        fs::copy(out.join(format!("ensembles/benchmark_w1.{ext}")), out.join(format!("ensembles/qnn_w1.{ext}"))).unwrap();
    }
    ok(&cfg, &out, &["verify", "--model", "qnn"]);
    for metric in ["delta_r_mse", "delta_r_crps", "msss", "crpss"] {
        let csv = fs::read_to_string(out.join(format!("scores/qnn_w1_{metric}.csv"))).unwrap();
        for line in csv.lines().skip(1) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(v, 0.0, "{metric}: {line}");
        }
    }
    ok(&cfg, &out, &["bootstrap", "--model", "qnn"]);
    let s = fs::read_to_string(out.join("bootstrap/qnn_w1.json")).unwrap();
    assert!(s.contains("\"degenerate\": true"));
}

#[test]
fn bootstrap_is_byte_identical_across_runs() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    ok(&cfg, &out, &["synth"]);
    ok(&cfg, &out, &["calibrate"]);
    ok(&cfg, &out, &["train", "--model", "snn"]);
    ok(&cfg, &out, &["generate", "--model", "snn"]);
    let args = ["bootstrap", "--model", "snn", "--replicates", "1000", "--seed", "7"];
    ok(&cfg, &out, &args);
    let a = snapshot(&out.join("bootstrap"));
    ok(&cfg, &out, &args);
    assert_eq!(a, snapshot(&out.join("bootstrap")));
    ok(&cfg, &out, &["bootstrap", "--model", "snn", "--replicates", "1000", "--seed", "8"]);
    assert_ne!(a, snapshot(&out.join("bootstrap")));
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    // Missing upstream artifacts.
    assert_eq!(run(&cfg, &out, &["train"]), 3);
    assert_eq!(run(&dir.path().join("absent.json"), &out, &["synth"]), 3);
    // Out-of-range search parameters and bad structure.
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"learning_rate": 0.5}}"#).unwrap();
    assert_eq!(run(&bad, &out, &["train"]), 4);
    assert_eq!(run(&cfg, &out, &["synth", "--lead-week", "9"]), 4);
    fs::write(&bad, r#"{"not_a_field": 1}"#).unwrap();
    assert_eq!(run(&bad, &out, &["synth"]), 4);
    // A bundle of one mechanism filed under another.
    ok(&cfg, &out, &["synth"]);
    ok(&cfg, &out, &["train", "--model", "snn"]);
    let manifest = fs::read_to_string(out.join("models/snn.json")).unwrap();
    fs::write(out.join("models/qnn.json"), manifest).unwrap();
    assert_eq!(run(&cfg, &out, &["generate", "--model", "qnn"]), 5);
    // Usage errors come from the argument parser.
    let o = bin().arg("verify").arg("--model").arg("gan").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
