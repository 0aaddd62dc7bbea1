use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jlcm::io;

fn jlcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jlcm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = jlcm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    jlcm(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Small, quick sampler settings written next to the data.
fn quick_config(dir: &Path, base: &str, chains: usize, extra: &str) -> PathBuf {
    let text = fs::read_to_string(config_path(base)).unwrap();
    let head = text.split("[sampler]").next().unwrap();
    let path = dir.join(format!("quick-{base}"));
    fs::write(
        &path,
        format!("{head}[sampler]\nchains = {chains}\niterations = 400\nwarmup = 200\nseed = 3\n{extra}\n"),
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_three_deterministic_files() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for out in [&a, &b] {
        ok(&["simulate", "--scenario", "setting1-g2", "--n", "300", "--seed", "1", "--out", s(out)]);
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["longitudinal.csv", "survival.csv", "truth.json"]);
    for f in &names {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let data = io::read_dataset_dir(&a).unwrap();
    let ids: std::collections::HashSet<_> = data.iter().map(|d| d.id.clone()).collect();
    assert_eq!(ids.len(), 300);
    let truth = io::read_truth(&a.join("truth.json")).unwrap();
    assert_eq!(truth.labels.len(), 300);
}

#[test]
fn simulate_rejects_bad_input() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("x");
    assert_eq!(code(&["simulate", "--scenario", "setting1-g2", "--n", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["simulate", "--scenario", "nope", "--n", "10", "--out", s(&out)]), 2);
    assert!(!out.exists());
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep"), "").unwrap();
    assert_eq!(code(&["simulate", "--scenario", "setting1-g1", "--n", "10", "--out", s(&out)]), 2);
}

#[test]
fn one_class_fit_converges_and_reproduces() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&["simulate", "--scenario", "setting1-g1", "--n", "100", "--seed", "4", "--out", s(&data)]);
    let cfg = config_path("setting1-g1.toml");
    let run = |name: &str| {
        let out = root.path().join(name);
        ok(&[
            "fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&out),
            "--chains", "4", "--iterations", "2000", "--warmup", "1000", "--thin", "1", "--seed", "7",
        ]);
        out
    };
    let a = run("fit-a");
    let art = io::read_fit(&a).unwrap();
    assert_eq!(art.draws.len(), 4);
    assert!(art.meta.chains.iter().all(|c| c.failure.is_none()));
    assert!(art.meta.chains.iter().all(|c| c.post_warmup_divergences == 0));
    for p in &art.summary {
        assert!(p.q025 <= p.mean && p.mean <= p.q975, "{}", p.name);
    }
    for (k, name) in art.meta.parameter_names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = art.draws.iter().map(|d| d.iter().map(|r| r[k]).collect()).collect();
        let r = jlcm::modelsel::split_rhat(&chains);
        assert!(r < 1.01, "{name}: R-hat {r}");
    }
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(&cfg).unwrap());

    let b = run("fit-b");
    assert_eq!(
        fs::read(a.join("summary.csv")).unwrap(),
        fs::read(b.join("summary.csv")).unwrap()
    );

    let report = ok(&["diagnose", "--fit", s(&a)]);
    assert!(report.contains("beta.1.intercept"));
    let cmp = ok(&["compare", "--fits", s(&a), s(&b), "--criterion", "waic", "--json"]);
    let parsed: Vec<jlcm::modelsel::ComparisonResult> = serde_json::from_str(&cmp).unwrap();
    assert_eq!(parsed[0].z, 0.0);
    assert_eq!(parsed[0].delta, 0.0);
}

#[test]
fn two_class_workflow() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&["simulate", "--scenario", "setting1-g2", "--n", "60", "--seed", "2", "--out", s(&data)]);
    let cfg = quick_config(root.path(), "setting1-g2.toml", 1, "");
    let fit_dir = root.path().join("fit");
    ok(&[
        "fit", "--config", s(&cfg), "--longitudinal", s(&data.join("longitudinal.csv")),
        "--survival", s(&data.join("survival.csv")), "--out", s(&fit_dir),
    ]);
    let art = io::read_fit(&fit_dir).unwrap();
    assert_eq!(art.meta.chains.len(), 1);
    assert_eq!(art.class_probs.len(), 60);
    assert_eq!(art.class_draws.len(), 200);
    for p in &art.class_probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let out = ok(&["classify", "--fit", s(&fit_dir), "--truth", s(&data.join("truth.json"))]);
    let acc: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("accuracy "))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let out = ok(&["compare", "--fits", s(&fit_dir), s(&fit_dir)]);
    assert!(out.contains("LOOIC"));
    let cmp = ok(&["compare", "--fits", s(&fit_dir), s(&fit_dir), "--json"]);
    let parsed: Vec<jlcm::modelsel::ComparisonResult> = serde_json::from_str(&cmp).unwrap();
    assert_eq!(parsed[0].z, 0.0);

    // One chain: R-hat from its two halves.
    let report = ok(&["diagnose", "--fit", s(&fit_dir)]);
    assert!(report.contains("split halves"));
    let line = report.lines().find(|l| l.starts_with("sigma2.1")).unwrap();
    let rhat: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(rhat.is_finite());

    let out = ok(&["diagnose", "--grad-check", "--config", s(&cfg), "--data", s(&data), "--points", "2"]);
    let err: f64 = out.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-5, "{out}");
}

#[test]
fn fit_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&["simulate", "--scenario", "setting1-g1", "--n", "20", "--seed", "5", "--out", s(&data)]);
    let cfg = config_path("setting1-g1.toml");
    let out = root.path().join("fit");

    assert_eq!(code(&["fit", "--config", s(&cfg), "--data", s(&root.path().join("none")), "--out", s(&out)]), 2);
    let missing = root.path().join("missing.toml");
    assert_eq!(code(&["fit", "--config", s(&missing), "--data", s(&data), "--out", s(&out)]), 2);
    assert_eq!(
        code(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--warmup", "6000"]),
        2
    );
    assert!(!out.exists());

    // Every transition counts as divergent, so every chain fails.
    let broken = quick_config(root.path(), "setting1-g1.toml", 2, "divergence_threshold = 1e-300");
    assert_eq!(code(&["fit", "--config", s(&broken), "--data", s(&data), "--out", s(&out)]), 3);
    assert!(!out.exists());

    assert_eq!(code(&["classify", "--fit", s(&out)]), 2);
    assert_eq!(code(&["diagnose", "--fit", s(&out)]), 2);
}
