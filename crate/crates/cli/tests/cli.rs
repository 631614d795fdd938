use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cliplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cliplab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_E4: &str = r#"
experiment = "E4_concentration"
seed = 5

[e4]
pool_sizes = [4, 16]
seeds = 6
population_batches = 100
"#;

#[test]
fn lists_all_experiments() {
    let o = cliplab(&["list-experiments"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in [
        "E1_temp_margin",
        "E2_clip_vs_square",
        "E3_regularization",
        "E4_concentration",
        "E5_shifted_prompts",
    ] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        let o = cliplab(&["validate", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
        n += 1;
    }
    assert_eq!(n, 5);
}

#[test]
fn default_config_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cliplab(&["default-config", "E3_regularization", "--seed", "9"]);
    assert!(o.status.success());
    let p = tmp.path().join("e3.toml");
    fs::write(&p, &o.stdout).unwrap();
    assert!(cliplab(&["validate", p.to_str().unwrap()]).status.success());
    assert_eq!(cliplab(&["default-config", "E7"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");

    fs::write(&p, "experiment = \"E1_temp_margin\"\n").unwrap();
    let o = cliplab(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    fs::write(
        &p,
        "experiment = \"E2_clip_vs_square\"\nseed = 1\n[model]\nkind = \"square_loss_failure\"\nK = 4\ngamma = 0.4\n",
    )
    .unwrap();
    let o = cliplab(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1/3"), "{}", stderr(&o));

    fs::write(&p, "experiment = \"E1_temp_margin\"\nseed = 1\n[train]\niterations = -3\n").unwrap();
    let o = cliplab(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = cliplab(&["run", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_fills_a_missing_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, TINY_E4.replace("seed = 5\n", "")).unwrap();
    let out = tmp.path().join("out");
    let o = cliplab(&["run", p.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"));
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, TINY_E4).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = cliplab(&["run", p.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cliplab(&["run", p.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["gaps.csv", "concentration.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(
        &p,
        "experiment = \"E5_shifted_prompts\"\nseed = 1\n[train]\niterations = 5\neta = 1000.0\ntau = 1e-7\ninit = { kind = \"seeded_random\", scale = 1.0 }\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = cliplab(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.exists());
}
