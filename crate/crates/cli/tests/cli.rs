use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orthocav::cav::cosine_matrix;
use orthocav::format::{read_activations, read_bundle, read_labels, read_matrix};
use orthocav::metrics::evaluate;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orthocav-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn orthocav(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthocav"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = orthocav(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = orthocav(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with(&format!("error[{code}:")), "{stderr}");
    stderr
}

const SMALL: &str = "m = 6\nn = 3\nk = 200\nseed = 2\npositive_rate = [0.5, 0.5, 0.5]\n\
signal_strengths = [1.0, 1.0, 1.0]\nnoise_sigma = 0.1\nnames = [\"beak\", \"tail\", \"wing\"]\n\n\
[[cooccurrence]]\nsource = 0\ntarget = 1\np = 0.7\n";

/// Generate data and a pattern baseline in a fresh directory.
fn setup(name: &str) -> PathBuf {
    let dir = scratch(name);
    std::fs::write(dir.join("gen.toml"), SMALL).unwrap();
    ok(&dir, &["gen", "--config", "gen.toml", "--out-activations", "z.csv", "--out-labels", "t.csv", "--out-truth", "d.csv"]);
    ok(&dir, &["fit", "--activations", "z.csv", "--labels", "t.csv", "--out", "base.cav"]);
    dir
}

#[test]
fn gen_minimal_config_writes_three_files() {
    let dir = scratch("gen-min");
    std::fs::write(
        dir.join("g.toml"),
        "m = 3\nn = 2\nk = 100\nseed = 1\npositive_rate = [0.5, 0.5]\nsignal_strengths = [1.0, 1.0]\nnoise_sigma = 0.1\n",
    )
    .unwrap();
    ok(&dir, &["gen", "--config", "g.toml", "--out-activations", "z.bin", "--out-labels", "t.csv", "--out-truth", "d.csv"]);
    assert_eq!(read_activations(&dir.join("z.bin")).unwrap().samples(), 100);
    assert_eq!(read_labels(&dir.join("t.csv")).unwrap().concepts(), 2);
    assert_eq!(read_matrix(&dir.join("d.csv")).unwrap().shape(), (2, 3));
    assert!(std::fs::read(dir.join("z.bin")).unwrap().starts_with(b"CAVM"));
}

#[test]
fn gen_rejects_bad_probability_naming_the_field() {
    let dir = scratch("gen-bad");
    std::fs::write(dir.join("g.toml"), SMALL.replace("positive_rate = [0.5, 0.5, 0.5]", "positive_rate = [0.5, 1.3, 0.5]")).unwrap();
    let err = fails(&dir, &["gen", "--config", "g.toml", "--out-activations", "z", "--out-labels", "t", "--out-truth", "d"], 2);
    assert!(err.contains("positive_rate[1]"), "{err}");

    std::fs::write(dir.join("g.toml"), SMALL.replace("p = 0.7", "p = 1.3")).unwrap();
    let err = fails(&dir, &["gen", "--config", "g.toml", "--out-activations", "z", "--out-labels", "t", "--out-truth", "d"], 2);
    assert!(err.contains("cooccurrence[0].p"), "{err}");

    std::fs::write(dir.join("g.toml"), SMALL.replace("noise_sigma", "noise")).unwrap();
    fails(&dir, &["gen", "--config", "g.toml", "--out-activations", "z", "--out-labels", "t", "--out-truth", "d"], 2);
}

#[test]
fn gen_reports_enforced_frequencies() {
    let dir = scratch("gen-table");
    let cfg = "m = 16\nn = 8\nk = 20000\nseed = 4\npositive_rate = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]\n\
signal_strengths = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]\nnoise_sigma = 0.1\n\
[[cooccurrence]]\nsource = 0\ntarget = 4\np = 0.7\n[[cooccurrence]]\nsource = 1\ntarget = 5\np = 0.7\n\
[[cooccurrence]]\nsource = 2\ntarget = 6\np = 0.7\n[[cooccurrence]]\nsource = 3\ntarget = 7\np = 0.7\n";
    std::fs::write(dir.join("g.toml"), cfg).unwrap();
    let stdout = ok(&dir, &["gen", "--config", "g.toml", "--out-activations", "z.bin", "--out-labels", "t.csv", "--out-truth", "d.csv"]);
    let freqs: Vec<f64> = stdout
        .lines()
        .filter(|l| l.contains(",0.7,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(freqs.len(), 4, "{stdout}");
    assert!(freqs.iter().all(|f| (f - 0.7).abs() <= 0.02), "{freqs:?}");
}

#[test]
fn fit_prints_metrics_and_methods_differ() {
    let dir = scratch("fit");
    std::fs::write(
        dir.join("g.toml"),
        "m = 32\nn = 4\nk = 500\nseed = 8\npositive_rate = [0.5, 0.5, 0.5, 0.5]\n\
signal_strengths = [1.0, 1.0, 1.0, 1.0]\nnoise_sigma = 0.1\n",
    )
    .unwrap();
    ok(&dir, &["gen", "--config", "g.toml", "--out-activations", "z.csv", "--out-labels", "t.csv", "--out-truth", "d.csv"]);
    let stdout = ok(&dir, &["fit", "--activations", "z.csv", "--labels", "t.csv", "--out", "p.cav"]);
    let macro_auroc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("macro_auroc,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(macro_auroc >= 0.99, "{stdout}");
    assert!(stdout.contains("avg_orthogonality,"));

    ok(&dir, &["fit", "--activations", "z.csv", "--labels", "t.csv", "--method", "ridge", "--out", "r.cav"]);
    let p = read_bundle(&dir.join("p.cav")).unwrap();
    let r = read_bundle(&dir.join("r.cav")).unwrap();
    assert_ne!(p.cavs.vectors(), r.cavs.vectors());
    assert_eq!(r.provenance.fit_method, "ridge");
}

#[test]
fn fit_names_constant_concept() {
    let dir = setup("fit-const");
    let labels = std::fs::read_to_string(dir.join("t.csv")).unwrap();
    let constant: String = labels
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_owned()
            } else {
                let mut f: Vec<&str> = l.split(',').collect();
                f[2] = "1";
                f.join(",")
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.join("bad.csv"), constant).unwrap();
    let err = fails(&dir, &["fit", "--activations", "z.csv", "--labels", "bad.csv", "--out", "x.cav"], 2);
    assert!(err.contains("single_class_concept") && err.contains("`wing`"), "{err}");
}

#[test]
fn fit_rejects_shape_mismatch() {
    let dir = setup("fit-shape");
    let labels = std::fs::read_to_string(dir.join("t.csv")).unwrap();
    let short: Vec<&str> = labels.lines().take(50).collect();
    std::fs::write(dir.join("short.csv"), short.join("\n")).unwrap();
    let err = fails(&dir, &["fit", "--activations", "z.csv", "--labels", "short.csv", "--out", "x.cav"], 2);
    assert!(err.contains("invalid_matrix"), "{err}");
}

#[test]
fn orthogonalize_defaults_follow_the_standard_profile() {
    let dir = setup("orth-defaults");
    ok(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--init", "base.cav", "--out", "o.cav"]);
    let b = read_bundle(&dir.join("o.cav")).unwrap();
    let get = |k: &str| b.provenance.config.iter().find(|(key, _)| key == k).unwrap().1.clone();
    assert_eq!(get("lr"), "0.001");
    assert_eq!(get("alpha"), "0.01");
    assert_eq!(get("epochs"), "300");
    assert_eq!(get("optimizer"), "gd");
    assert_eq!(b.provenance.epochs_run, Some(300));
}

#[test]
fn orthogonalize_alpha_zero_is_stationary_at_pattern_fit() {
    let dir = setup("orth-alpha0");
    ok(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--init", "base.cav", "--alpha", "0", "--lr", "0.01", "--out", "o.cav"]);
    let base = read_bundle(&dir.join("base.cav")).unwrap();
    let o = read_bundle(&dir.join("o.cav")).unwrap();
    assert!((base.cavs.vectors() - o.cavs.vectors()).amax() <= 1e-6);
}

#[test]
fn orthogonalize_config_file_is_overridden_by_flags() {
    let dir = setup("orth-config");
    std::fs::write(dir.join("o.toml"), "alpha = 5.0\nepochs = 20\npairs = \"beak:tail\"\nbeta = 10.0\n").unwrap();
    ok(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--init", "base.cav", "--config", "o.toml", "--alpha", "0.5", "--out", "o.cav", "--history", "h.csv"]);
    let b = read_bundle(&dir.join("o.cav")).unwrap();
    let get = |k: &str| b.provenance.config.iter().find(|(key, _)| key == k).unwrap().1.clone();
    assert_eq!(get("alpha"), "0.5");
    assert_eq!(get("epochs"), "20");
    assert_eq!(get("beta"), "10.0");
    assert_eq!(get("pairs"), "beak:tail");
    let history = std::fs::read_to_string(dir.join("h.csv")).unwrap();
    assert!(history.starts_with("epoch,metric,concept,value\n"));
    assert!(history.contains("\n20,avg_orthogonality,,"));

    std::fs::write(dir.join("bad.toml"), "alpah = 1.0\n").unwrap();
    fails(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--init", "base.cav", "--config", "bad.toml", "--out", "x.cav"], 2);
}

#[test]
fn orthogonalize_early_exit_is_reported() {
    let dir = setup("orth-exit");
    let stdout = ok(
        &dir,
        &[
            "orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--random-seed", "3", "--alpha", "0",
            "--epochs", "50", "--eval-every", "5", "--min-avg-auroc", "0.9999999", "--out", "o.cav",
        ],
    );
    assert!(stdout.contains("stopped_early,true"), "{stdout}");
}

#[test]
fn orthogonalize_errors_map_to_exit_codes() {
    let dir = setup("orth-errors");
    let err = fails(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--random-seed", "1", "--alpha", "0", "--lr", "1e6", "--out", "x.cav"], 3);
    assert!(err.contains("lower the learning rate"), "{err}");
    fails(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--out", "x.cav"], 2);
    fails(&dir, &["orthogonalize", "--activations", "z.csv", "--labels", "t.csv", "--init", "base.cav", "--pairs", "beak:nose", "--out", "x.cav"], 2);
    fails(&dir, &["orthogonalize", "--activations", "nope.csv", "--labels", "t.csv", "--init", "base.cav", "--out", "x.cav"], 4);
}

#[test]
fn metrics_match_library_and_are_symmetric() {
    let dir = setup("metrics");
    let stdout = ok(&dir, &["metrics", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--out", "m.csv"]);
    assert_eq!(std::fs::read_to_string(dir.join("m.csv")).unwrap(), stdout);

    let bundle = read_bundle(&dir.join("base.cav")).unwrap();
    let z = read_activations(&dir.join("z.csv")).unwrap();
    let labels = read_labels(&dir.join("t.csv")).unwrap();
    let cos = cosine_matrix(&bundle.cavs).unwrap();
    let snap = evaluate(&bundle.cavs, &z, &labels, 0).unwrap();

    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "cosine,beak,tail,wing");
    for i in 0..3 {
        let fields: Vec<f64> = lines[1 + i].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        for (j, &field) in fields.iter().enumerate() {
            assert_eq!(field, cos.get(i, j));
            assert_eq!(cos.get(i, j), cos.get(j, i));
        }
    }
    for (i, name) in labels.names().iter().enumerate() {
        let expected = format!("{name},{:?},{:?}", snap.per_concept_auroc[i], snap.per_concept_orthogonality[i]);
        assert!(lines.contains(&expected.as_str()), "{expected}");
    }
    assert!(lines.contains(&format!("macro_auroc,{:?}", snap.macro_auroc).as_str()));
}

#[test]
fn metrics_of_orthogonal_bundle_is_identity() {
    let dir = setup("metrics-ortho");
    std::fs::write(
        dir.join("o.cav"),
        "format_version = 1\nconcepts = beak,tail,wing\nbiases = 0.0,0.0,0.0\nfit_method = manual\n[vectors]\n3,6\n\
1.0,0.0,0.0,0.0,0.0,0.0\n0.0,2.0,0.0,0.0,0.0,0.0\n0.0,0.0,0.0,0.5,0.0,0.0\n",
    )
    .unwrap();
    let stdout = ok(&dir, &["metrics", "--bundle", "o.cav", "--activations", "z.csv", "--labels", "t.csv"]);
    assert!(stdout.starts_with("cosine,beak,tail,wing\nbeak,1.0,0.0,0.0\ntail,0.0,1.0,0.0\nwing,0.0,0.0,1.0\n"), "{stdout}");
    assert!(stdout.contains("avg_orthogonality,1.0\n"));
}

#[test]
fn steer_zero_step_and_repeated_removal_are_no_ops() {
    let dir = setup("steer");
    ok(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "tail", "--mode", "insert", "--step", "0", "--out", "same.csv"]);
    assert_eq!(std::fs::read(dir.join("same.csv")).unwrap(), std::fs::read(dir.join("z.csv")).unwrap());

    ok(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "tail", "--mode", "remove", "--out", "r1.csv"]);
    ok(&dir, &["steer", "--bundle", "base.cav", "--activations", "r1.csv", "--labels", "t.csv", "--target", "tail", "--mode", "remove", "--out", "r2.csv"]);
    assert_eq!(std::fs::read(dir.join("r1.csv")).unwrap(), std::fs::read(dir.join("r2.csv")).unwrap());
}

#[test]
fn steer_report_follows_cosine_identity() {
    let dir = setup("steer-identity");
    let step = 1.5;
    let stdout = ok(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "beak", "--mode", "insert", "--step", "1.5", "--out", "e.csv", "--report", "r.csv"]);
    assert_eq!(std::fs::read_to_string(dir.join("r.csv")).unwrap(), stdout);
    let bundle = read_bundle(&dir.join("base.cav")).unwrap();
    let cos = cosine_matrix(&bundle.cavs).unwrap();
    for (j, name) in bundle.cavs.names().iter().enumerate() {
        let line = stdout.lines().find(|l| l.starts_with(&format!("insert,1.5,{name},"))).unwrap();
        let delta: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        let norm = bundle.cavs.vector(j).norm();
        let expected = (cos.get(0, j) * norm * step).abs();
        assert!((delta - expected).abs() <= 1e-9, "{name}: {delta} vs {expected}");
    }
}

#[test]
fn steer_sweep_writes_one_file_per_step() {
    let dir = setup("steer-sweep");
    ok(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "wing", "--mode", "insert", "--sweep", "0,1,2", "--out", "s.csv"]);
    for i in 0..3 {
        assert!(dir.join(format!("s_step{i}.csv")).exists());
    }
    assert_eq!(std::fs::read(dir.join("s_step0.csv")).unwrap(), std::fs::read(dir.join("z.csv")).unwrap());
}

#[test]
fn steer_unknown_target_lists_names() {
    let dir = setup("steer-unknown");
    let err = fails(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "nose", "--mode", "remove", "--out", "x.csv"], 2);
    assert!(err.contains("beak, tail, wing"), "{err}");
    fails(&dir, &["steer", "--bundle", "base.cav", "--activations", "z.csv", "--labels", "t.csv", "--target", "beak", "--mode", "insert", "--out", "x.csv"], 2);
}
