use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "n_east_inner = 4\nsampler.chains = 2\nsampler.warmup = 150\nsampler.draws = 60\n";

fn aq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aq"))
        .current_dir(dir)
        .env_remove("AQ_SEED")
        .args(args)
        .output()
        .expect("spawn aq")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = aq(dir, args);
    assert!(
        out.status.success(),
        "aq {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Simulated blanket data plus a fitted calibration in `dir`.
fn blanket_inputs(dir: &Path) {
    fs::write(dir.join("cfg.txt"), SMALL).unwrap();
    ok(dir, &["--seed", "5", "simulate", "--out", "sim", "--config", "cfg.txt", "--n1", "40", "--n2", "40", "--n-panel", "20", "--north-m", "3600"]);
    ok(dir, &["calibrate", "--input", "sim/calibration.csv", "--out", "cal"]);
}

fn fit_blanket(dir: &Path, out: &str, seed: &str) -> Output {
    aq(
        dir,
        &[
            "--seed", seed, "fit-blanket", "--survey1", "sim/survey1.csv", "--survey2", "sim/survey2.csv",
            "--calibration", "cal/calibration.json", "--config", "cfg.txt", "--out", out,
        ],
    )
}

fn no_staging_left(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        assert!(!name.starts_with(".aq-staging-"), "left behind {name}");
    }
}

#[test]
fn config_init_round_trips_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aq(tmp.path(), &["config", "init"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sampler.seed = "));
    ok(tmp.path(), &["config", "init", "--out", "c.txt"]);
    assert_eq!(fs::read_to_string(tmp.path().join("c.txt")).unwrap(), text);
    let again = aq(tmp.path(), &["config", "init", "--out", "c.txt"]);
    assert!(!again.status.success());
    ok(tmp.path(), &["config", "init", "--out", "c.txt", "--force"]);
}

#[test]
fn unknown_config_key_lists_valid_keys() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.txt"), "sampler.sed = 3\n").unwrap();
    fs::write(tmp.path().join("p.csv"), "").unwrap();
    let out = aq(tmp.path(), &["fit-resampled", "--panel", "p.csv", "--config", "bad.txt", "--out", "o"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("sampler.sed"), "{err}");
    assert!(err.contains("sampler.seed") && err.contains("n_east_inner"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aq(tmp.path(), &["calibrate", "--input", "no_such_pairs.csv", "--out", "o"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no_such_pairs.csv"));
    assert!(!tmp.path().join("o").exists());
    no_staging_left(tmp.path());
}

#[test]
fn malformed_row_is_reported_with_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.csv"), "lab_ugL,kit_level\n12,10\n7,42\n").unwrap();
    let out = aq(tmp.path(), &["calibrate", "--input", "c.csv", "--out", "o"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("c.csv") && err.contains('3'), "{err}");
}

#[test]
fn blanket_pipeline_is_reproducible_and_atomic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    blanket_inputs(dir);

    let a = fit_blanket(dir, "fit_a", "11");
    let b = fit_blanket(dir, "fit_b", "11");
    for o in [&a, &b] {
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(o));
    }
    let da = fs::read(dir.join("fit_a/draws.csv")).unwrap();
    assert_eq!(da, fs::read(dir.join("fit_b/draws.csv")).unwrap());
    let c = fit_blanket(dir, "fit_c", "12");
    assert!(matches!(c.status.code(), Some(0) | Some(2)));
    assert_ne!(da, fs::read(dir.join("fit_c/draws.csv")).unwrap());

    // manifest records the seed, the config and input digests
    let m = json(&dir.join("fit_a/manifest.json"));
    assert_eq!(m["seed"], 11);
    assert!(m["config"].as_str().unwrap().contains("sampler.seed = 11"));
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 4);
    let s1 = fs::read(dir.join("sim/survey1.csv")).unwrap();
    use sha2::Digest;
    let want = hex::encode(sha2::Sha256::digest(&s1));
    assert!(inputs.iter().any(|d| d["sha256"] == want.as_str()));
    assert!(m["timings"]["sample"].as_f64().unwrap() >= 0.0);
    assert_eq!(json(&dir.join("fit_a/geometry.json"))["model"], "blanket");

    // existing output refused without --force, replaced with it
    let again = fit_blanket(dir, "fit_a", "11");
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    no_staging_left(dir);

    ok(dir, &["summarize", "--fit", "fit_a", "--survey2", "sim/survey2.csv", "--out", "sum", "--plot-data"]);
    let exc = fs::read_to_string(dir.join("sum/exceedance.csv")).unwrap();
    assert!(exc.starts_with("well,mean_ugL,q10_ugL,q90_ugL,p_exceed_10,p_exceed_50,p_exceed_100,"));
    assert_eq!(exc.lines().count(), 41);
    let trend = json(&dir.join("sum/trend.json"));
    let f = trend["fraction_increasing"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    for f in ["mixing_curve.csv", "plot/exceedance_map.csv", "plot/predictive_change_100_mean.csv"] {
        assert!(dir.join("sum").join(f).exists(), "{f}");
    }

    ok(dir, &["ppc", "--fit", "fit_a", "--survey2", "sim/survey2.csv", "--panel", "sim/panel.csv", "--out", "ppc"]);
    let p = json(&dir.join("ppc/ppc.json"));
    assert_eq!(p["subsample_size"], 20);
    for (_, v) in p["p_values"].as_object().unwrap() {
        let v = v.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn summarize_rejects_layout_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    blanket_inputs(dir);
    let o = fit_blanket(dir, "fit", "3");
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    ok(dir, &["--seed", "6", "simulate", "--out", "other", "--n1", "40", "--n2", "25", "--n-panel", "5", "--north-m", "3600"]);
    for args in [
        vec!["summarize", "--fit", "fit", "--survey2", "other/survey2.csv", "--out", "s"],
        vec!["ppc", "--fit", "fit", "--survey2", "other/survey2.csv", "--panel", "sim/panel.csv", "--out", "s"],
    ] {
        let out = aq(dir, &args);
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains("layout mismatch"), "{}", stderr(&out));
    }
    assert!(!dir.join("s").exists());
    no_staging_left(dir);
}

#[test]
fn poor_convergence_exits_with_warning_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    blanket_inputs(dir);
    fs::write(dir.join("cfg.txt"), "n_east_inner = 4\nsampler.warmup = 5\nsampler.draws = 20\n").unwrap();
    let out = fit_blanket(dir, "fit", "1");
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("R-hat"));
    // results are still written
    assert!(dir.join("fit/draws.csv").exists());
}

#[test]
fn resampled_fit_persists_knots_and_summarizes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.txt"), SMALL).unwrap();
    ok(dir, &["--seed", "9", "simulate", "--kind", "resampled", "--n1", "25", "--out", "sim"]);
    let out = aq(dir, &["--seed", "9", "--threads", "1", "fit-resampled", "--panel", "sim/panel.csv", "--config", "cfg.txt", "--out", "fit"]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", stderr(&out));
    let g = json(&dir.join("fit/geometry.json"));
    assert_eq!(g["model"], "resampled");
    assert_eq!(g["n_wells"], 25);
    let knots: Vec<f64> = g["knots"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(knots.windows(2).all(|w| w[0] < w[1]));
    ok(dir, &["summarize", "--fit", "fit", "--out", "sum", "--thresholds", "10,50"]);
    let ex = fs::read_to_string(dir.join("sum/spline_exceedance.csv")).unwrap();
    assert!(ex.lines().next().unwrap().contains("50"));
    let p = json(&dir.join("sum/parameters.json"));
    assert!(p["sigma_s"]["mean"].as_f64().unwrap() > 0.0);
    // ppc needs a blanket fit
    fs::write(dir.join("s2.csv"), "well_id,east_m,north_m,depth_m,kit_level\n").unwrap();
    let out = aq(dir, &["ppc", "--fit", "fit", "--survey2", "s2.csv", "--panel", "sim/panel.csv", "--out", "p"]);
    assert!(!out.status.success());
}

#[test]
fn seed_flag_overrides_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_aq"));
        c.current_dir(dir).env_remove("AQ_SEED").args(args);
        if let Some(s) = env {
            c.env("AQ_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
    };
    run(&["simulate", "--kind", "resampled", "--n1", "10", "--out", "a"], Some("42"));
    run(&["--seed", "42", "simulate", "--kind", "resampled", "--n1", "10", "--out", "b"], Some("7"));
    run(&["--seed", "7", "simulate", "--kind", "resampled", "--n1", "10", "--out", "c"], None);
    let read = |d: &str| fs::read(dir.join(d).join("panel.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(json(&dir.join("b/manifest.json"))["seed"], 42);
}

#[test]
fn single_draw_gives_zero_width_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    blanket_inputs(dir);
    let o = fit_blanket(dir, "fit", "4");
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    fs::create_dir(dir.join("one")).unwrap();
    for f in ["geometry.json", "manifest.json"] {
        fs::copy(dir.join("fit").join(f), dir.join("one").join(f)).unwrap();
    }
    let draws = fs::read_to_string(dir.join("fit/draws.csv")).unwrap();
    let first: String = draws.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("one/draws.csv"), first).unwrap();

    ok(dir, &["summarize", "--fit", "one", "--survey2", "sim/survey2.csv", "--out", "sum"]);
    let exc = fs::read_to_string(dir.join("sum/exceedance.csv")).unwrap();
    for line in exc.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[1], v[2]);
        assert!(v[3..6].iter().all(|p| *p == 0.0 || *p == 1.0));
    }
    let trend = json(&dir.join("sum/trend.json"));
    for key in ["mean_level_first", "intercept_change", "depth_effect_per_10m"] {
        assert_eq!(trend[key]["lower"], trend[key]["upper"], "{key}");
    }
}
