use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn dicl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicl"))
        .args(args)
        .output()
        .expect("spawn dicl")
}

fn run_ok(verb: &str, config: &Path, out: &Path) {
    let o = dicl(&[
        verb,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        o.status.success(),
        "{verb} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn periodic_truth(episode: usize, step: usize) -> (f64, f64) {
    let s0 = [1.0, 2.0, 3.0][(step + episode) % 3];
    let s1 = [0.5, -0.5, 0.25, 0.0][(step + 2 * episode) % 4];
    (s0, s1)
}

#[test]
fn forecast_continues_the_cycle_and_matches_golden() {
    let tmp = TempDir::new().unwrap();
    run_ok("forecast", &data("forecast_periodic.toml"), tmp.path());

    let (header, rows) = read_csv(&tmp.path().join("predictions.csv"));
    assert_eq!(&header[..5], ["episode", "step", "h", "s0", "s1"]);
    assert_eq!(rows.len(), 2 * 12);
    // Each channel spans its own min..max over 1000 bins.
    let half_bin = |range: f64| 0.5 * range / 999.0 + 1e-12;
    for row in &rows {
        let ep: usize = row[0].parse().unwrap();
        let step: usize = row[1].parse().unwrap();
        let (t0, t1) = periodic_truth(ep, step);
        let p0: f64 = row[3].parse().unwrap();
        let p1: f64 = row[4].parse().unwrap();
        assert!((p0 - t0).abs() <= half_bin(2.0), "s0 {p0} vs {t0} at {ep}/{step}");
        assert!((p1 - t1).abs() <= half_bin(1.0), "s1 {p1} vs {t1} at {ep}/{step}");
    }

    let produced = fs::read(tmp.path().join("predictions.csv")).unwrap();
    let golden = fs::read(data("golden_predictions.csv")).unwrap();
    assert!(produced == golden, "predictions.csv drifted from the golden file");
    assert!(tmp.path().join("distributions.json").exists());
    assert!(tmp.path().join("resolved_config.json").exists());
}

#[test]
fn same_config_and_seed_give_identical_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run_ok("forecast", &data("forecast_periodic.toml"), a.path());
    run_ok("forecast", &data("forecast_periodic.toml"), b.path());
    for f in ["predictions.csv", "distributions.json", "resolved_config.json"] {
        assert!(
            fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn missing_dataset_key_exits_with_schema_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "horizon = 5\n[method]\nkind = \"vicl\"\n");
    let o = dicl(&[
        "forecast",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dataset"), "stderr: {err}");
}

#[test]
fn metrics_of_perfect_predictions_are_zero() {
    let tmp = TempDir::new().unwrap();
    let mut preds = String::from("episode,step,h,s0,s1\n");
    for ep in 0..2 {
        for (h, step) in (40..48).enumerate() {
            let (s0, s1) = periodic_truth(ep, step);
            preds.push_str(&format!("{ep},{step},{},{s0},{s1}\n", h + 1));
        }
    }
    fs::write(tmp.path().join("perfect.csv"), preds).unwrap();
    let cfg = write_config(
        tmp.path(),
        "metrics.toml",
        &format!("dataset = {:?}\npredictions = \"perfect.csv\"\n", data("periodic.csv")),
    );
    let out = tmp.path().join("out");
    run_ok("metrics", &cfg, &out);
    let (header, rows) = read_csv(&out.join("mse.csv"));
    assert_eq!(header, ["horizon", "dim", "mse", "count"]);
    assert_eq!(rows.len(), 8 * 2);
    for row in &rows {
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0, "horizon {} dim {}", row[0], row[1]);
        assert_eq!(row[3], "2");
    }
}

#[test]
fn metrics_reads_forecast_artifacts_with_calibration() {
    let tmp = TempDir::new().unwrap();
    let fc = tmp.path().join("fc");
    run_ok("forecast", &data("forecast_periodic.toml"), &fc);
    let cfg = write_config(
        tmp.path(),
        "metrics.toml",
        &format!(
            "dataset = {:?}\npredictions = \"fc/predictions.csv\"\ndistributions = \"fc/distributions.json\"\n",
            data("periodic.csv")
        ),
    );
    let out = tmp.path().join("out");
    run_ok("metrics", &cfg, &out);
    assert!(out.join("reliability.csv").exists());
    let ks: serde_json::Value = serde_json::from_slice(&fs::read(out.join("ks.json")).unwrap()).unwrap();
    let d = ks["ks"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&d));
    assert!(ks["n"].as_u64().unwrap() > 0);
}

#[test]
fn metrics_on_empty_dataset_exits_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.csv"), "episode,s0\n").unwrap();
    fs::write(tmp.path().join("p.csv"), "episode,step,h,s0\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "m.toml",
        "dataset = \"empty.csv\"\npredictions = \"p.csv\"\n",
    );
    let o = dicl(&[
        "metrics",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn boundcheck_small_sweep_holds_and_p0_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "b.toml",
        "n_pairs = 3\np = [0.0, 0.3]\nk = [1, 2]\nmin_context = [0, 1]\nn_rollouts = 4000\nseed = 7\n",
    );
    let out = tmp.path().join("out");
    run_ok("boundcheck", &cfg, &out);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("bound_report.json")).unwrap()).unwrap();
    assert_eq!(report["all_hold"], true);
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3 * 2 * 2 * 2);
    for c in cells.iter().filter(|c| c["p"].as_f64() == Some(0.0)) {
        assert_eq!(c["report"]["lhs"].as_f64(), Some(0.0));
    }
}

#[test]
fn boundcheck_rejects_gamma_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", "gamma = 1.0\n");
    let o = dicl(&[
        "boundcheck",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

const TRAIN_SMOKE: &str = "total_steps = 500\nlearning_starts = 100\nllm_learning_starts = 100\n\
update_frequency = 100\nbatch_size = 32\nhidden = [32, 32]\nmax_context = 40\n";

#[test]
fn train_smoke_logs_every_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "t.toml",
        &format!("algorithm = \"dicl_sac\"\nllm_proportion = 0.1\n{TRAIN_SMOKE}"),
    );
    let out = tmp.path().join("out");
    run_ok("train", &cfg, &out);
    let (header, rows) = read_csv(&out.join("training_log.csv"));
    assert_eq!(header[0], "step");
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().any(|r| r[6] != "0"), "no synthetic transitions were used");
    assert!(out.join("checkpoints/actor.json").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn train_with_zero_proportion_matches_plain_sac() {
    let tmp = TempDir::new().unwrap();
    let dicl_cfg = write_config(
        tmp.path(),
        "d.toml",
        &format!("algorithm = \"dicl_sac\"\nllm_proportion = 0.0\n{TRAIN_SMOKE}"),
    );
    let sac_cfg = write_config(tmp.path(), "s.toml", &format!("algorithm = \"sac\"\n{TRAIN_SMOKE}"));
    run_ok("train", &dicl_cfg, &tmp.path().join("d"));
    run_ok("train", &sac_cfg, &tmp.path().join("s"));
    let d = fs::read(tmp.path().join("d/training_log.csv")).unwrap();
    let s = fs::read(tmp.path().join("s/training_log.csv")).unwrap();
    assert!(d == s, "training logs differ");
}

#[test]
fn policyeval_oracle_smoke() {
    let tmp = TempDir::new().unwrap();
    let mut rows = String::from("episode,s0,a0,r\n");
    for ep in 0..2 {
        for t in 0..60 {
            let s = ((t + ep) as f64 * 0.3).sin();
            rows.push_str(&format!("{ep},{s},{},{}\n", 0.1 * s, -s * s));
        }
    }
    fs::write(tmp.path().join("ep.csv"), rows).unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.toml",
        "dataset = \"ep.csv\"\ncontext_lens = [40]\nhorizons = [0, 10, 20]\nepisode_len = 60\noracle = true\n\
         [method]\nkind = \"vicl\"\ninclude_reward = true\n",
    );
    let out = tmp.path().join("out");
    run_ok("policyeval", &cfg, &out);
    let (header, rows) = read_csv(&out.join("policyeval.csv"));
    assert_eq!(
        header,
        [
            "episode",
            "context_len",
            "horizon",
            "v_hat",
            "v_true",
            "abs_err",
            "rel_err"
        ]
    );
    assert_eq!(rows.len(), 2 * 3);
    for r in rows.iter().filter(|r| r[2] == "0") {
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn policyeval_without_reward_channel_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.toml",
        &format!("dataset = {:?}\n[method]\nkind = \"vicl\"\n", data("periodic.csv")),
    );
    let o = dicl(&[
        "policyeval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sensitivity_smoke() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "n_states = 8\n");
    let out = tmp.path().join("out");
    run_ok("sensitivity", &cfg, &out);
    let (header, rows) = read_csv(&out.join("sensitivity.csv"));
    assert_eq!(header, ["output", "input", "mean", "max"]);
    assert!(!rows.is_empty());
    for r in &rows {
        let mean: f64 = r[2].parse().unwrap();
        let max: f64 = r[3].parse().unwrap();
        assert!(mean.is_finite() && mean <= max + 1e-12);
    }
}
