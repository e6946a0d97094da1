use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_morrey-sde");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("MORREY_SDE_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not a JSON report ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const QUADRATIC: &str = r#"
[field]
kind = "unit_diffusion"
d = 1

[grid]
l = 10.0
h = 0.1
# The Parseval defect is O(dt); refine below half the simplex spacing.
dt = 0.01

[chaos]
t0 = 1.0
m_max = 3
n_t = 10
test_function = "x1_squared"

[simulation]
n_paths = 2000
seed = 3
dt = 0.001
strongness = true
strongness_order = 1
"#;

#[test]
fn check_passes_for_the_trivial_example() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[field]\nkind = \"example3d\"\nalpha = 1.0\n",
    );
    let out = run(tmp.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["command"], "check");
    assert_eq!(r["pass"], true);
    assert_eq!(r["results"]["eigen_band"]["pass"], true);
    assert_eq!(r["results"]["drift_morrey"]["report"]["hat_f_m"], 0.0);
}

#[test]
fn check_fails_for_a_strong_singular_drift_at_the_origin() {
    let tmp = TempDir::new().unwrap();
    let mk = |gamma: f64| {
        format!("[field]\nkind = \"example3d\"\nalpha = 1.0\nbeta = 0.2\ngamma = {gamma}\n[thresholds]\neps_b = 0.5\n")
    };
    let cfg = write(tmp.path(), "g.toml", &mk(2.0));
    let out = run(tmp.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    let drift = &r["results"]["drift_morrey"]["report"];
    assert_eq!(drift["pass"], false);
    let worst: Vec<f64> = serde_json::from_value(drift["worst_ball"]["center"].clone()).unwrap();
    assert!(worst.iter().all(|v| *v == 0.0), "{worst:?}");
    // ρ·(⨍ γ²|x|⁻²)^{1/2} = √3·γ on every ball centred at the origin.
    let hat = drift["hat_f_m"].as_f64().unwrap();
    assert!((hat - 2.0 * 3f64.sqrt()).abs() < 0.02 * hat, "{hat}");

    // Linear in γ.
    let cfg1 = write(tmp.path(), "g1.toml", &mk(1.0));
    let r1 = report(&run(tmp.path(), &["check", "--config", &cfg1]));
    let hat1 = r1["results"]["drift_morrey"]["report"]["hat_f_m"]
        .as_f64()
        .unwrap();
    assert!((hat / hat1 - 2.0).abs() < 1e-12);
}

#[test]
fn missing_tabulated_file_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "t.toml",
        "[field]\nkind = \"tabulated\"\nd = 1\npath = \"no-such-table.dat\"\n",
    );
    let out = run(tmp.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("no-such-table.dat"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn tabulated_field_is_loaded_relative_to_the_config() {
    let tmp = TempDir::new().unwrap();
    // Rows: t, x, σ, b on a 2 × 5 tensor grid.
    let mut table = String::from("# t x sigma b\n");
    for t in [0.0, 1.0] {
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            table.push_str(&format!("{t} {x} 1.0 0.0\n"));
        }
    }
    write(tmp.path(), "unit.dat", &table);
    let cfg = write(
        tmp.path(),
        "t.toml",
        "[field]\nkind = \"tabulated\"\nd = 1\nd1 = 1\npath = \"unit.dat\"\ndelta = 0.5\n",
    );
    let other = TempDir::new().unwrap();
    let out = run(other.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(report(&out)["results"]["eigen_band"]["min_eigenvalue"], 1.0);
}

#[test]
fn unknown_keys_are_rejected_with_line_and_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "[field]\nkind = \"example3d\"\nalpah = 1.0\n",
    );
    let out = run(tmp.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("alpah"), "{err}");
    assert!(out.stdout.is_empty());

    let cfg = write(tmp.path(), "bad2.toml", "[grid]\nh = \"fine\"\n");
    let out = run(tmp.path(), &["chaos", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn out_of_range_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    for (name, text) in [
        ("a.toml", "[chaos]\nt0 = -1.0\n"),
        ("b.toml", "[chaos]\nn_t = 8\nepsilon_clip = 0.01\n"),
        ("c.toml", "[field]\nkind = \"constant_drift\"\n"),
        (
            "d.toml",
            "[simulation]\nstrongness = true\ndt = 0.001\n[chaos]\nn_t = 16\n",
        ),
    ] {
        let cfg = write(tmp.path(), name, text);
        let out = run(tmp.path(), &["simulate", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", stderr(&out));
    }
}

#[test]
fn exponents_report_the_trace_or_the_binding_constraint() {
    let tmp = TempDir::new().unwrap();
    let ok = write(
        tmp.path(),
        "e.toml",
        "[exponents]\np_b = 3.0\np_dsigma = 3.0\nfrp_b = 4.5\nfrq_b = 4.5\n",
    );
    let out = run(tmp.path(), &["exponents", "--config", &ok]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    let sol = &r["results"]["solution"];
    assert_eq!(sol["feasible"], true);
    assert!((sol["profile"]["p0"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    assert!((sol["profile"]["q0"].as_f64().unwrap() - 3.5).abs() < 1e-12);
    assert_eq!(sol["trace"].as_array().unwrap().len(), 5);
    // 3/4.5 + 2/4.5 > 1.
    assert_eq!(r["results"]["drift_regime"]["label"], "supercritical");

    let bad = write(
        tmp.path(),
        "i.toml",
        "[exponents]\np_b = 2.2\np_dsigma = 2.2\nfrp_b = 2.05\nfrq_b = 2.05\n",
    );
    let out = run(tmp.path(), &["exponents", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["results"]["solution"]["feasible"], false);
    assert!(r["results"]["solution"]["binding_constraint"]
        .as_str()
        .unwrap()
        .starts_with("p0"));

    let pre = write(
        tmp.path(),
        "p.toml",
        "[exponents]\np_b = 3.0\np_dsigma = 3.0\nfrp_b = 9.0\nfrq_b = 9.0\n",
    );
    assert_eq!(
        run(tmp.path(), &["exponents", "--config", &pre])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(tmp.path(), &["exponents"]).status.code(), Some(2));
}

#[test]
fn chaos_reports_the_hermite_ladder_and_writes_streams() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "q.toml", QUADRATIC);
    let out_dir = tmp.path().join("out");
    let out = run(
        tmp.path(),
        &[
            "chaos",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    let tails: Vec<f64> = r["results"]["tails"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["value"].as_f64().unwrap())
        .collect();
    // tail(1) = 2t0²(1 − 1/n_t) on the midpoint simplex, tail(2) = 0.
    assert!((tails[1] - 2.0 * 0.9).abs() < 1e-4, "{tails:?}");
    assert!(tails[2].abs() < 1e-8, "{tails:?}");
    assert!((r["results"]["c"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let diag = std::fs::read_to_string(out_dir.join("chaos_diagnostics.jsonl")).unwrap();
    let lines: Vec<Value> = diag
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["grid"]["n_t"] == 10));
    let csv = std::fs::read_to_string(out_dir.join("chaos_ladder.csv")).unwrap();
    assert!(csv.starts_with("order,partial_sum,defect,tail\n"));
    assert_eq!(csv.lines().count(), 5);
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("chaos.json")).unwrap())
            .unwrap();
    assert_eq!(saved["results"], r["results"]);
    assert!(
        std::fs::metadata(out_dir.join("kernels.bin"))
            .unwrap()
            .len()
            > 0
    );
}

#[test]
fn chaos_of_linear_data_has_no_tail() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "l.toml",
        "[field]\nkind = \"unit_diffusion\"\nd = 1\n[grid]\nl = 10.0\n[chaos]\nn_t = 8\nm_max = 2\ntest_function = \"x1\"\n",
    );
    let out = run(tmp.path(), &["chaos", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let tail1 = report(&out)["results"]["tails"][1]["value"]
        .as_f64()
        .unwrap();
    assert!(tail1.abs() < 1e-8, "{tail1}");
}

#[test]
fn chaos_cost_guard_produces_a_refusal_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "g.toml",
        "[field]\nkind = \"unit_diffusion\"\nd = 1\n[chaos]\nm_max = 5\nn_t = 40\n",
    );
    let out = run(tmp.path(), &["chaos", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["results"]["refused"], true);
    // 1 + 40 + C(40,2) + C(40,3) + C(40,4).
    assert_eq!(r["results"]["estimated_sweeps"], 102_091);
    assert_eq!(r["results"]["cost_cap"], 50_000);
}

#[test]
fn simulate_reports_means_weights_and_the_strongness_gap() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "q.toml", QUADRATIC);
    let out_dir = tmp.path().join("sim");
    let out = run(
        tmp.path(),
        &[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    let res = &r["results"];
    assert!(res["terminal_mean"][0]["z_score"].as_f64().unwrap() <= 3.0);
    let gap = &res["strongness_gap"];
    assert!(gap["mc_gap"]["mean"].is_f64());
    assert!(gap["mc_gap"]["std_error"].is_f64());
    assert!(gap["tail_value"].is_f64());
    assert_eq!(gap["agreement"], true);
    assert!(res["krylov"]["ratio"]["std_error"].is_f64());
    let lines = std::fs::read_to_string(out_dir.join("batches.jsonl")).unwrap();
    let names: Vec<String> = lines
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["estimator"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(
        names,
        [
            "em_mean_x1",
            "girsanov_weight",
            "krylov_ratio",
            "strongness_gap"
        ]
    );
}

#[test]
fn girsanov_weights_average_to_one_for_a_bounded_drift() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "d.toml",
        "[field]\nkind = \"constant_drift\"\ndrift = [0.4, -0.3]\n[simulation]\nn_paths = 4000\ndt = 0.01\nseed = 11\n",
    );
    let out = run(tmp.path(), &["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    let g = &r["results"]["girsanov"];
    assert!(g["z_score"].as_f64().unwrap() <= 3.0, "{g}");
    assert_eq!(g["envelope_on_all_paths"], true);
    // E x_{t0} = c·t0 is checked against the drift.
    assert_eq!(r["results"]["terminal_mean"][0]["expected"], 0.4);
}

#[test]
fn reports_are_reproducible_apart_from_wall_time() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "q.toml", QUADRATIC);
    let strip = |o: &Output| {
        let mut v = report(o);
        v.as_object_mut().unwrap().remove("wall_time_seconds");
        serde_json::to_string(&v).unwrap()
    };
    let a = run(tmp.path(), &["simulate", "--config", &cfg, "--seed", "5"]);
    let b = run(
        tmp.path(),
        &[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            "5",
            "--threads",
            "2",
        ],
    );
    assert_eq!(strip(&a), strip(&b));
    let c = run(tmp.path(), &["simulate", "--config", &cfg, "--seed", "6"]);
    assert_ne!(strip(&a), strip(&c));
}

#[test]
fn verify_filter_runs_only_the_tagged_criteria() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["verify", "--filter", "chaos"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    let crit = r["results"]["criteria"].as_array().unwrap();
    assert!(!crit.is_empty());
    assert!(crit.iter().all(|c| c["tag"] == "chaos"));
    // One status line per criterion on stderr.
    assert_eq!(
        stderr(&out)
            .lines()
            .filter(|l| l.starts_with("PASS ["))
            .count(),
        crit.len()
    );
}

#[test]
fn tightened_tolerances_fail_as_tolerance_not_correctness() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "tight.toml",
        "[thresholds]\ntolerance_scale = 1e-6\nenforce_runtime = false\n",
    );
    let out = run(
        tmp.path(),
        &["verify", "--filter", "chaos", "--config", &cfg],
    );
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert!(r["results"]["tolerance_failures"].as_u64().unwrap() >= 1);
    assert_eq!(r["results"]["correctness_failures"], 0);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        run(tmp.path(), &["verify", "--filter", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(tmp.path(), &["chaos", "--filter", "chaos"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(tmp.path(), &["check", "--threads", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &[]).status.code(), Some(2));
    assert_eq!(
        run(tmp.path(), &["check", "--config", "/nonexistent/cfg.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn thread_count_can_come_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .args(["check"])
        .current_dir(tmp.path())
        .env("MORREY_SDE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bad = Command::new(BIN)
        .args(["check"])
        .current_dir(tmp.path())
        .env("MORREY_SDE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
