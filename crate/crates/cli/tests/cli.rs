use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qerr(args: &[&str]) -> Output {
    qerr_env(args, None)
}

fn qerr_env(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qerr"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("QERR_THREADS", n),
        None => cmd.env_remove("QERR_THREADS"),
    };
    cmd.output().expect("run qerr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn group_info_reports_clifford_two_order() {
    let o = qerr(&["group-info", "clifford:2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "order 11520"), "{text}");
    assert!(text.lines().any(|l| l == "formula 11520"), "{text}");
}

#[test]
fn group_export_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = tmp(&dir, "p1.json");
    let o = qerr(&["group-info", "pauli:1", "--export", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["order"], 4);
    assert_eq!(v["elements"].as_array().unwrap().len(), 4);
}

#[test]
fn reachable_counts() {
    let o = qerr(&["reachable", "clifford:2", "--state", "|00>"]);
    assert_eq!(stdout(&o).trim(), "60");
    let o = qerr(&["reachable", "clifford:1"]);
    assert_eq!(stdout(&o).trim(), "6");
    let o = qerr(&["reachable", "pauli:1", "--list"]);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn analyze_random_schema_and_monotonicity() {
    let o = qerr(&[
        "analyze-random",
        "--group",
        "clifford:1",
        "--error",
        "pauli-channel:0.01",
        "--delta",
        "0.1",
        "--tau",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "t,p_error,p_max_error,e_dist,lemma2_bound"
    );
    let r = rows(&text);
    assert_eq!(r.len(), 101);
    let mut last = 0.0;
    for row in &r {
        let p: f64 = row[1].parse().unwrap();
        let m: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&m));
        assert!(m >= last);
        last = m;
    }
}

#[test]
fn compare_identical_and_corrupted() {
    let dir = tempfile::tempdir().unwrap();
    let a = tmp(&dir, "a.csv");
    let o = qerr(&[
        "analyze-random",
        "--error",
        "pauli-channel:0.01",
        "--tau",
        "50",
        "-o",
        a.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = qerr(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("fraction 1.0000"));

    let text = std::fs::read_to_string(&a).unwrap();
    let bad: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_string()
            } else {
                let mut c: Vec<&str> = l.split(',').collect();
                c[2] = "0.5";
                c.join(",")
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let b = tmp(&dir, "b.csv");
    std::fs::write(&b, bad + "\n").unwrap();
    let report = tmp(&dir, "report.csv");
    let o = qerr(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--runs",
        "1000",
        "-o",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let flagged = rows(&std::fs::read_to_string(report).unwrap())
        .iter()
        .filter(|r| r[2] == "p_max_error" && r[7] == "0")
        .count();
    assert!(flagged > 40);

    let short = tmp(&dir, "short.csv");
    std::fs::write(&short, text.lines().take(10).collect::<Vec<_>>().join("\n")).unwrap();
    let o = qerr(&["compare", a.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analytic_and_simulated_rb_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = tmp(&dir, "a.csv");
    let m = tmp(&dir, "m.csv");
    let common = [
        "--error",
        "pauli-channel:0.01",
        "--delta",
        "0.1,0.2",
        "--tau",
        "100",
    ];
    let mut args = vec!["analyze-random", "-o", a.to_str().unwrap()];
    args.extend(common);
    assert_eq!(qerr(&args).status.code(), Some(0));
    let mut args = vec![
        "simulate",
        "--mode",
        "rb",
        "--runs",
        "1000",
        "--seed",
        "5",
        "-o",
        m.to_str().unwrap(),
    ];
    args.extend(common);
    assert_eq!(qerr(&args).status.code(), Some(0));
    let o = qerr(&["compare", a.to_str().unwrap(), m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qerr(&["analyze-random", "--bogus"]).status.code(), Some(2));
    assert_eq!(qerr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(qerr(&["group-info", "clifford:3"]).status.code(), Some(2));
    assert_eq!(
        qerr(&["analyze-random", "--error", "pauli-channel:2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        qerr(&["analyze-fixed", "--circuit", "/nonexistent"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(qerr(&["--help"]).status.code(), Some(0));
}

#[test]
fn strict_requires_seed() {
    let o = qerr(&["simulate", "--strict", "--runs", "10", "--tau", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qerr(&[
        "simulate", "--strict", "--runs", "10", "--tau", "5", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn strict_escalates_health_warnings() {
    // Two kicks put D_2 just below delta, where the series converges too slowly.
    let args = [
        "continuous",
        "--alpha",
        "0.1",
        "--t-max",
        "2",
        "--delta",
        "0.1",
    ];
    assert_eq!(qerr(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(qerr(&strict).status.code(), Some(3));
}

#[test]
fn simulate_is_byte_identical_across_thread_counts() {
    let args = [
        "simulate",
        "--error",
        "pauli-channel:0.05",
        "--delta",
        "0.1,0.3",
        "--tau",
        "40",
        "--runs",
        "3000",
        "--seed",
        "9",
    ];
    let one = qerr_env(&args, Some("1"));
    let many = qerr_env(&args, Some("4"));
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn anneal_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let circuit = fixture("single_qubit.circuit");
    let model = fixture("clifford1_gate_dependent.json");
    let run = |threads: &str, best: &Path| {
        qerr_env(
            &[
                "anneal",
                "--circuit",
                &circuit,
                "--error",
                &model,
                "--iterations",
                "300",
                "--restarts",
                "3",
                "--seed",
                "4",
                "--best-circuit",
                best.to_str().unwrap(),
            ],
            Some(threads),
        )
    };
    let (b1, b4) = (tmp(&dir, "b1"), tmp(&dir, "b4"));
    let one = run("1", &b1);
    let many = run("4", &b4);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, many.stdout);
    assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b4).unwrap());
    let text = stdout(&one);
    assert!(text.starts_with("restart,eta,u_current,u_best,temperature,accepted\n"));
    assert_eq!(rows(&text).len(), 900);
}

#[test]
fn anneal_gate_limited_best_circuit_uses_subset() {
    let dir = tempfile::tempdir().unwrap();
    let best = tmp(&dir, "best.circuit");
    let o = qerr(&[
        "anneal",
        "--group",
        "clifford:2",
        "--circuit",
        &fixture("two_qubit.circuit"),
        "--error",
        "pauli-product:0.990,0.006,0.003,0.001;0.980,0.002,0.014,0.004",
        "--gate-subset",
        "I,X,Y,Z,H,CNOT",
        "--c",
        "0.002",
        "--iterations",
        "200",
        "--seed",
        "1",
        "--best-circuit",
        best.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&best).unwrap();
    assert_eq!(text.lines().count(), 50);
    let allowed = ["I", "X ", "Y ", "Z ", "H ", "CNOT "];
    for line in text.lines() {
        assert!(
            allowed.iter().any(|p| line == "I" || line.starts_with(p)),
            "{line}"
        );
    }
    let r = rows(&stdout(&o));
    let bests: Vec<f64> = r.iter().map(|row| row[2].parse().unwrap()).collect();
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tmp(&dir, "run.toml");
    std::fs::write(
        &cfg,
        "group = \"pauli:1\"\nerror = \"pauli-channel:0.1\"\n[analyze-random]\ntau = 7\ndelta = [0.1, 0.3]\n",
    )
    .unwrap();
    let o = qerr(&["analyze-random", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("delta,t,"));
    assert_eq!(rows(&text).len(), 16);
    let o = qerr(&[
        "analyze-random",
        "--config",
        cfg.to_str().unwrap(),
        "--tau",
        "3",
    ]);
    assert_eq!(rows(&stdout(&o)).len(), 8);
}

#[test]
fn json_output_and_gnuplot_script() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "curves.json");
    let o = qerr(&[
        "analyze-fixed",
        "--circuit",
        &fixture("single_qubit.circuit"),
        "--error",
        "pauli-channel:0.01",
        "--format",
        "json",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 101);
    assert!(v[0].get("lemma2_bound").is_none());

    let csv = tmp(&dir, "curves.csv");
    let o = qerr(&[
        "analyze-random",
        "--tau",
        "10",
        "--gnuplot",
        "-o",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let script = std::fs::read_to_string(dir.path().join("curves.csv.gp")).unwrap();
    assert!(script.contains("'curves.csv' using 1:2"));
}

#[test]
fn continuous_schema() {
    let o = qerr(&[
        "continuous",
        "--alpha",
        "0.1",
        "--t-max",
        "20",
        "--runs",
        "200",
        "--seed",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "t,e_dt_analytic,e_dt_mc,cdf_analytic,cdf_mc,max_lb"
    );
    let r = rows(&text);
    assert_eq!(r.len(), 21);
    assert_eq!(r[0][1], "0");
    let o = qerr(&["continuous", "--t-max", "5"]);
    assert!(rows(&stdout(&o)).iter().all(|row| row[2].is_empty()));
}

#[test]
fn gamma_reports_t_star() {
    let o = qerr(&[
        "analyze-random",
        "--group",
        "pauli:1",
        "--state",
        "sqrt(4/5)|0>+sqrt(1/5)|1>",
        "--error",
        "pauli-channel:0.2",
        "--delta",
        "0.2",
        "--gamma",
        "0.5",
        "--tau",
        "20",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("t* = 3"), "{err}");
}
