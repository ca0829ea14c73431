use std::fs;
use std::path::Path;
use std::process::{Command as Proc, Output};

use indexfree_cli::commands::{run, Command};
use indexfree_cli::settings::{parse_config, Resolved, Settings};

fn bin(args: &[&str], out: &Path) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_indexfree"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn resolved(s: Settings) -> Resolved {
    Resolved::from_settings(s).unwrap()
}

#[test]
fn same_seed_same_bytes_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["qsvrg", "--n", "4", "--dim", "3", "--L", "2", "--mu", "1", "--eps", "1e-4", "--trials", "6", "--seed", "11"];
    assert!(bin(&args, &a).status.success());
    let mut more = args.to_vec();
    more.extend(["--workers", "3"]);
    assert!(bin(&more, &b).status.success());
    let ca = fs::read(a.join("qsvrg.csv")).unwrap();
    assert_eq!(ca, fs::read(b.join("qsvrg.csv")).unwrap());
    assert_eq!(fs::read(a.join("qsvrg.svg")).unwrap(), fs::read(b.join("qsvrg.svg")).unwrap());

    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap();
    assert!(comment.starts_with(&format!("# indexfree {} qsvrg {{", env!("CARGO_PKG_VERSION"))));
    assert!(comment.contains("\"seed\":11") && !comment.contains("workers"));
    assert_eq!(lines.next(), Some("trial,round,oracle_calls,suboptimality,succeeded"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin(&["recover", "--n", "3", "--trials", "20", "--check"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let bad = bin(&["recover", "--delta", "2"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("delta"));
    assert_eq!(bin(&["nonsense"], dir.path()).status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[qsvrgg]\nn = 2\n").unwrap();
    assert_eq!(bin(&["qsvrg", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(1));

    // One step is nowhere near the plateau, so the floor check fails.
    let fail = bin(
        &["naive-lb", "--n", "2", "--alpha-grid", "0.5", "--m-grid", "4", "--iters", "1", "--trials", "200", "--check"],
        dir.path(),
    );
    assert_eq!(fail.status.code(), Some(2), "{}", String::from_utf8_lossy(&fail.stdout));
    assert!(dir.path().join("naive-lb.csv").exists());
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[common]\nn = 5\nseed = 3\ntrials = 4\n\n[global]\nn = 2\ndelta = 0.1\n").unwrap();
    let out = bin(&["global", "--config", cfg.to_str().unwrap(), "--seed", "8"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("global.csv")).unwrap();
    let comment = text.lines().next().unwrap();
    for want in ["\"n\":2", "\"seed\":8", "\"trials\":4", "\"delta\":0.1"] {
        assert!(comment.contains(want), "{comment} lacks {want}");
    }
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn single_function_recovery_never_fails() {
    for family in ["labels", "gradient", "global"] {
        let r = resolved(Settings { n: Some(1), trials: Some(50), family: Some(family.into()), ..Settings::default() });
        let report = run(Command::Recover, &r).unwrap();
        assert!(report.table.rows.iter().all(|row| row[2] == "1"), "{family}");
        assert!(report.check_passed);
    }
}

#[test]
fn qsvrg_with_loose_target_takes_no_rounds() {
    let r = resolved(Settings { n: Some(3), dim: Some(2), eps: Some(1e12), trials: Some(3), ..Settings::default() });
    let report = run(Command::Qsvrg, &r).unwrap();
    assert!(report.table.rows.iter().all(|row| row[1] == "0" && row[2] == "0"));
    assert!(report.summary.iter().any(|s| s.contains("no rounds")));
    assert!(report.plot.is_none());
}

#[test]
fn naive_plateau_matches_floor() {
    let s = Settings {
        n: Some(4),
        alpha_grid: Some(vec![0.5]),
        m_grid: Some(vec![4]),
        iters: Some(60),
        trials: Some(400),
        ..Settings::default()
    };
    let report = run(Command::NaiveLb, &resolved(s)).unwrap();
    let row = &report.table.rows[0];
    assert_eq!(row[5].parse::<f64>().unwrap(), 0.5 / (2.0 * 4.0 * 1.5));
    assert!((row[5].parse::<f64>().unwrap() - 1.0 / 24.0).abs() < 1e-15);
    assert!(report.check_passed, "{row:?}");
}

#[test]
fn compare_separates_naive_from_quantized() {
    let s = Settings {
        problem: Some("counterexample".into()),
        n: Some(4),
        trials: Some(5),
        budget: Some(200_000),
        ..Settings::default()
    };
    let report = run(Command::Compare, &resolved(s)).unwrap();
    let cell = |m: &str| report.table.rows.iter().find(|r| r[0] == m).unwrap().clone();
    assert_eq!(cell("naive-sgd")[3], "DNF");
    assert_eq!(cell("qsvrg")[2], "5");
    assert_ne!(cell("catalyst-qsvrg")[3], "DNF");
}

#[test]
fn problem_document_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("p.json");
    fs::write(
        &doc,
        r#"{"smoothness": 2.0, "strong_convexity": 1.0, "initial_point": [1.0, 1.0],
            "individuals": [
              {"a": [[2.0, 0.0], [0.0, 1.0]], "b": [1.0, 0.0], "c": 0.0},
              {"a": [[1.0, 0.0], [0.0, 2.0]], "b": [0.0, 1.0], "c": 0.5}]}"#,
    )
    .unwrap();
    let s = Settings { problem: Some(doc.to_str().unwrap().into()), trials: Some(5), ..Settings::default() };
    let report = run(Command::Global, &resolved(s)).unwrap();
    assert!(report.table.rows.iter().all(|r| r[2] == "1"));

    let missing = Settings { problem: Some(dir.path().join("nope.json").to_str().unwrap().into()), ..Settings::default() };
    assert!(run(Command::Global, &resolved(missing)).is_err());
    assert!(parse_config("[common]\nproblem = \"counterexample\"\n", "compare").unwrap().problem.is_some());
}
