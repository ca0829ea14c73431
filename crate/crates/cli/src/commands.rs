//! The experiment subcommands. Each produces a [`Report`]; writing it out is
//! separate so tests can inspect results directly.

use std::collections::BTreeMap;
use std::fs;

use clap::ValueEnum;
use rand::Rng;
use rayon::prelude::*;

use indexfree::categorical::{required_samples, CategoryTable};
use indexfree::global_solver::{minimize_reconstructed, recover_finite_sum};
use indexfree::grad_estimators::quantized_full_gradient;
use indexfree::oracles::OracleSession;
use indexfree::problems::{make_counterexample, make_random_quadratic_sum, FiniteSumProblem, RandomQuadraticSpec};
use indexfree::rng::{derive_seed, stream_rng};
use indexfree::solvers::{
    catalyst_beta, default_catalyst_config, default_qsvrg_config, run_catalyst_with_config, run_gd_quantized,
    run_naive_sgd, run_qsvrg, RunRecord,
};

use crate::output::{comment_line, fmt_f64, line_chart, write_csv, write_text, Series, Table};
use crate::problem_doc::ProblemDoc;
use crate::settings::Resolved;
use crate::stats::{bootstrap_ratio_se, fitted_ratio, mean_se, median, wilson_interval};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Recover,
    Qsvrg,
    Catalyst,
    NaiveLb,
    Global,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Recover => "recover",
            Command::Qsvrg => "qsvrg",
            Command::Catalyst => "catalyst",
            Command::NaiveLb => "naive-lb",
            Command::Global => "global",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: Command,
    pub table: Table,
    pub plot: Option<String>,
    pub summary: Vec<String>,
    /// Whether the command's acceptance threshold held.
    pub check_passed: bool,
}

pub fn run(command: Command, r: &Resolved) -> Result<Report, CliError> {
    match command {
        Command::Recover => cmd_recover(r),
        Command::Qsvrg => cmd_qsvrg(r),
        Command::Catalyst => cmd_catalyst(r),
        Command::NaiveLb => cmd_naive_lb(r),
        Command::Global => cmd_global(r),
        Command::Compare => cmd_compare(r),
    }
}

/// Writes `<out-dir>/<command>.csv` and, when there is a plot, `.svg`.
pub fn write_report(report: &Report, r: &Resolved) -> Result<(), CliError> {
    fs::create_dir_all(&r.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", r.out_dir.display())))?;
    let name = report.command.name();
    write_csv(&r.out_dir.join(format!("{name}.csv")), &comment_line(name, r), &report.table)?;
    if let Some(svg) = &report.plot {
        write_text(&r.out_dir.join(format!("{name}.svg")), svg)?;
    }
    Ok(())
}

pub fn build_problem(r: &Resolved) -> Result<FiniteSumProblem, CliError> {
    match r.problem.as_deref() {
        Some("counterexample") => make_counterexample(r.n).map_err(|e| CliError::Config(e.to_string())),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            ProblemDoc::parse(&text)?.to_problem()
        }
        None => {
            let spec = RandomQuadraticSpec {
                n: r.n,
                dim: r.dim,
                smoothness: r.l,
                strong_convexity: r.mu,
                q_distinct: r.q,
                seed: r.seed,
            };
            make_random_quadratic_sum(&spec).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn solvable_problem(r: &Resolved) -> Result<FiniteSumProblem, CliError> {
    let p = build_problem(r)?;
    if p.optimum().is_none() {
        return Err(CliError::Config("problem has no unique minimizer".into()));
    }
    Ok(p)
}

/// Runs `f(trial, seed)` for every trial on a pool of `r.workers` threads;
/// output order is trial order.
fn trials<T: Send>(r: &Resolved, f: impl Fn(u64, u64) -> Result<T, CliError> + Sync) -> Result<Vec<T>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(r.workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| (0..r.trials).into_par_iter().map(|t| f(t, derive_seed(r.seed, t))).collect())
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn failure_summary(failures: u64, total: u64, delta: f64) -> String {
    let (lo, hi) = wilson_interval(failures, total);
    format!(
        "failure rate {:.4} ({failures}/{total}), 95% interval [{lo:.4}, {hi:.4}], target δ = {delta}",
        failures as f64 / total as f64
    )
}

fn cmd_recover(r: &Resolved) -> Result<Report, CliError> {
    let p = build_problem(r)?;
    let m = required_samples(p.n(), r.delta).map_err(solver_err)?;
    // Category label of each individual, by parameter record.
    let mut ids: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let labels: Vec<u64> = p.individuals().iter().map(|f| {
        let next = ids.len() as u64;
        *ids.entry(f.parameter_record()).or_insert(next)
    }).collect();
    let mut truth = vec![0u64; ids.len()];
    labels.iter().for_each(|&l| truth[l as usize] += 1);

    let outcomes = trials(r, |_, seed| {
        let ok = match r.family.as_str() {
            "labels" => {
                let mut rng = stream_rng(seed, 0);
                let mut table = CategoryTable::<u64>::new(p.n());
                for _ in 0..m {
                    table.ingest(labels[rng.random_range(0..p.n())]);
                }
                let mut recovered = vec![0u64; truth.len()];
                for ((label, _), k) in table.categories().iter().zip(table.quantized_counts()) {
                    recovered[*label as usize] = k;
                }
                recovered == truth
            }
            "gradient" => {
                let mut s = OracleSession::stochastic_first_order(&p, 1, seed).map_err(solver_err)?;
                let w = p.initial_point();
                quantized_full_gradient(&mut s, w, r.delta).map_err(solver_err)?.probe(&p, w)
            }
            _ => {
                let mut s = OracleSession::stochastic_global(&p, seed);
                recover_finite_sum(&mut s, r.delta).map_err(solver_err)?.matches(&p)
            }
        };
        Ok(ok)
    })?;
    let mut table = Table::new(&["trial", "m_used", "success"]);
    for (t, ok) in outcomes.iter().enumerate() {
        table.push(vec![t.to_string(), m.to_string(), u8::from(*ok).to_string()]);
    }
    let failures = outcomes.iter().filter(|ok| !**ok).count() as u64;
    Ok(Report {
        command: Command::Recover,
        table,
        plot: None,
        summary: vec![
            format!("{} recovery, n = {}, m = {m} samples per trial", r.family, p.n()),
            failure_summary(failures, r.trials, r.delta),
        ],
        check_passed: failures as f64 <= r.delta * r.trials as f64,
    })
}

fn trajectory_rows(table: &mut Table, trial: usize, run: &RunRecord) {
    for pt in &run.trajectory {
        table.push(vec![
            trial.to_string(),
            pt.outer_index.to_string(),
            pt.oracle_calls.to_string(),
            fmt_f64(pt.suboptimality),
            u8::from(run.succeeded).to_string(),
        ]);
    }
}

fn cmd_qsvrg(r: &Resolved) -> Result<Report, CliError> {
    let p = solvable_problem(r)?;
    let config = default_qsvrg_config(&p, r.delta, r.eps).map_err(solver_err)?;
    let runs = trials(r, |_, seed| {
        let mut s = OracleSession::stochastic_first_order(&p, 2, seed).map_err(solver_err)?;
        run_qsvrg(&p, &mut s, &config).map_err(solver_err)
    })?;
    let mut table = Table::new(&["trial", "round", "oracle_calls", "suboptimality", "succeeded"]);
    runs.iter().enumerate().for_each(|(t, run)| trajectory_rows(&mut table, t, run));

    let gap = p.initial_gap().unwrap_or(0.0);
    let good: Vec<Vec<f64>> =
        runs.iter().filter(|x| x.succeeded).map(|x| x.trajectory.iter().map(|p| p.suboptimality).collect()).collect();
    let failures = runs.iter().filter(|x| !x.succeeded).count() as u64;
    let floor = 1e-20 * gap;
    let mut summary = vec![format!(
        "K = {}, T = {}, η = {:.4e}, calls per run = {}",
        config.outer_k,
        config.inner_t,
        config.eta,
        runs.first().map_or(0, RunRecord::total_calls)
    )];
    let mut passed = failures as f64 <= r.delta * r.trials as f64;
    match (good.is_empty(), fitted_ratio(&good, floor)) {
        (false, Some(ratio)) => {
            let se = bootstrap_ratio_se(&good, floor, 200, r.seed);
            summary.push(format!("fitted per-round ratio {ratio:.4} (bootstrap se {se:.2e}) against target 2/3"));
            passed &= ratio <= 2.0 / 3.0 + 4.0 * se;
        }
        _ if config.outer_k == 0 => summary.push("eps exceeds the initial gap; no rounds needed".into()),
        _ => summary.push("too few rounds above the floating-point floor to fit a ratio".into()),
    }
    summary.push(failure_summary(failures, r.trials, r.delta));

    let plot = (config.outer_k > 0).then(|| {
        let mean: Vec<(f64, f64)> = runs[0]
            .trajectory
            .iter()
            .enumerate()
            .map(|(k, pt)| (pt.oracle_calls as f64, good.iter().map(|g| g[k]).sum::<f64>() / good.len().max(1) as f64))
            .collect();
        let bound: Vec<(f64, f64)> =
            mean.iter().enumerate().map(|(k, &(x, _))| (x, gap * (2.0f64 / 3.0).powi(k as i32))).collect();
        line_chart(
            "Q-SVRG mean suboptimality",
            "oracle calls",
            "F(x) - F*",
            &[Series { label: "mean over successful runs".into(), points: mean }, Series { label: "(2/3)^k Δ".into(), points: bound }],
            true,
        )
    });
    Ok(Report { command: Command::Qsvrg, table, plot, summary, check_passed: passed })
}

fn cmd_catalyst(r: &Resolved) -> Result<Report, CliError> {
    let p = solvable_problem(r)?;
    let config = default_catalyst_config(&p, r.delta, r.eps).map_err(solver_err)?;
    let runs = trials(r, |_, seed| {
        let mut s = OracleSession::stochastic_first_order(&p, 2, seed).map_err(solver_err)?;
        run_catalyst_with_config(&p, &mut s, &config, r.eps).map_err(solver_err)
    })?;
    let mut table = Table::new(&["trial", "stage", "oracle_calls", "suboptimality", "succeeded"]);
    runs.iter().enumerate().for_each(|(t, run)| trajectory_rows(&mut table, t, run));
    let reached: Vec<f64> = runs.iter().filter_map(|x| x.calls_to(r.eps)).map(|c| c as f64).collect();
    let all: Vec<f64> = runs.iter().map(|x| x.calls_to(r.eps).map_or(f64::INFINITY, |c| c as f64)).collect();
    let frac = reached.len() as f64 / runs.len() as f64;
    let summary = vec![
        format!(
            "β = {:.4e}, stages ≤ {}, subproblem T = {}",
            config.catalyst_beta, config.catalyst_iters, config.inner_t
        ),
        format!("{}/{} runs reached ε = {:.3e}; median calls-to-ε {}", reached.len(), runs.len(), r.eps, fmt_f64(median(&all))),
    ];
    let plot = line_chart(
        "Catalyst Q-SVRG",
        "oracle calls",
        "F(x) - F*",
        &runs
            .iter()
            .take(5)
            .enumerate()
            .map(|(t, run)| Series {
                label: format!("trial {t}"),
                points: run.trajectory.iter().map(|p| (p.oracle_calls as f64, p.suboptimality)).collect(),
            })
            .collect::<Vec<_>>(),
        true,
    );
    Ok(Report { command: Command::Catalyst, table, plot: Some(plot), summary, check_passed: frac >= 0.9 })
}

fn cmd_naive_lb(r: &Resolved) -> Result<Report, CliError> {
    let p = make_counterexample(r.n).map_err(solver_err)?;
    let mut table = Table::new(&["alpha", "m", "iters", "mean_final", "std_error", "floor", "z"]);
    let mut series = Vec::new();
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for (cell, &alpha) in r.alpha_grid.iter().enumerate() {
        for (cm, &m) in r.m_grid.iter().enumerate() {
            let cell_seed = derive_seed(r.seed, (cell * r.m_grid.len() + cm) as u64);
            let cell_r = Resolved { seed: cell_seed, ..r.clone() };
            let paths = trials(&cell_r, |_, seed| {
                let run = run_naive_sgd(&p, alpha, m, r.iters, seed).map_err(solver_err)?;
                Ok(run.trajectory.iter().map(|x| x.suboptimality).collect::<Vec<f64>>())
            })?;
            let finals: Vec<f64> = paths.iter().map(|x| x[r.iters]).collect();
            let (mean, se) = mean_se(&finals);
            let floor = alpha / (2.0 * m as f64 * (2.0 - alpha));
            let z = if se > 0.0 { (mean - floor).abs() / se } else if mean == floor { 0.0 } else { f64::INFINITY };
            passed &= z <= 4.0;
            worst = worst.max(z);
            table.push(vec![fmt_f64(alpha), m.to_string(), r.iters.to_string(), fmt_f64(mean), fmt_f64(se), fmt_f64(floor), fmt_f64(z)]);
            let points = (0..=r.iters)
                .map(|k| (k as f64, paths.iter().map(|x| x[k]).sum::<f64>() / paths.len() as f64))
                .collect();
            series.push(Series { label: format!("α={alpha}, m={m}"), points });
        }
    }
    let plot = line_chart("Naive-estimator SGD on the counterexample", "iteration", "mean F(x) - F*", &series, true);
    Ok(Report {
        command: Command::NaiveLb,
        table,
        plot: Some(plot),
        summary: vec![format!("largest |mean − α/(2m(2−α))| in standard errors: {worst:.2}")],
        check_passed: passed,
    })
}

fn cmd_global(r: &Resolved) -> Result<Report, CliError> {
    let p = solvable_problem(r)?;
    let m = required_samples(p.n(), r.delta).map_err(solver_err)?;
    let outcomes = trials(r, |_, seed| {
        let mut s = OracleSession::stochastic_global(&p, seed);
        let rec = recover_finite_sum(&mut s, r.delta).map_err(solver_err)?;
        let gap = minimize_reconstructed(&rec).ok().map(|(w, _)| p.suboptimality(&w).unwrap_or(f64::NAN));
        Ok((rec.matches(&p), gap))
    })?;
    let mut table = Table::new(&["trial", "m_used", "recovered", "suboptimality"]);
    let mut failures = 0;
    for (t, (ok, gap)) in outcomes.iter().enumerate() {
        if !(*ok && gap.is_some_and(|g| g <= 1e-10)) {
            failures += 1;
        }
        table.push(vec![t.to_string(), m.to_string(), u8::from(*ok).to_string(), fmt_f64(gap.unwrap_or(f64::NAN))]);
    }
    Ok(Report {
        command: Command::Global,
        table,
        plot: None,
        summary: vec![format!("n = {}, m = {m} global calls per trial", p.n()), failure_summary(failures, r.trials, r.delta)],
        check_passed: failures as f64 <= r.delta * r.trials as f64,
    })
}

const NAIVE_ITER_CAP: u64 = 100_000;
const GD_ITER_CAP: usize = 10_000;

fn cmd_compare(r: &Resolved) -> Result<Report, CliError> {
    let p = solvable_problem(r)?;
    let (l, mu) = (p.smoothness(), p.strong_convexity());
    let gap = p.initial_gap().unwrap_or(0.0);
    let gd_iters = if mu > 0.0 {
        ((l / mu) * (gap / r.eps).max(1.0).ln()).ceil() as usize
    } else {
        let r2 = (p.initial_point() - &p.optimum().expect("checked").point).norm_squared();
        (l * r2 / (2.0 * r.eps)).ceil() as usize
    }
    .clamp(1, GD_ITER_CAP);
    let naive_iters = (r.budget / r.m).clamp(1, NAIVE_ITER_CAP) as usize;
    // Half the largest stable step: α = 1 on the counterexample jumps straight
    // to the sample mean, which is exactly optimal by coincidence.
    let alpha = (0.5 / l).min(1.0);

    let methods = ["qsvrg", "catalyst-qsvrg", "quantized-gd", "naive-sgd"];
    let mut table = Table::new(&["method", "trials", "reached", "median_calls_to_eps"]);
    let mut series = Vec::new();
    let mut summary = vec![format!(
        "L/μ = {}, n² = {}, Catalyst β = {:.4e}, budget {} calls",
        if mu > 0.0 { fmt_f64(l / mu) } else { "inf".into() },
        p.n() * p.n(),
        catalyst_beta(p.n(), l, mu),
        r.budget
    )];
    for method in methods {
        if method == "qsvrg" && mu <= 0.0 {
            table.push(vec![method.into(), "0".into(), "0".into(), "n/a".into()]);
            continue;
        }
        let runs = trials(r, |_, seed| {
            let run = match method {
                "qsvrg" => {
                    let mut config = default_qsvrg_config(&p, r.delta, r.eps).map_err(solver_err)?;
                    // Rounds past the budget cannot count, so skip them.
                    let affordable = r.budget / config.inner_t.max(1) as u64 + 1;
                    config.outer_k = config.outer_k.min(affordable as usize);
                    let mut s = OracleSession::stochastic_first_order(&p, 2, seed).map_err(solver_err)?;
                    run_qsvrg(&p, &mut s, &config)
                }
                "catalyst-qsvrg" => {
                    let config = default_catalyst_config(&p, r.delta, r.eps).map_err(solver_err)?;
                    let mut s = OracleSession::stochastic_first_order(&p, 2, seed).map_err(solver_err)?;
                    run_catalyst_with_config(&p, &mut s, &config, r.eps)
                }
                "quantized-gd" => {
                    let mut s = OracleSession::stochastic_first_order(&p, 1, seed).map_err(solver_err)?;
                    run_gd_quantized(&p, &mut s, 1.0 / l, gd_iters, r.delta)
                }
                _ => run_naive_sgd(&p, alpha, r.m, naive_iters, seed),
            }
            .map_err(solver_err)?;
            Ok(run)
        })?;
        // A run counts once it stays within ε for the rest of its trajectory.
        let calls: Vec<f64> = runs
            .iter()
            .map(|x| x.settled_calls(r.eps).filter(|&c| c <= r.budget).map_or(f64::INFINITY, |c| c as f64))
            .collect();
        let reached = calls.iter().filter(|c| c.is_finite()).count();
        let med = median(&calls);
        let med_cell = if med.is_finite() { fmt_f64(med) } else { "DNF".into() };
        summary.push(format!("{method}: {reached}/{} reached ε, median calls {med_cell}", runs.len()));
        table.push(vec![method.into(), runs.len().to_string(), reached.to_string(), med_cell]);
        series.push(Series {
            label: method.into(),
            points: runs[0].trajectory.iter().map(|x| (x.oracle_calls as f64, x.suboptimality)).collect(),
        });
    }
    let plot = line_chart("Oracle calls to ε (trial 0)", "oracle calls", "F(x) - F*", &series, true);
    Ok(Report { command: Command::Compare, table, plot: Some(plot), summary, check_passed: true })
}
