//! Run settings: command-line flags layered over a TOML config file.
//!
//! The file has an optional `[common]` table and one table per subcommand
//! (`[recover]`, `[qsvrg]`, ...). Precedence is flag, then the subcommand
//! table, then `[common]`, then the built-in default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of every subcommand. Unset fields fall through to the next
/// layer.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Number of individual functions.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Smoothness constant.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: Option<f64>,
    /// Strong-convexity constant (0 for merely convex).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Number of distinct individuals.
    #[arg(long)]
    pub q: Option<usize>,
    /// Failure budget.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Absolute target suboptimality.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed; per-trial seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Recovery family: labels, gradient or global.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub m_grid: Option<Vec<u64>>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Oracle-call budget per run.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Naive-estimator sample size used by `compare`.
    #[arg(long)]
    pub m: Option<u64>,
    /// `counterexample` or a path to a JSON problem document.
    #[arg(long)]
    pub problem: Option<String>,
}

macro_rules! overlay {
    ($top:expr, $under:expr; $($field:ident),*) => {
        Settings { $($field: $top.$field.or($under.$field)),* }
    };
}

impl Settings {
    /// `self` wins wherever it is set.
    pub fn over(self, under: Settings) -> Settings {
        overlay!(self, under; n, dim, l, mu, q, delta, eps, trials, seed, out_dir, workers, family, alpha_grid, m_grid, iters, budget, m, problem)
    }
}

#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    common: Settings,
    #[serde(flatten)]
    sections: BTreeMap<String, Settings>,
}

pub const SUBCOMMANDS: [&str; 6] = ["recover", "qsvrg", "catalyst", "naive-lb", "global", "compare"];

/// Reads `path` and returns the layers relevant to `subcommand`, subcommand
/// table first.
pub fn load_config(path: &Path, subcommand: &str) -> Result<Settings, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, subcommand)
}

pub fn parse_config(text: &str, subcommand: &str) -> Result<Settings, CliError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(unknown) = file.sections.keys().find(|k| !SUBCOMMANDS.contains(&k.as_str())) {
        return Err(CliError::Config(format!("unknown config section [{unknown}]")));
    }
    let own = file.sections.get(subcommand).cloned().unwrap_or_default();
    Ok(own.over(file.common))
}

/// Fully resolved settings. Serialized into every CSV header comment, so
/// it holds only what affects results (not the worker count or paths).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub n: usize,
    pub dim: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    pub q: usize,
    pub delta: f64,
    pub eps: f64,
    pub trials: u64,
    pub seed: u64,
    pub family: String,
    pub alpha_grid: Vec<f64>,
    pub m_grid: Vec<u64>,
    pub iters: usize,
    pub budget: u64,
    pub m: u64,
    pub problem: Option<String>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

impl Resolved {
    pub fn from_settings(s: Settings) -> Result<Self, CliError> {
        let n = s.n.unwrap_or(10);
        let resolved = Resolved {
            n,
            dim: s.dim.unwrap_or(5),
            l: s.l.unwrap_or(1.0),
            mu: s.mu.unwrap_or(0.1),
            q: s.q.unwrap_or(n),
            delta: s.delta.unwrap_or(0.05),
            eps: s.eps.unwrap_or(1e-6),
            trials: s.trials.unwrap_or(100),
            seed: s.seed.unwrap_or(0),
            family: s.family.unwrap_or_else(|| "gradient".into()),
            alpha_grid: s.alpha_grid.unwrap_or_else(|| vec![0.1, 0.5, 1.0]),
            m_grid: s.m_grid.unwrap_or_else(|| vec![2, 8, 32]),
            iters: s.iters.unwrap_or(100),
            budget: s.budget.unwrap_or(10_000_000),
            m: s.m.unwrap_or(8),
            problem: s.problem,
            out_dir: s.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            workers: s.workers.unwrap_or(1),
        };
        resolved.validate()?;
        Ok(resolved)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        if self.n == 0 || self.dim == 0 {
            return bad("n and dim must be positive");
        }
        if !(self.l > 0.0 && self.l.is_finite()) || !(self.mu >= 0.0 && self.mu <= self.l) {
            return bad("need 0 <= mu <= L with L > 0");
        }
        if self.q == 0 || self.q > self.n {
            return bad("q must lie in 1..=n");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("alpha grid values must lie in (0, 1]");
        }
        if self.m_grid.is_empty() || self.m_grid.contains(&0) || self.m == 0 {
            return bad("sample sizes must be positive");
        }
        if self.iters == 0 {
            return bad("iters must be positive");
        }
        if !["labels", "gradient", "global"].contains(&self.family.as_str()) {
            return bad("family must be labels, gradient or global");
        }
        Ok(())
    }
}
