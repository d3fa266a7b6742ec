//! Runs every scenario file of a directory and writes `summary.csv`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ConfigError, ScenarioConfig};
use crate::run::{run_scenario, RunOptions, RunReport, Status};
use crate::table::Table;

/// Overrides applied to every scenario of a suite or a single run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub rel_tol: Option<f64>,
    pub refine: Option<usize>,
}

#[derive(Debug)]
pub struct SuiteReport {
    /// Sorted by scenario name.
    pub reports: Vec<RunReport>,
    pub summary: Table,
}

impl SuiteReport {
    pub fn worst(&self) -> Status {
        self.reports
            .iter()
            .map(|r| r.status)
            .max_by_key(Status::severity)
            .unwrap_or(Status::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&RunReport> {
        self.reports.iter().find(|r| r.name == name)
    }
}

/// `*.toml` files of `dir`, sorted by path.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, ConfigError> {
    let entries = std::fs::read_dir(dir).map_err(|source| ConfigError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads, validates and applies overrides to one scenario file.
pub fn load_scenario(path: &Path, o: Overrides) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig::load(path)?.with_overrides(o.rel_tol, o.refine)
}

/// Runs one file; configuration errors become a `config_error` report.
pub fn run_file(path: &Path, o: Overrides, opts: &RunOptions) -> RunReport {
    match load_scenario(path, o) {
        Ok(cfg) => run_scenario(&cfg, opts),
        Err(e) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            RunReport::config_error(&stem, &e)
        }
    }
}

/// Runs all scenarios of `dir` on `jobs` threads. Outputs do not depend on
/// `jobs`.
pub fn run_suite(dir: &Path, jobs: usize, o: Overrides, opts: &RunOptions) -> Result<SuiteReport, ConfigError> {
    let files = scenario_files(dir)?;
    if files.is_empty() {
        return Err(ConfigError::Invalid {
            key: "suite".into(),
            message: format!("no scenario files in {}", dir.display()),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ConfigError::Invalid {
            key: "jobs".into(),
            message: e.to_string(),
        })?;
    let mut reports: Vec<RunReport> = pool.install(|| files.par_iter().map(|p| run_file(p, o, opts)).collect());
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    let summary = summary_table(&reports);
    std::fs::create_dir_all(&opts.out_dir)
        .and_then(|_| summary.write(&opts.out_dir))
        .map_err(|source| ConfigError::Io {
            path: opts.out_dir.display().to_string(),
            source,
        })?;
    Ok(SuiteReport { reports, summary })
}

pub fn summary_table(reports: &[RunReport]) -> Table {
    let mut t = Table::new(
        "summary",
        &["scenario", "task", "N", "h", "q", "k", "beta", "max_residual", "verdict", "status"],
    );
    for r in reports {
        t.push(vec![
            r.name.as_str().into(),
            r.task.map(|t| t.as_str()).into(),
            r.dim.into(),
            r.h.into(),
            r.q.into(),
            r.k.into(),
            r.beta.into(),
            r.max_residual.into(),
            r.verdict.map(|v| v.as_str()).into(),
            r.status.as_str().into(),
        ]);
    }
    t
}
