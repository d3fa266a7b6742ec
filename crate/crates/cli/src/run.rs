//! Task pipelines behind `run`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wienerlab::capacity::CapacityProblem;
use wienerlab::elliptic::Field;
use wienerlab::energy::{
    continuity_report, energy_profile, integration_lemma, verify_energy_decay, verify_mu_energy_decay,
    EnergyOptions, EnergyProfile, EstimateFit,
};
use wienerlab::green::{check_green_bounds, normalization_error, symmetry_error, GreenSolver};
use wienerlab::grid::{dist, mask, BallSpec, Grid, Shape};
use wienerlab::measures::MeasureSpec;
use wienerlab::relaxed::{
    ball_grid, local_oscillation, minimize_functional_check, open_nodes, solve_classical, solve_nested,
    solve_relaxed, NestedProblem, RelaxedProblem, Solution,
};
use wienerlab::wiener::{classify_point, delta_profile, ClassifyOptions, Verdict, WienerOptions, WienerProfile};
use wienerlab::Error;

use crate::config::{ConfigError, Expected, ScenarioConfig, Task};
use crate::plot;
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Pass,
    Degenerate,
    Inconclusive,
    Fail,
    ConfigError,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Degenerate => "degenerate",
            Status::Inconclusive => "inconclusive",
            Status::Fail => "fail",
            Status::ConfigError => "config_error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass | Status::Degenerate => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
            Status::ConfigError => 3,
        }
    }

    /// Ordering used to pick the worst status of a suite.
    pub fn severity(&self) -> u8 {
        match self {
            Status::Pass | Status::Degenerate => 0,
            Status::Inconclusive => 1,
            Status::Fail => 2,
            Status::ConfigError => 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub plots: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub task: Option<Task>,
    pub status: Status,
    pub verdict: Option<Verdict>,
    pub dim: Option<usize>,
    pub h: Option<f64>,
    pub q: Option<f64>,
    pub k: Option<f64>,
    pub beta: Option<f64>,
    pub max_residual: Option<f64>,
    /// Why the run did not pass, empty otherwise.
    pub messages: Vec<String>,
    /// Task-dependent key numbers, in a fixed order.
    pub numbers: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    pub files: Vec<String>,
    pub wall_time: f64,
}

impl RunReport {
    fn new(cfg: &ScenarioConfig) -> RunReport {
        RunReport {
            name: cfg.name.clone(),
            task: Some(cfg.task),
            status: Status::Pass,
            verdict: None,
            dim: Some(cfg.dim),
            h: Some(cfg.h),
            q: None,
            k: None,
            beta: None,
            max_residual: None,
            messages: Vec::new(),
            numbers: Vec::new(),
            tables: Vec::new(),
            files: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn config_error(name: &str, err: &ConfigError) -> RunReport {
        RunReport {
            name: name.to_string(),
            task: None,
            status: Status::ConfigError,
            verdict: None,
            dim: None,
            h: None,
            q: None,
            k: None,
            beta: None,
            max_residual: None,
            messages: vec![err.to_string()],
            numbers: Vec::new(),
            tables: Vec::new(),
            files: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.numbers.iter().find(|(k, _)| k == key).map(|p| p.1)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn note(&mut self, key: &str, value: f64) {
        self.numbers.push((key.to_string(), value));
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.status = Status::Fail;
        self.messages.push(msg.into());
    }

    fn residual(&mut self, r: f64) {
        self.max_residual = Some(self.max_residual.map_or(r, |m| m.max(r)));
    }

    /// Key/value table of the key numbers and messages.
    fn summary_table(&self) -> Table {
        let mut t = Table::new("summary", &["key", "value"]);
        t.push(vec!["scenario".into(), self.name.as_str().into()]);
        t.push(vec!["task".into(), self.task.map(|t| t.as_str()).into()]);
        t.push(vec!["status".into(), self.status.as_str().into()]);
        t.push(vec!["verdict".into(), self.verdict.map(|v| v.as_str()).into()]);
        for (k, v) in &self.numbers {
            t.push(vec![k.as_str().into(), (*v).into()]);
        }
        for m in &self.messages {
            t.push(vec!["message".into(), m.as_str().into()]);
        }
        t
    }
}

/// Runs one scenario and writes its CSV files (and SVG plots when asked)
/// to `<out_dir>/<name>/`. Solver errors make the run fail; they are not
/// returned as errors.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport::new(cfg);
    let dir = opts.out_dir.join(&cfg.name);
    let mut svgs: Vec<(String, String)> = Vec::new();
    let outcome = match cfg.task {
        Task::CapacitySweep => capacity_sweep(cfg, &mut report, &mut svgs),
        Task::GreenCheck => green_check(cfg, &mut report),
        Task::WienerClassify => wiener_classify(cfg, &mut report, &mut svgs),
        Task::RelaxedSolve => relaxed_solve(cfg, &mut report, &mut svgs),
        Task::EnergyVerify => energy_verify(cfg, &mut report, &mut svgs),
        Task::IntegrationLemma => lemma_task(cfg, &mut report),
    };
    if let Err(e) = outcome {
        report.fail(format!("{}: {e}", cfg.task));
    }
    report.tables.push(report.summary_table());
    if let Err(e) = write_outputs(&dir, &mut report, if opts.plots { &svgs[..] } else { &[] }) {
        report.fail(format!("cannot write outputs to {}: {e}", dir.display()));
    }
    report.wall_time = start.elapsed().as_secs_f64();
    report
}

fn write_outputs(dir: &Path, report: &mut RunReport, svgs: &[(String, String)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for t in &report.tables {
        files.push(t.write(dir)?);
    }
    for (name, svg) in svgs {
        std::fs::write(dir.join(name), svg)?;
        files.push(name.clone());
    }
    report.files = files;
    Ok(())
}

fn ratio_tag(x: f64) -> String {
    format!("{x}")
}

fn spacings(cfg: &ScenarioConfig, extra: usize) -> Vec<f64> {
    (0..=extra).map(|l| cfg.h / (cfg.refine as f64).powi(l as i32)).collect()
}

/// Closed form of `Cap(B_ρ, B_R)` for the Laplacian.
pub fn analytic_capacity(dim: usize, rho: f64, outer: f64) -> f64 {
    use std::f64::consts::PI;
    match dim {
        2 => 2.0 * PI / (outer / rho).ln(),
        _ => 4.0 * PI / (1.0 / rho - 1.0 / outer),
    }
}

fn condenser_grid(cfg: &ScenarioConfig, center: &[f64], outer: f64, h: f64) -> wienerlab::Result<Grid> {
    match cfg.bbox.as_ref() {
        Some(b) => {
            let bbox: Vec<(f64, f64)> = b.iter().map(|r| (r[0], r[1])).collect();
            Grid::new(cfg.dim, &bbox, h)?.crop_to_ball(&BallSpec::new(center, outer))
        }
        None => ball_grid(center, outer, h),
    }
}

fn capacity_sweep(cfg: &ScenarioConfig, report: &mut RunReport, svgs: &mut Vec<(String, String)>) -> wienerlab::Result<()> {
    let c = cfg.capacity.as_ref().expect("validated");
    let center = cfg.capacity_center().expect("validated");
    let coeffs = cfg.coefficients();
    let mut table = Table::new(
        "capacity",
        &["scenario", "N", "h", "set", "rho", "value", "residual", "cap_mu", "reference", "rel_error"],
    );
    let reference = |rho: f64| -> Option<f64> {
        match (&cfg.expected, c.analytic) {
            (Some(Expected::Value(v)), _) => Some(*v),
            (_, true) => Some(analytic_capacity(cfg.dim, rho, c.outer_factor * rho)),
            _ => None,
        }
    };
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); c.radii.len()];
    for (level, h) in spacings(cfg, c.refinements).into_iter().enumerate() {
        for (i, &rho) in c.radii.iter().enumerate() {
            let outer = c.outer_factor * rho;
            let grid = condenser_grid(cfg, &center, outer, h)?;
            let domain = mask(&grid, &Shape::ball(&center, outer))?;
            let e = mask(&grid, &Shape::ball(&center, rho))?.intersection(&domain)?;
            let problem = CapacityProblem::new(&domain, &coeffs, cfg.rel_tol)?;
            let cap = problem.harmonic(&e)?;
            report.residual(cap.residual);
            let cap_mu = if cfg.mu.is_zero() {
                None
            } else {
                let mu = cfg.mu.to_model().realize(&grid)?;
                let r = problem.mu_capacity(&e, &mu)?;
                report.residual(r.residual);
                Some(r.value)
            };
            let reference = reference(rho);
            let err = reference.map(|r| (cap.value - r) / r);
            if let Some(err) = err {
                errors[i].push(err.abs());
            }
            table.push(vec![
                cfg.name.as_str().into(),
                cfg.dim.into(),
                h.into(),
                format!("B_rho/B_{}rho", ratio_tag(c.outer_factor)).into(),
                rho.into(),
                cap.value.into(),
                cap.residual.into(),
                cap_mu.into(),
                reference.into(),
                err.into(),
            ]);
            if level == 0 && i == 0 && cfg.dim == 2 {
                svgs.push(("potential.svg".into(), heatmap(&cap.potential)?));
            }
        }
    }
    for (i, errs) in errors.iter().enumerate() {
        let rho = c.radii[i];
        if let (Some(tol), Some(&last)) = (c.tolerance, errs.last()) {
            report.note(&format!("rel_error_rho_{}", ratio_tag(rho)), last);
            if last > tol {
                report.fail(format!("capacity at rho = {rho}: relative error {last:.4e} exceeds {tol}"));
            }
        }
        if let Some(ratio) = c.convergence_ratio {
            for w in errs.windows(2) {
                let r = w[1] / w[0];
                report.note(&format!("error_ratio_rho_{}", ratio_tag(rho)), r);
                if r > ratio {
                    report.fail(format!("capacity at rho = {rho}: error ratio {r:.3} exceeds {ratio}"));
                }
            }
        }
    }
    report.tables.push(table);
    Ok(())
}

fn heatmap(f: &Field) -> wienerlab::Result<String> {
    let g = f.grid();
    let axis = |a: usize| -> Vec<f64> {
        (0..g.counts()[a])
            .map(|i| g.min_corner()[a] + i as f64 * g.spacing())
            .collect()
    };
    plot::field_heatmap(&axis(0), &axis(1), f.values()).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn green_check(cfg: &ScenarioConfig, report: &mut RunReport) -> wienerlab::Result<()> {
    let gc = cfg.green.clone().unwrap_or_default();
    let x0 = cfg.x0();
    let big_r = cfg.radius();
    let coeffs = cfg.coefficients();
    let tol = cfg.rel_tol;
    let ball = BallSpec::new(x0, big_r);
    let mut table = Table::new(
        "green_bounds",
        &["h", "ratio", "r", "capacity", "k_minus", "k_plus", "k_needed", "alpha", "shell_nodes"],
    );
    let mut ks: Vec<Vec<f64>> = Vec::new();
    let mut coarse = None;
    for h in spacings(cfg, 1) {
        let grid = ball_grid(x0, big_r, h)?;
        let solver = GreenSolver::new(&grid, &ball, &coeffs, tol)?;
        let g = solver.solve(x0, 2.0 * h)?;
        report.residual(g.stats.residual);
        let mut row = Vec::new();
        for &ratio in &gc.ratios {
            let rep = check_green_bounds(&g, ratio, ratio * big_r, tol)?;
            table.push(vec![
                h.into(),
                ratio.into(),
                rep.r.into(),
                rep.capacity.into(),
                rep.k_minus.into(),
                rep.k_plus.into(),
                rep.k_needed.into(),
                rep.alpha.into(),
                rep.shell_nodes.into(),
            ]);
            row.push(rep.k_needed);
        }
        ks.push(row);
        if coarse.is_none() {
            coarse = Some((solver, g));
        }
    }
    let (solver, g) = coarse.expect("two resolutions");
    for (i, &ratio) in gc.ratios.iter().enumerate() {
        let (k0, k1) = (ks[0][i], ks[1][i]);
        let change = (k1 - k0).abs() / k0;
        report.note(&format!("k_ratio_{}", ratio_tag(ratio)), k0);
        report.note(&format!("k_change_ratio_{}", ratio_tag(ratio)), change);
        for k in [k0, k1] {
            if !(k >= gc.k_range[0] && k <= gc.k_range[1]) {
                report.fail(format!("K = {k:.4} at r/R = {ratio} outside {:?}", gc.k_range));
            }
        }
        if change > gc.max_k_change {
            report.fail(format!("K changes by {change:.3} under refinement at r/R = {ratio}"));
        }
    }
    let mut checks = Table::new("green_checks", &["check", "index", "value", "limit"]);
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let d = cfg.dim;
    let h = cfg.h;
    let random_point = |rng: &mut ChaCha8Rng, radius: f64| -> Vec<f64> {
        loop {
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
            if p.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
                return p.iter().zip(x0).map(|(a, b)| a + b).collect();
            }
        }
    };
    let mut worst_sym: f64 = 0.0;
    for i in 0..gc.symmetry_pairs {
        let y1 = random_point(&mut rng, 0.5 * big_r);
        let y2 = random_point(&mut rng, 0.5 * big_r);
        if dist(&y1, &y2) < 4.0 * h {
            continue;
        }
        let e = symmetry_error(&solver, &y1, &y2, 2.0 * h)?;
        worst_sym = worst_sym.max(e);
        checks.push(vec!["symmetry".into(), i.into(), e.into(), (5.0 * tol).into()]);
    }
    let mut worst_norm: f64 = 0.0;
    for i in 0..gc.samples {
        let freq: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..4.0)).collect();
        let phase: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let amp = rng.gen_range(0.1..0.9);
        let v = Field::from_fn(solver.grid(), |x| {
            let s2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
            let wave: f64 = (0..d).map(|k| (freq[k] * x[k] / big_r + phase[k]).sin()).sum::<f64>() / d as f64;
            (big_r * big_r - s2).max(0.0) * (1.0 + amp * wave)
        });
        let e = normalization_error(&solver, &g, &v)?;
        worst_norm = worst_norm.max(e);
        checks.push(vec!["normalization".into(), i.into(), e.into(), (2.0 * tol).into()]);
    }
    report.note("symmetry_error", worst_sym);
    report.note("normalization_error", worst_norm);
    if worst_sym > 5.0 * tol {
        report.fail(format!("Green symmetry error {worst_sym:.3e} exceeds 5·rel_tol"));
    }
    if worst_norm > 2.0 * tol {
        report.fail(format!("normalization error {worst_norm:.3e} exceeds 2·rel_tol"));
    }
    report.tables.push(table);
    report.tables.push(checks);
    Ok(())
}

fn wiener_options(cfg: &ScenarioConfig) -> WienerOptions {
    WienerOptions {
        ratio: cfg.q_w,
        levels: cfg.levels,
        rel_tol: cfg.rel_tol,
        denominator: cfg.denominator(),
    }
}

fn wiener_at(cfg: &ScenarioConfig, h: f64) -> wienerlab::Result<WienerProfile> {
    let x0 = cfg.x0();
    let grid = ball_grid(x0, 2.0 * cfg.radius(), h)?;
    let mu = cfg.mu.to_model().realize(&grid)?;
    delta_profile(&grid, x0, cfg.radius(), &mu, &cfg.coefficients(), &wiener_options(cfg))
}

fn push_profile(table: &mut Table, p: &WienerProfile) {
    for (level, rho, cap_mu, cap, delta, integral, omega) in p.rows() {
        table.push(vec![
            p.h.into(),
            level.into(),
            rho.into(),
            cap_mu.into(),
            cap.into(),
            delta.into(),
            integral.into(),
            omega.into(),
        ]);
    }
}

fn profile_table() -> Table {
    Table::new("wiener_profile", &["h", "level", "rho", "cap_mu", "cap", "delta", "integral", "omega"])
}

/// Classifies `x0` from profiles at `h` and `h / refine`, checking the
/// bounds on `δ` and `ω` of both.
fn classify(
    cfg: &ScenarioConfig,
    report: &mut RunReport,
    svgs: &mut Vec<(String, String)>,
) -> wienerlab::Result<(WienerProfile, WienerProfile, Verdict)> {
    let hs = spacings(cfg, 1);
    let coarse = wiener_at(cfg, hs[0])?;
    let fine = wiener_at(cfg, hs[1])?;
    let mut table = profile_table();
    for p in [&coarse, &fine] {
        push_profile(&mut table, p);
        for v in p.bound_violations() {
            report.fail(format!("bound violated at h = {}: {v}", p.h));
        }
    }
    let c = classify_point(&coarse, &fine, &ClassifyOptions::default())?;
    report.note("tail_slope_coarse", c.slope_coarse);
    report.note("tail_slope_fine", c.slope_fine);
    report.note("max_delta_change", c.max_change);
    report.verdict = Some(c.verdict);
    if let Some(expected) = cfg.expected_verdict() {
        if expected != c.verdict {
            report.fail(format!("verdict {} differs from expected {}", c.verdict.as_str(), expected.as_str()));
        }
    }
    let rows = fine.rows();
    let svg = plot::delta_omega(
        &rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.4).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.6).collect::<Vec<_>>(),
    );
    match svg {
        Ok(s) => svgs.push(("delta_omega.svg".into(), s)),
        Err(e) => log::warn!("{}: no δ/ω plot: {e}", cfg.name),
    }
    report.tables.push(table);
    Ok((coarse, fine, c.verdict))
}

fn wiener_classify(cfg: &ScenarioConfig, report: &mut RunReport, svgs: &mut Vec<(String, String)>) -> wienerlab::Result<()> {
    let (_, _, verdict) = classify(cfg, report, svgs)?;
    if verdict == Verdict::Inconclusive && cfg.expected.is_none() && report.status == Status::Pass {
        report.status = Status::Inconclusive;
    }
    Ok(())
}

fn zero_on_obstacle(g: Field, mu: &MeasureSpec) -> wienerlab::Result<Field> {
    match mu {
        MeasureSpec::Obstacle(e) => {
            let mut v = g.into_values();
            for &i in e.indices() {
                v[i] = 0.0;
            }
            Field::from_values(e.grid(), v)
        }
        _ => Ok(g),
    }
}

fn relaxed_solve(cfg: &ScenarioConfig, report: &mut RunReport, svgs: &mut Vec<(String, String)>) -> wienerlab::Result<()> {
    let bbox = cfg.bounding_box().expect("validated");
    let grid = Grid::new(cfg.dim, &bbox, cfg.h)?;
    let shape = cfg.domain_shape().expect("validated");
    let domain = mask(&grid, &shape)?;
    let coeffs = cfg.coefficients();
    let mu = cfg.mu.to_model().realize(&grid)?;
    let nu = cfg.nu.to_model().realize(&grid)?;
    let g = cfg.datum.to_datum().realize(&grid);
    let problem = RelaxedProblem::new(&domain, &coeffs, mu, nu.clone(), g.clone())?;
    let sol = solve_relaxed(&problem, cfg.rel_tol)?;
    report.residual(sol.residual);
    report.note("energy", sol.energy);
    report.note("mu_term", sol.mu_term);
    report.note("functional", sol.functional);
    report.note("residual", sol.residual);
    report.note("iterations", sol.iterations as f64);
    match minimize_functional_check(&problem, &sol, 4, 0) {
        Ok(m) => {
            report.note("minimality_violations", m.violations() as f64);
            if m.violations() > 0 {
                report.fail(format!("{} perturbations lowered the functional", m.violations()));
            }
        }
        Err(Error::Hypothesis(msg)) => log::info!("{}: minimality check skipped: {msg}", cfg.name),
        Err(e) => return Err(e),
    }
    let rc = cfg.relaxed.clone().unwrap_or_default();
    if let Some(omega) = &rc.classical_domain {
        let open = open_nodes(&grid, &omega.to_shape())?;
        let classical = solve_classical(&open, &coeffs, &nu, &g, cfg.rel_tol)?;
        report.residual(classical.residual);
        let diff = sol.u.max_diff(&classical.u)?;
        report.note("classical_max_diff", diff);
        if diff > rc.equivalence_tol {
            report.fail(format!("relaxed and classical solutions differ by {diff:.3e}"));
        }
    }
    if !rc.osc_radii.is_empty() {
        let x0 = cfg.x0();
        let mut osc = Table::new("oscillation", &["rho", "osc", "max", "min", "average", "nodes"]);
        for &rho in &rc.osc_radii {
            let o = local_oscillation(&sol.u, x0, rho)?;
            osc.push(vec![rho.into(), o.osc.into(), o.max.into(), o.min.into(), o.average.into(), o.nodes.into()]);
        }
        report.tables.push(osc);
    }
    report.tables.push(solution_table(&sol.u));
    if cfg.dim == 2 {
        svgs.push(("solution.svg".into(), heatmap(&sol.u)?));
    }
    Ok(())
}

fn solution_table(u: &Field) -> Table {
    let g = u.grid();
    let d = g.dim();
    let names: &[&str] = if d == 2 { &["x", "y", "u"] } else { &["x", "y", "z", "u"] };
    let mut t = Table::new("solution", names);
    for n in 0..g.node_count() {
        let c = g.coord(n);
        let mut row: Vec<Cell> = c[..d].iter().map(|&x| x.into()).collect();
        row.push(u.get(n).into());
        t.push(row);
    }
    t
}

/// Local solution near `x0` at spacing `h`, with the realised `μ` and `ν`.
fn local_solution(cfg: &ScenarioConfig, h: f64) -> wienerlab::Result<(Solution, MeasureSpec, MeasureSpec, Option<f64>)> {
    let e = cfg.energy.as_ref().expect("validated");
    let x0 = cfg.x0();
    let coeffs = cfg.coefficients();
    match e.parent_h {
        Some(parent_h) => {
            let n = solve_nested(&NestedProblem {
                x0: x0.to_vec(),
                parent_radius: cfg.r0.expect("validated"),
                parent_h,
                local_radius: e.local_radius,
                h,
                coeffs,
                mu: cfg.mu.to_model(),
                nu: cfg.nu.to_model(),
                datum: cfg.datum.to_datum(),
                rel_tol: cfg.rel_tol,
            })?;
            let parent_residual = Some(n.parent_solution.residual);
            Ok((n.solution, n.local.mu, n.local.nu, parent_residual))
        }
        None => {
            let grid = ball_grid(x0, e.local_radius, h)?;
            let domain = mask(&grid, &Shape::ball(x0, e.local_radius))?;
            let mu = cfg.mu.to_model().realize(&grid)?;
            let nu = cfg.nu.to_model().realize(&grid)?;
            let g = zero_on_obstacle(cfg.datum.to_datum().realize(&grid), &mu)?;
            let p = RelaxedProblem::new(&domain, &coeffs, mu.clone(), nu.clone(), g)?;
            Ok((solve_relaxed(&p, cfg.rel_tol)?, mu, nu, None))
        }
    }
}

struct Resolution {
    h: f64,
    solution: Solution,
    mu: MeasureSpec,
    nu: MeasureSpec,
    profile: EnergyProfile,
    fit: EstimateFit,
}

fn energy_verify(cfg: &ScenarioConfig, report: &mut RunReport, svgs: &mut Vec<(String, String)>) -> wienerlab::Result<()> {
    let e = cfg.energy.clone().expect("validated");
    let x0 = cfg.x0();
    let coeffs = cfg.coefficients();
    let radii = cfg.energy_radii();
    report.q = Some(cfg.q);
    let (coarse_w, fine_w, verdict) = classify(cfg, report, svgs)?;
    let eopts = EnergyOptions {
        q: cfg.q,
        m: e.m,
        rel_tol: cfg.rel_tol,
        max_green_cells: e.max_green_cells,
        ..Default::default()
    };
    let mut levels = Vec::new();
    for (h, wiener) in spacings(cfg, 1).into_iter().zip([&coarse_w, &fine_w]) {
        let (solution, mu, nu, parent_residual) = local_solution(cfg, h)?;
        report.residual(solution.residual);
        if let Some(r) = parent_residual {
            report.residual(r);
        }
        let profile = energy_profile(&solution.u, x0, &radii, &mu, &nu, &coeffs, &eopts)?;
        let fit = verify_energy_decay(&profile, wiener)?;
        levels.push(Resolution {
            h,
            solution,
            mu,
            nu,
            profile,
            fit,
        });
    }
    let mut energy = Table::new(
        "energy_profile",
        &["h", "r", "V", "sup_u2", "gradient_term", "mu_term", "excluded", "E_mu", "kato"],
    );
    let mut fits = Table::new(
        "energy_fit",
        &["h", "r", "R", "lhs", "omega", "a", "b", "training", "ratio", "holds"],
    );
    let mut candidates = Table::new("energy_fit_candidates", &["h", "beta", "k", "passes"]);
    for l in &levels {
        for row in l.profile.rows() {
            let mut cells: Vec<Cell> = vec![l.h.into()];
            cells.extend(row.iter().map(|&x| Cell::from(x)));
            energy.push(cells);
        }
        for p in &l.fit.pairs {
            fits.push(vec![
                l.h.into(),
                p.r.into(),
                p.big_r.into(),
                p.lhs.into(),
                p.omega.into(),
                p.a.into(),
                p.b.into(),
                p.training.into(),
                p.ratio.into(),
                p.holds.into(),
            ]);
        }
        for &(beta, k, passes) in &l.fit.candidates {
            candidates.push(vec![l.h.into(), beta.into(), k.into(), passes.into()]);
        }
        if !l.fit.passed {
            report.fail(format!("no (k, β) with k <= 1e6 passes the validation pairs at h = {}", l.h));
        }
        if l.fit.k > e.k_max {
            report.fail(format!("fitted k = {:.4} exceeds {} at h = {}", l.fit.k, e.k_max, l.h));
        }
        if !l.profile.is_monotone(cfg.rel_tol) {
            report.fail(format!(
                "V decreases in r by {:.3e} at h = {}",
                l.profile.monotonicity_defect, l.h
            ));
        }
    }
    let (c, f) = (&levels[0], &levels[1]);
    report.k = Some(c.fit.k);
    report.beta = Some(c.fit.beta);
    report.note("k", c.fit.k);
    report.note("beta", c.fit.beta);
    report.note("k_refined", f.fit.k);
    report.note("beta_refined", f.fit.beta);
    let degenerate = levels.iter().all(|l| l.profile.values().iter().all(|&v| v == 0.0));
    let change = if degenerate { 0.0 } else { (f.fit.k - c.fit.k).abs() / c.fit.k };
    report.note("k_change", change);
    if change > e.k_stability {
        report.fail(format!("minimal passing k changes by {change:.3} under refinement"));
    }

    // continuity and oscillation on the refined solution
    let osc_radii = e
        .osc_radii
        .clone()
        .unwrap_or_else(|| (0..4).map(|k| cfg.radius() / 2f64.powi(k)).collect());
    let mut osc_table = Table::new("oscillation", &["rho", "osc", "max", "min", "average", "nodes"]);
    let oscillations = osc_radii
        .iter()
        .map(|&rho| local_oscillation(&f.solution.u, x0, rho))
        .collect::<wienerlab::Result<Vec<_>>>()?;
    for (rho, o) in osc_radii.iter().zip(&oscillations) {
        osc_table.push(vec![(*rho).into(), o.osc.into(), o.max.into(), o.min.into(), o.average.into(), o.nodes.into()]);
    }
    let first = &oscillations[0];
    let last = &oscillations[oscillations.len() - 1];
    let osc_ratio = if first.osc == 0.0 { 0.0 } else { last.osc / first.osc };
    report.note("osc_ratio", osc_ratio);
    let decreasing = f.profile.strictly_decreasing() && c.profile.strictly_decreasing();
    report.note("v_strictly_decreasing", if decreasing { 1.0 } else { 0.0 });
    if e.require_decreasing && !decreasing {
        report.fail("V is not strictly decreasing along the radii");
    }
    if let Some(max) = e.osc_ratio_max {
        if osc_ratio > max {
            report.fail(format!("oscillation ratio {osc_ratio:.4} exceeds {max}"));
        }
    }
    if let Some(min) = e.osc_ratio_min {
        if osc_ratio < min {
            report.fail(format!("oscillation ratio {osc_ratio:.4} is below {min}"));
        }
    }
    if verdict == Verdict::WienerPoint {
        let cont = continuity_report(verdict, &f.solution.u, x0, &osc_radii, &f.profile)?;
        report.note("average_ratio", cont.average_ratio);
        let outer = BallSpec::new(x0, 4.0 * radii[0]);
        if f.solution.u.grid().contains_ball(&outer) {
            let mu_fit = verify_mu_energy_decay(verdict, &f.solution.u, x0, &radii, &f.mu, &f.nu, &coeffs, &fine_w, cfg.rel_tol)?;
            report.note("mu_energy_k", mu_fit.k);
            report.note("mu_energy_beta", mu_fit.beta);
            let mut t = Table::new("mu_energy_fit", &["r", "R", "lhs", "omega", "a", "b", "training", "ratio", "holds"]);
            for p in &mu_fit.pairs {
                t.push(vec![
                    p.r.into(),
                    p.big_r.into(),
                    p.lhs.into(),
                    p.omega.into(),
                    p.a.into(),
                    p.b.into(),
                    p.training.into(),
                    p.ratio.into(),
                    p.holds.into(),
                ]);
            }
            report.tables.push(t);
            if !mu_fit.passed {
                report.fail("no (k, β) passes the μ-energy validation pairs");
            }
        }
    }
    match plot::energy_decay(&radii, &f.profile.values()) {
        Ok(s) => svgs.push(("energy_decay.svg".into(), s)),
        Err(e) => log::warn!("{}: no energy plot: {e}", cfg.name),
    }
    report.tables.extend([energy, fits, candidates, osc_table]);
    if verdict == Verdict::Inconclusive && cfg.expected.is_none() && report.status == Status::Pass {
        report.status = Status::Inconclusive;
    }
    if degenerate && report.status == Status::Pass {
        report.status = Status::Degenerate;
    }
    Ok(())
}

fn lemma_task(cfg: &ScenarioConfig, report: &mut RunReport) -> wienerlab::Result<()> {
    let l = cfg.lemma.clone().expect("validated");
    let mut cases: Vec<Vec<f64>> = Vec::new();
    if let Some(d) = &l.delta {
        cases.push(d.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(l.seed);
    for _ in 0..l.random_cases {
        cases.push((0..l.levels).map(|_| rng.gen_range(0.0..=1.0)).collect());
    }
    let mut table = Table::new("lemma", &["case", "level", "rho", "delta", "V", "recursion", "bound"]);
    let mut worst: f64 = 0.0;
    for (case, delta) in cases.iter().enumerate() {
        let mut v = vec![1.0];
        for i in 0..delta.len() - 1 {
            v.push(v[i] / (1.0 + l.k * delta[i]));
        }
        let b = integration_lemma(&v, delta, l.q, l.k, 1.0)?;
        for i in 0..delta.len() {
            worst = worst.max(b.recursion[i] / b.bound[i]);
            table.push(vec![
                case.into(),
                i.into(),
                b.radii[i].into(),
                delta[i].into(),
                v[i].into(),
                b.recursion[i].into(),
                b.bound[i].into(),
            ]);
        }
    }
    let (beta, k0) = wienerlab::energy::lemma_constants(l.k);
    report.note("beta", beta);
    report.note("k0", k0);
    report.note("max_recursion_over_bound", worst);
    if worst > 1.0 + 1e-12 {
        report.fail(format!("recursion exceeds the closed form by a factor {worst}"));
    }
    report.tables.push(table);
    Ok(())
}
