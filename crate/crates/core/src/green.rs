//! Approximate Green functions on balls and their two-sided bounds.

use crate::capacity::CapacityProblem;
use crate::elliptic::{
    assemble_stiffness, free_nodes, ConstrainedSystem, EllipticCoefficients, Field, SolveStats,
    SolverOptions,
};
use crate::error::{Error, Result};
use crate::grid::{dist, mask, BallSpec, Grid, NodeSet, Shape};

#[derive(Debug, Clone)]
pub struct GreenField {
    pub field: Field,
    pub y: Vec<f64>,
    /// Averaging radius; 0 means a unit load at the nearest node.
    pub rho: f64,
    pub ball: BallSpec,
    pub lambda: f64,
    pub bound: f64,
    pub stats: SolveStats,
}

/// Normalised load `b_i = ∫_{B_ρ(y)} φ_i / |B_ρ(y)|`. Cells whose centre
/// lies in `B_ρ(y)` give `1 / 2^N` of their volume to each corner, and the
/// total is scaled to exactly 1. Falls back to a unit nodal load when no
/// cell centre lies in the ball.
pub fn averaged_load(grid: &Grid, y: &[f64], rho: f64) -> Vec<f64> {
    let mut b = vec![0.0; grid.node_count()];
    let cells = if rho > 0.0 {
        grid.cells_in_ball(&BallSpec::new(y, rho))
    } else {
        Vec::new()
    };
    if cells.is_empty() {
        if rho > 0.0 {
            log::warn!("averaging radius {rho} holds no cell centre; using a nodal load");
        }
        b[grid.nearest_node(y)] = 1.0;
        return b;
    }
    if rho < grid.spacing() {
        log::warn!("averaging radius {rho} is below the grid spacing");
    }
    let corners = grid.corners_per_cell();
    let total = cells.len() as f64 * corners as f64;
    for &c in &cells {
        for &k in &grid.cell_corners(c)[..corners] {
            b[k] += 1.0;
        }
    }
    b.iter_mut().for_each(|v| *v /= total);
    b
}

/// Dirichlet problem on a ball, reusable for several singularities.
#[derive(Debug)]
pub struct GreenSolver {
    grid: Grid,
    ball: BallSpec,
    domain: NodeSet,
    system: ConstrainedSystem,
    lambda: f64,
    bound: f64,
    opts: SolverOptions,
}

impl GreenSolver {
    pub fn new(
        grid: &Grid,
        ball: &BallSpec,
        coeffs: &EllipticCoefficients,
        rel_tol: f64,
    ) -> Result<GreenSolver> {
        let opts = SolverOptions::with_tol(rel_tol);
        opts.validate()?;
        if !grid.contains_ball(ball) {
            return Err(Error::Geometry("Green ball does not fit in the grid box".into()));
        }
        let domain = mask(grid, &Shape::Ball(ball.clone()))?;
        let k = assemble_stiffness(grid, &domain, coeffs)?;
        let system = ConstrainedSystem::new(k, &free_nodes(&domain, None)?)?;
        Ok(GreenSolver {
            grid: grid.clone(),
            ball: ball.clone(),
            domain,
            system,
            lambda: coeffs.lambda(),
            bound: coeffs.bound(),
            opts,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ball(&self) -> &BallSpec {
        &self.ball
    }

    pub fn domain(&self) -> &NodeSet {
        &self.domain
    }

    pub fn system(&self) -> &ConstrainedSystem {
        &self.system
    }

    /// `G^y_ρ`: solves `a(v, G) = avg_{B_ρ(y)} v` with `G = 0` on the
    /// boundary of the ball.
    pub fn solve(&self, y: &[f64], rho: f64) -> Result<GreenField> {
        let d = self.grid.dim();
        if y.len() != d {
            return Err(Error::invalid("singularity has wrong dimension"));
        }
        if !self.ball.contains(y, 0.0) {
            return Err(Error::Geometry(format!("singularity {y:?} outside the ball")));
        }
        if dist(y, &self.ball.center) + rho > self.ball.radius * (1.0 + 1e-12) {
            return Err(Error::Geometry("averaging ball leaves the domain".into()));
        }
        let load = averaged_load(&self.grid, y, rho);
        let (field, stats) = self
            .system
            .solve(&load, &Field::zeros(&self.grid), &self.opts, None)?;
        Ok(GreenField {
            field,
            y: y.to_vec(),
            rho,
            ball: self.ball.clone(),
            lambda: self.lambda,
            bound: self.bound,
            stats,
        })
    }
}

pub fn approximate_green(
    grid: &Grid,
    ball: &BallSpec,
    coeffs: &EllipticCoefficients,
    y: &[f64],
    rho: f64,
    rel_tol: f64,
) -> Result<GreenField> {
    GreenSolver::new(grid, ball, coeffs, rel_tol)?.solve(y, rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenBoundReport {
    pub r: f64,
    pub q: f64,
    /// Laplacian capacity `Cap(B_r(y), B_R(x0))`.
    pub capacity: f64,
    /// `min Λ G Cap` over the shell.
    pub k_minus: f64,
    /// `max λ G Cap` over the shell.
    pub k_plus: f64,
    /// Smallest `K` making both sides of the two-sided bound hold.
    pub k_needed: f64,
    /// Smallest `α` in the pointwise upper bound over all nodes.
    pub alpha: f64,
    pub shell_nodes: usize,
}

/// Empirical constants of the two-sided bound
/// `Λ⁻¹K⁻¹ / Cap(B_r(y), B_R) <= G <= λ⁻¹K / Cap(B_r(y), B_R)` on nodes
/// near `∂B_r(y)`, plus the `α` of the upper bound `G <= (α/λ) |x-y|^{2-N}`
/// (`N = 3`) or `G <= (α/λ) log(4R/|x-y|)` (`N = 2`).
///
/// "Near `∂B_r(y)`" means `||x - y| - r| <= h √N / 2`.
pub fn check_green_bounds(g: &GreenField, q: f64, r: f64, rel_tol: f64) -> Result<GreenBoundReport> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("q must lie in (0, 1), got {q}")));
    }
    let grid = g.field.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let big_r = g.ball.radius;
    if dist(&g.y, &g.ball.center) + r / q > big_r * (1.0 + 1e-12) {
        return Err(Error::Geometry("B_{r/q}(y) is not inside the ball".into()));
    }
    let half_width = h * (d as f64).sqrt() / 2.0;
    let shell: Vec<usize> = (0..grid.node_count())
        .filter(|&n| (dist(&grid.coord(n)[..d], &g.y) - r).abs() <= half_width)
        .collect();
    if shell.is_empty() {
        return Err(Error::Geometry(format!("no nodes near the sphere of radius {r}")));
    }
    let domain = mask(grid, &Shape::Ball(g.ball.clone()))?;
    let problem = CapacityProblem::new(&domain, &EllipticCoefficients::laplacian(d), rel_tol)?;
    let e = mask(grid, &Shape::ball(&g.y, r))?.intersection(&domain)?;
    let capacity = problem.harmonic(&e)?.value;

    let v = g.field.values();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &n in &shell {
        lo = lo.min(v[n]);
        hi = hi.max(v[n]);
    }
    let k_minus = lo * g.bound * capacity;
    let k_plus = hi * g.lambda * capacity;
    let k_needed = k_plus.max(1.0 / k_minus);

    let mut alpha: f64 = 0.0;
    for &n in domain.indices() {
        let s = dist(&grid.coord(n)[..d], &g.y);
        if s == 0.0 {
            continue;
        }
        let kernel = match d {
            3 => 1.0 / s,
            _ => (4.0 * big_r / s).ln(),
        };
        alpha = alpha.max(g.lambda * v[n] / kernel);
    }
    Ok(GreenBoundReport {
        r,
        q,
        capacity,
        k_minus,
        k_plus,
        k_needed,
        alpha,
        shell_nodes: shell.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenFamilyReport {
    pub reports: Vec<GreenBoundReport>,
    /// One `K` covering every member.
    pub k: f64,
    /// One `α` covering every member.
    pub alpha: f64,
}

/// Runs [`check_green_bounds`] for every `(y, r)` pair with one solver and
/// returns the constants that work for all of them.
pub fn check_green_family(
    solver: &GreenSolver,
    members: &[(Vec<f64>, f64)],
    q: f64,
    rho: f64,
    rel_tol: f64,
) -> Result<GreenFamilyReport> {
    let mut reports = Vec::with_capacity(members.len());
    for (y, r) in members {
        let g = solver.solve(y, rho)?;
        reports.push(check_green_bounds(&g, q, *r, rel_tol)?);
    }
    let k = reports.iter().fold(0.0, |m: f64, r| m.max(r.k_needed));
    let alpha = reports.iter().fold(0.0, |m: f64, r| m.max(r.alpha));
    Ok(GreenFamilyReport { reports, k, alpha })
}

/// `G^{x₀}_{B_outer}` on the node lattice of `lattice`, over the grid
/// covering `B_inner(x₀)`, with averaging radius `2h`.
///
/// When the outer radius spans more than `max_cells` spacings the solve is
/// split in two: a coarse Green function on `B_outer` (spacing
/// `outer / max_cells`) supplies boundary values for a fine solve on
/// `B_{max(inner, 4h_c)}(x₀)`.
pub fn green_on_ball(
    lattice: &Grid,
    x0: &[f64],
    outer: f64,
    inner: f64,
    coeffs: &EllipticCoefficients,
    rel_tol: f64,
    max_cells: usize,
) -> Result<Field> {
    let d = lattice.dim();
    if x0.len() != d {
        return Err(Error::invalid("singularity has wrong dimension"));
    }
    if !(inner > 0.0 && inner < outer) {
        return Err(Error::Geometry(format!(
            "need 0 < inner < outer, got {inner} and {outer}"
        )));
    }
    if max_cells < 8 {
        return Err(Error::invalid("max_cells must be at least 8"));
    }
    let h = lattice.spacing();
    let outer_ball = BallSpec::new(x0, outer);
    let target = lattice.covering_ball(&BallSpec::new(x0, inner))?;
    if outer / h <= max_cells as f64 {
        let grid = lattice.covering_ball(&outer_ball)?;
        let g = GreenSolver::new(&grid, &outer_ball, coeffs, rel_tol)?.solve(x0, 2.0 * h)?;
        return g.field.crop_to(&target);
    }
    let hc = outer / max_cells as f64;
    let coarse = Grid::centered(d, x0, (max_cells + 1) as f64 * hc, hc)?;
    let gc = GreenSolver::new(&coarse, &outer_ball, coeffs, rel_tol)?.solve(x0, 2.0 * hc)?;
    let r_in = inner.max(4.0 * hc);
    let fine = lattice.covering_ball(&BallSpec::new(x0, r_in))?;
    let domain = mask(&fine, &Shape::ball(x0, r_in))?;
    let k = assemble_stiffness(&fine, &domain, coeffs)?;
    let sys = ConstrainedSystem::new(k, &free_nodes(&domain, None)?)?;
    let fixed = gc.field.resample(&fine)?;
    let load = averaged_load(&fine, x0, 2.0 * h);
    let (g, _) = sys.solve(&load, &fixed, &SolverOptions::with_tol(rel_tol), None)?;
    g.crop_to(&target)
}

/// Relative gap `|⟨b_{y₂}, G^{y₁}⟩ − ⟨b_{y₁}, G^{y₂}⟩| / max(...)` between
/// the averaged values of two Green functions at each other's pole.
pub fn symmetry_error(solver: &GreenSolver, y1: &[f64], y2: &[f64], rho: f64) -> Result<f64> {
    let g1 = solver.solve(y1, rho)?;
    let g2 = solver.solve(y2, rho)?;
    let b1 = averaged_load(solver.grid(), y1, rho);
    let b2 = averaged_load(solver.grid(), y2, rho);
    let dot = |b: &[f64], g: &Field| b.iter().zip(g.values()).map(|(x, y)| x * y).sum::<f64>();
    let (a, b) = (dot(&b2, &g1.field), dot(&b1, &g2.field));
    let scale = a.abs().max(b.abs());
    Ok(if scale == 0.0 { 0.0 } else { (a - b).abs() / scale })
}

/// Relative gap between `a(v, G^y_ρ)` and the discrete ball average
/// `⟨b_y, v⟩` for a test function `v`, which is set to 0 off the free
/// nodes of the solver first.
pub fn normalization_error(solver: &GreenSolver, g: &GreenField, v: &Field) -> Result<f64> {
    if v.grid() != solver.grid() || g.field.grid() != solver.grid() {
        return Err(Error::GridMismatch);
    }
    let mut w = vec![0.0; v.values().len()];
    for &i in solver.system().free() {
        w[i] = v.get(i);
    }
    let a = solver.system().matrix().bilinear(&w, g.field.values());
    let avg: f64 = averaged_load(solver.grid(), &g.y, g.rho)
        .iter()
        .zip(&w)
        .map(|(x, y)| x * y)
        .sum();
    let scale = a.abs().max(avg.abs());
    Ok(if scale == 0.0 { 0.0 } else { (a - avg).abs() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn load_sums_to_one() {
        let g = Grid::centered(2, &[0.0, 0.0], 1.0, 1.0 / 32.0).unwrap();
        for rho in [0.0, 1.0 / 16.0, 1.0 / 8.0, 0.01] {
            let b = averaged_load(&g, &[0.0, 0.0], rho);
            let s: f64 = b.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    fn disc_green_error(h: f64) -> f64 {
        let g = Grid::centered(2, &[0.0, 0.0], 1.0 + 2.0 * h, h).unwrap();
        let ball = BallSpec::new(&[0.0, 0.0], 1.0);
        let gf = approximate_green(&g, &ball, &EllipticCoefficients::laplacian(2), &[0.0, 0.0], 0.0, 1e-10)
            .unwrap();
        let mut worst: f64 = 0.0;
        for n in 0..g.node_count() {
            let x = g.coord(n);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if (0.3..=0.8).contains(&r) {
                let exact = (1.0 / r).ln() / (2.0 * PI);
                worst = worst.max(((gf.field.get(n) - exact) / exact).abs());
            }
        }
        worst
    }

    #[test]
    fn disc_green_matches_log() {
        // the staircase disc sits about 0.6 h inside the unit circle, which
        // dominates the error where log(1/r) is small
        let coarse = disc_green_error(1.0 / 64.0);
        let fine = disc_green_error(1.0 / 128.0);
        assert!(fine < 0.03, "{fine}");
        assert!(fine < 0.6 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn two_level_green_matches_single_level() {
        let h = 1.0 / 128.0;
        let lattice = Grid::centered(2, &[0.0, 0.0], 0.5, h).unwrap();
        let lap = EllipticCoefficients::laplacian(2);
        let one = green_on_ball(&lattice, &[0.0, 0.0], 1.0, 0.2, &lap, 1e-10, 256).unwrap();
        let two = green_on_ball(&lattice, &[0.0, 0.0], 1.0, 0.2, &lap, 1e-10, 32).unwrap();
        assert_eq!(one.grid(), two.grid());
        let (mut worst_pair, mut worst_exact): (f64, f64) = (0.0, 0.0);
        for n in 0..one.grid().node_count() {
            let x = one.grid().coord(n);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if !(0.05..=0.2).contains(&r) {
                continue;
            }
            let exact = (1.0 / r).ln() / (2.0 * std::f64::consts::PI);
            worst_pair = worst_pair.max((one.get(n) - two.get(n)).abs() / exact);
            worst_exact = worst_exact.max((two.get(n) - exact).abs() / exact);
        }
        assert!(worst_pair < 0.02, "{worst_pair}");
        assert!(worst_exact < 0.03, "{worst_exact}");
    }

    #[test]
    fn green_is_nonnegative_and_vanishes_outside() {
        let h = 1.0 / 32.0;
        let g = Grid::centered(2, &[0.0, 0.0], 1.0 + h, h).unwrap();
        let ball = BallSpec::new(&[0.0, 0.0], 1.0);
        let s = GreenSolver::new(&g, &ball, &EllipticCoefficients::laplacian(2), 1e-10).unwrap();
        let gf = s.solve(&[0.2, -0.1], 2.0 * h).unwrap();
        assert!(gf.field.values().iter().all(|&v| v >= -1e-10));
        for &b in s.domain().boundary().indices() {
            assert_eq!(gf.field.get(b), 0.0);
        }
    }

    #[test]
    fn rejects_outside_singularity() {
        let h = 1.0 / 16.0;
        let g = Grid::centered(2, &[0.0, 0.0], 1.0 + h, h).unwrap();
        let ball = BallSpec::new(&[0.0, 0.0], 0.5);
        let s = GreenSolver::new(&g, &ball, &EllipticCoefficients::laplacian(2), 1e-8).unwrap();
        assert!(matches!(s.solve(&[0.8, 0.0], 0.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn concentric_bounds_near_one() {
        let h = 1.0 / 64.0;
        let g = Grid::centered(2, &[0.0, 0.0], 1.0 + h, h).unwrap();
        let ball = BallSpec::new(&[0.0, 0.0], 1.0);
        let gf = approximate_green(&g, &ball, &EllipticCoefficients::laplacian(2), &[0.0, 0.0], 2.0 * h, 1e-10)
            .unwrap();
        let rep = check_green_bounds(&gf, 0.5, 0.25, 1e-10).unwrap();
        assert!(rep.k_needed >= 1.0 && rep.k_needed < 2.0, "{rep:?}");
        assert!(rep.k_minus > 0.5 && rep.k_plus < 2.0);
        assert!(rep.alpha.is_finite() && rep.alpha > 0.0);
        assert!(check_green_bounds(&gf, 0.5, 0.6, 1e-10).is_err());
    }

    #[test]
    fn symmetry_and_normalization_hold_to_solver_tolerance() {
        let h = 1.0 / 64.0;
        let tol = 1e-10;
        let g = Grid::centered(2, &[0.0, 0.0], 1.0 + h, h).unwrap();
        let ball = BallSpec::new(&[0.0, 0.0], 1.0);
        let solver = GreenSolver::new(&g, &ball, &EllipticCoefficients::laplacian(2), tol).unwrap();
        let e = symmetry_error(&solver, &[0.1, 0.2], &[-0.3, 0.05], 2.0 * h).unwrap();
        assert!(e <= 5.0 * tol, "{e}");
        let gf = solver.solve(&[0.1, 0.2], 2.0 * h).unwrap();
        for k in 1..=3 {
            let v = Field::from_fn(&g, |x| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0) * (2.0 + (k as f64 * x[0]).sin()));
            let e = normalization_error(&solver, &gf, &v).unwrap();
            assert!(e <= 2.0 * tol, "{e}");
        }
    }
}
