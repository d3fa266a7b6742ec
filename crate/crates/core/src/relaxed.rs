//! Relaxed Dirichlet problems `Lu + μu = ν` and the classical problem they
//! reduce to when `μ = ∞_E`.
//!
//! Every node that is not an unknown carries a prescribed value: `0` on
//! obstacle nodes, `g` everywhere else. The discrete analogue of compactly
//! supported test functions is "zero on every prescribed node".

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::{
    assemble_stiffness, element, energy_of, free_nodes, ConstrainedSystem, EllipticCoefficients,
    Field, ReferenceElement, SolverOptions, SparseSpdMatrix,
};
use crate::error::{Error, Result};
use crate::grid::{mask, BallSpec, Grid, NodeSet, Shape};
use crate::measures::{load_vector, mass_matrix, MeasureModel, MeasureSpec};

#[derive(Debug, Clone)]
pub struct RelaxedProblem {
    pub grid: Grid,
    pub domain: NodeSet,
    pub coeffs: EllipticCoefficients,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub g: Field,
}

impl RelaxedProblem {
    pub fn new(
        domain: &NodeSet,
        coeffs: &EllipticCoefficients,
        mu: MeasureSpec,
        nu: MeasureSpec,
        g: Field,
    ) -> Result<RelaxedProblem> {
        let grid = domain.grid().clone();
        let p = RelaxedProblem {
            grid,
            domain: domain.clone(),
            coeffs: coeffs.clone(),
            mu,
            nu,
            g,
        };
        p.validate()?;
        Ok(p)
    }

    /// Homogeneous boundary datum.
    pub fn homogeneous(
        domain: &NodeSet,
        coeffs: &EllipticCoefficients,
        mu: MeasureSpec,
        nu: MeasureSpec,
    ) -> Result<RelaxedProblem> {
        let g = Field::zeros(domain.grid());
        RelaxedProblem::new(domain, coeffs, mu, nu, g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.grid() != &self.grid || self.g.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        for m in [&self.mu, &self.nu] {
            if m.grid().is_some_and(|g| g != &self.grid) {
                return Err(Error::GridMismatch);
            }
        }
        match &self.mu {
            MeasureSpec::SignedDensity { .. } => {
                return Err(Error::UnsupportedMeasure("μ must be nonnegative"))
            }
            MeasureSpec::Density { density, .. } => {
                if let Some((node, &value)) =
                    density.values().iter().enumerate().find(|(_, v)| **v < 0.0)
                {
                    return Err(Error::NegativeDensity { node, value });
                }
            }
            _ => {}
        }
        if self.nu.is_obstacle() {
            return Err(Error::UnsupportedMeasure("ν must be a density"));
        }
        Ok(())
    }

    /// Same problem with `μ` replaced.
    pub fn with_mu(&self, mu: MeasureSpec) -> Result<RelaxedProblem> {
        RelaxedProblem::new(&self.domain, &self.coeffs, mu, self.nu.clone(), self.g.clone())
    }

    /// Same problem with `ν` replaced.
    pub fn with_nu(&self, nu: MeasureSpec) -> Result<RelaxedProblem> {
        RelaxedProblem::new(&self.domain, &self.coeffs, self.mu.clone(), nu, self.g.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: Field,
    /// Relative residual of the linear solve.
    pub residual: f64,
    pub iterations: usize,
    /// `a(u, u)`.
    pub energy: f64,
    /// `uᵀ M_μ u` (0 for obstacles).
    pub mu_term: f64,
    /// `F(u) = a(u, u) + ∫ u² dμ − 2⟨ν, u⟩`.
    pub functional: f64,
}

/// Assembled operator, load and prescribed values of a relaxed problem.
#[derive(Debug)]
pub struct RelaxedSystem {
    stiffness: SparseSpdMatrix,
    mass: Option<SparseSpdMatrix>,
    operator: SparseSpdMatrix,
    load: Vec<f64>,
    fixed: Field,
    system: ConstrainedSystem,
}

impl RelaxedSystem {
    pub fn assemble(p: &RelaxedProblem) -> Result<RelaxedSystem> {
        p.validate()?;
        let grid = &p.grid;
        let stiffness = assemble_stiffness(grid, &p.domain, &p.coeffs)?;
        let load = load_vector(grid, &p.domain, &p.nu)?;
        let mut fixed = p.g.values().to_vec();
        let (mass, pinned) = match &p.mu {
            MeasureSpec::Obstacle(e) => {
                let on_boundary = e.intersection(&p.domain.boundary())?;
                if let Some(&node) = on_boundary.indices().iter().find(|&&i| fixed[i] != 0.0) {
                    return Err(Error::Incompatible {
                        node,
                        value: fixed[node],
                    });
                }
                for &i in e.indices() {
                    fixed[i] = 0.0;
                }
                (None, Some(e.clone()))
            }
            MeasureSpec::Density { .. } => (Some(mass_matrix(grid, &p.domain, &p.mu)?), None),
            _ => (None, None),
        };
        let operator = match &mass {
            Some(m) => stiffness.add_diagonal(&m.diagonal()),
            None => stiffness.clone(),
        };
        let free = free_nodes(&p.domain, pinned.as_ref())?;
        let system = ConstrainedSystem::new(operator.clone(), &free)?;
        Ok(RelaxedSystem {
            stiffness,
            mass,
            operator,
            load,
            fixed: Field::from_values(grid, fixed)?,
            system,
        })
    }

    /// Builds the classical Dirichlet problem: every node of `omega` is an
    /// unknown, every other node takes the value of `g`.
    fn classical(
        omega: &NodeSet,
        coeffs: &EllipticCoefficients,
        nu: &MeasureSpec,
        g: &Field,
    ) -> Result<RelaxedSystem> {
        let grid = omega.grid();
        if g.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let edge = NodeSet::full(grid).boundary();
        if !omega.intersection(&edge)?.is_empty() {
            return Err(Error::Geometry(
                "open set touches the edge of the grid; no room for boundary data".into(),
            ));
        }
        let stiffness = assemble_stiffness(grid, omega, coeffs)?;
        let load = load_vector(grid, omega, nu)?;
        let system = ConstrainedSystem::new(stiffness.clone(), omega)?;
        Ok(RelaxedSystem {
            operator: stiffness.clone(),
            stiffness,
            mass: None,
            load,
            fixed: g.clone(),
            system,
        })
    }

    pub fn stiffness(&self) -> &SparseSpdMatrix {
        &self.stiffness
    }

    /// `K + M_μ`, or `K` for obstacles.
    pub fn operator(&self) -> &SparseSpdMatrix {
        &self.operator
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Prescribed values; entries at free nodes are meaningless.
    pub fn fixed(&self) -> &Field {
        &self.fixed
    }

    pub fn free(&self) -> &[usize] {
        self.system.free()
    }

    pub fn solve(&self, opts: &SolverOptions, guess: Option<&Field>) -> Result<Solution> {
        opts.validate()?;
        let (u, stats) = self.system.solve(&self.load, &self.fixed, opts, guess)?;
        let energy = energy_of(&self.stiffness, &u)?;
        let mu_term = self
            .mass
            .as_ref()
            .map_or(0.0, |m| m.quadratic(u.values()).max(0.0));
        let functional = self.functional(&u);
        Ok(Solution {
            u,
            residual: stats.residual,
            iterations: stats.iterations,
            energy,
            mu_term,
            functional,
        })
    }

    /// `F(v) = vᵀ(K + M_μ)v − 2 bᵀv`.
    pub fn functional(&self, v: &Field) -> f64 {
        let b: f64 = self.load.iter().zip(v.values()).map(|(b, v)| b * v).sum();
        self.operator.quadratic(v.values()) - 2.0 * b
    }
}

pub fn solve_relaxed(p: &RelaxedProblem, rel_tol: f64) -> Result<Solution> {
    solve_relaxed_with(p, &SolverOptions::with_tol(rel_tol), None)
}

pub fn solve_relaxed_with(
    p: &RelaxedProblem,
    opts: &SolverOptions,
    guess: Option<&Field>,
) -> Result<Solution> {
    RelaxedSystem::assemble(p)?.solve(opts, guess)
}

/// Classical Dirichlet problem `Lu = ν` on the open set whose nodes are
/// `omega`, with `u = g` at every other node.
pub fn solve_classical(
    omega: &NodeSet,
    coeffs: &EllipticCoefficients,
    nu: &MeasureSpec,
    g: &Field,
    rel_tol: f64,
) -> Result<Solution> {
    if nu.is_obstacle() {
        return Err(Error::UnsupportedMeasure("ν must be a density"));
    }
    RelaxedSystem::classical(omega, coeffs, nu, g)?.solve(&SolverOptions::with_tol(rel_tol), None)
}

/// Nodes of an open shape: those strictly inside, at distance more than
/// `10⁻⁹ h` from its boundary.
pub fn open_nodes(grid: &Grid, shape: &Shape) -> Result<NodeSet> {
    shape.validate()?;
    let eps = 1e-9 * grid.spacing();
    let d = grid.dim();
    let idx = (0..grid.node_count())
        .filter(|&n| shape.contains(&grid.coord(n)[..d], -eps))
        .collect();
    NodeSet::from_indices(grid, idx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCheck {
    pub direction: usize,
    pub t: f64,
    /// `F(u + t w) − F(u)`.
    pub increase: f64,
    /// `t² (a(w, w) + ∫ w² dμ)`.
    pub quadratic: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct MinimalityReport {
    pub checks: Vec<PerturbationCheck>,
    /// `|F(u + 0·w) − F(u)|`, zero up to rounding.
    pub zero_step_gap: f64,
    /// Largest `|increase − quadratic|` relative to `max(1, |F(u)|)`.
    pub max_quadratic_deviation: f64,
    pub slack: f64,
}

impl MinimalityReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.holds).count()
    }
}

pub const PERTURBATION_STEPS: [f64; 4] = [0.1, -0.1, 0.01, -0.01];

/// Compares `F(u)` with `F(u + t w)` for `directions` random admissible `w`
/// (uniform in `[−1, 1]` on free nodes, zero on prescribed ones).
pub fn minimize_functional_check(
    p: &RelaxedProblem,
    sol: &Solution,
    directions: usize,
    seed: u64,
) -> Result<MinimalityReport> {
    let sys = RelaxedSystem::assemble(p)?;
    let d = p.grid.dim();
    let asym = p
        .grid
        .cells()
        .map(|c| p.coeffs.asymmetry_at(&p.grid.cell_center(c)[..d]))
        .fold(0.0, f64::max);
    if asym > 1e-12 {
        return Err(Error::Hypothesis(format!(
            "minimality needs a symmetric operator (relative skew {asym:.3e})"
        )));
    }
    if sol.u.grid() != &p.grid {
        return Err(Error::GridMismatch);
    }
    let f0 = sys.functional(&sol.u);
    let scale = f0.abs().max(1.0);
    let slack = 1e-10 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut zero_step_gap: f64 = 0.0;
    for direction in 0..directions {
        let mut w = vec![0.0; p.grid.node_count()];
        for &i in sys.free() {
            w[i] = rng.gen_range(-1.0..=1.0);
        }
        let q = sys.operator().quadratic(&w);
        let w = Field::from_values(&p.grid, w)?;
        zero_step_gap = zero_step_gap.max((sys.functional(&sol.u.axpy(0.0, &w)?) - f0).abs());
        for &t in &PERTURBATION_STEPS {
            let increase = sys.functional(&sol.u.axpy(t, &w)?) - f0;
            let quadratic = t * t * q;
            max_dev = max_dev.max((increase - quadratic).abs() / scale);
            checks.push(PerturbationCheck {
                direction,
                t,
                increase,
                quadratic,
                holds: increase >= -slack,
            });
        }
    }
    Ok(MinimalityReport {
        checks,
        zero_step_gap,
        max_quadratic_deviation: max_dev,
        slack,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oscillation {
    /// `max − min` over the nodes in the closed ball.
    pub osc: f64,
    pub max: f64,
    pub min: f64,
    pub nodes: usize,
    /// Mean of `u` over the cells whose centre lies in the ball, or over the
    /// nodes when no cell centre does.
    pub average: f64,
}

pub fn local_oscillation(u: &Field, x0: &[f64], rho: f64) -> Result<Oscillation> {
    let grid = u.grid();
    if x0.len() != grid.dim() || !(rho >= 0.0) {
        return Err(Error::invalid("bad ball for oscillation"));
    }
    let ball = BallSpec::new(x0, rho);
    let nodes = grid.nodes_in_ball(&ball);
    if nodes.is_empty() {
        return Err(Error::Geometry(format!(
            "no grid node within {rho} of {x0:?}"
        )));
    }
    let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    for &n in &nodes {
        max = max.max(u.get(n));
        min = min.min(u.get(n));
    }
    let cells = grid.cells_in_ball(&ball);
    let average = if cells.is_empty() {
        nodes.iter().map(|&n| u.get(n)).sum::<f64>() / nodes.len() as f64
    } else {
        let re = ReferenceElement::new(grid.dim());
        let h = grid.spacing();
        let total: f64 = cells
            .iter()
            .map(|&c| re.integral(&element::corner_values(grid, c, u.values()), h))
            .sum();
        total / (cells.len() as f64 * grid.cell_volume())
    };
    Ok(Oscillation {
        osc: max - min,
        max,
        min,
        nodes: nodes.len(),
        average,
    })
}

/// Value of `u` at `x0` under the ball-average convention with `ρ = 2h`.
pub fn pointwise_value(u: &Field, x0: &[f64]) -> Result<f64> {
    Ok(local_oscillation(u, x0, 2.0 * u.grid().spacing())?.average)
}

/// The problem on `B_R(x₀)` whose boundary datum is the trace of a parent
/// solution: a local solution near `x₀`.
pub fn local_problem(parent: &RelaxedProblem, parent_u: &Field, ball: &BallSpec) -> Result<RelaxedProblem> {
    if parent_u.grid() != &parent.grid {
        return Err(Error::GridMismatch);
    }
    let d = parent.grid.dim();
    let inside = mask(&parent.grid, &Shape::Ball(ball.clone()))?;
    if !parent.grid.contains_ball(ball) || !inside.is_subset(&parent.domain) {
        return Err(Error::Geometry(
            "local ball is not contained in the parent domain".into(),
        ));
    }
    if ball.center.len() != d {
        return Err(Error::invalid("ball dimension differs from the grid"));
    }
    let sub = parent.grid.crop_to_ball(ball)?;
    let domain = mask(&sub, &Shape::Ball(ball.clone()))?;
    RelaxedProblem::new(
        &domain,
        &parent.coeffs,
        parent.mu.crop_to(&sub)?,
        parent.nu.crop_to(&sub)?,
        parent_u.crop_to(&sub)?,
    )
}

pub type DatumFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Grid-independent boundary datum.
#[derive(Clone)]
pub struct Datum(pub Arc<DatumFn>);

impl Datum {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Datum {
        Datum(Arc::new(f))
    }

    pub fn zero() -> Datum {
        Datum::new(|_| 0.0)
    }

    pub fn realize(&self, grid: &Grid) -> Field {
        Field::from_fn(grid, |x| (self.0)(x))
    }
}

impl fmt::Debug for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Datum(..)")
    }
}

/// A parent solve on `B_{parent_radius}(x₀)` at spacing `parent_h`
/// followed by a local solve on `B_{local_radius}(x₀)` at spacing `h`,
/// whose boundary datum interpolates the parent solution.
#[derive(Debug, Clone)]
pub struct NestedProblem {
    pub x0: Vec<f64>,
    pub parent_radius: f64,
    pub parent_h: f64,
    pub local_radius: f64,
    pub h: f64,
    pub coeffs: EllipticCoefficients,
    pub mu: MeasureModel,
    pub nu: MeasureModel,
    pub datum: Datum,
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct NestedSolution {
    pub parent: RelaxedProblem,
    pub parent_solution: Solution,
    pub local: RelaxedProblem,
    pub solution: Solution,
}

/// Grid `[x₀ − (n+1)h, x₀ + (n+1)h]^N` with `n = ⌈radius / h⌉`, so that `x₀`
/// is a node and the ball has a cell of margin.
pub fn ball_grid(x0: &[f64], radius: f64, h: f64) -> Result<Grid> {
    let n = (radius / h - 1e-9).ceil().max(1.0);
    Grid::centered(x0.len(), x0, (n + 1.0) * h, h)
}

fn zero_on_obstacle(mut g: Vec<f64>, mu: &MeasureSpec) -> Vec<f64> {
    if let MeasureSpec::Obstacle(e) = mu {
        for &i in e.indices() {
            g[i] = 0.0;
        }
    }
    g
}

/// The datum is replaced by 0 on obstacle nodes at both levels.
pub fn solve_nested(p: &NestedProblem) -> Result<NestedSolution> {
    if !(p.local_radius > 0.0 && p.local_radius < p.parent_radius) {
        return Err(Error::Geometry(format!(
            "local radius {} must lie in (0, {})",
            p.local_radius, p.parent_radius
        )));
    }
    let pg = ball_grid(&p.x0, p.parent_radius, p.parent_h)?;
    let parent_mu = p.mu.realize(&pg)?;
    let parent_g = zero_on_obstacle(p.datum.realize(&pg).into_values(), &parent_mu);
    let parent = RelaxedProblem::new(
        &mask(&pg, &Shape::ball(&p.x0, p.parent_radius))?,
        &p.coeffs,
        parent_mu,
        p.nu.realize(&pg)?,
        Field::from_values(&pg, parent_g)?,
    )?;
    let parent_solution = solve_relaxed(&parent, p.rel_tol)?;
    let lg = ball_grid(&p.x0, p.local_radius, p.h)?;
    let mu = p.mu.realize(&lg)?;
    // interpolation across the obstacle edge leaves small values on fine
    // obstacle nodes
    let g = zero_on_obstacle(parent_solution.u.resample(&lg)?.into_values(), &mu);
    let local = RelaxedProblem::new(
        &mask(&lg, &Shape::ball(&p.x0, p.local_radius))?,
        &p.coeffs,
        mu,
        p.nu.realize(&lg)?,
        Field::from_values(&lg, g)?,
    )?;
    let solution = solve_relaxed(&local, p.rel_tol)?;
    Ok(NestedSolution {
        parent,
        parent_solution,
        local,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn unit_square(h: f64) -> Grid {
        Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], h).unwrap()
    }

    fn lap(d: usize) -> EllipticCoefficients {
        EllipticCoefficients::laplacian(d)
    }

    fn ones(g: &Grid) -> MeasureSpec {
        MeasureSpec::signed(Field::constant(g, 1.0))
    }

    #[test]
    fn linear_datum_is_reproduced() {
        let g = unit_square(0.05);
        let full = NodeSet::full(&g);
        let x1 = Field::from_fn(&g, |x| x[0]);
        let p = RelaxedProblem::new(&full, &lap(2), MeasureSpec::Zero, MeasureSpec::Zero, x1.clone())
            .unwrap();
        let s = solve_relaxed(&p, 1e-12).unwrap();
        assert!(s.u.max_diff(&x1).unwrap() < 1e-10);
        assert!((s.energy - 1.0).abs() < 1e-9);
        assert_eq!(s.mu_term, 0.0);
    }

    #[test]
    fn obstacle_matches_classical_solve_off_the_disc() {
        let g = unit_square(1.0 / 40.0);
        let full = NodeSet::full(&g);
        let disc = Shape::ball(&[0.5, 0.5], 0.2);
        let e = mask(&g, &disc).unwrap();
        let p = RelaxedProblem::homogeneous(&full, &lap(2), MeasureSpec::obstacle(e.clone()), ones(&g))
            .unwrap();
        let relaxed = solve_relaxed(&p, 1e-13).unwrap();
        for &i in e.indices() {
            assert_eq!(relaxed.u.get(i), 0.0);
        }
        let open = full.interior().difference(&e).unwrap();
        let classical =
            solve_classical(&open, &lap(2), &ones(&g), &Field::zeros(&g), 1e-13).unwrap();
        assert!(relaxed.u.max_diff(&classical.u).unwrap() < 1e-12);
        assert!((relaxed.energy - classical.energy).abs() < 1e-12 * relaxed.energy);
    }

    #[test]
    fn enclosing_obstacle_reduces_to_the_inner_domain() {
        // Ω' = [0,1]², Ω = open disc, E = Ω' − Ω
        let g = unit_square(1.0 / 32.0);
        let full = NodeSet::full(&g);
        let omega = open_nodes(&g, &Shape::ball(&[0.5, 0.5], 0.35)).unwrap();
        let e = full.difference(&omega).unwrap();
        let nu = MeasureSpec::signed(Field::from_fn(&g, |x| 1.0 + x[0] - 2.0 * x[1]));
        let p = RelaxedProblem::homogeneous(&full, &lap(2), MeasureSpec::obstacle(e), nu.clone())
            .unwrap();
        let relaxed = solve_relaxed(&p, 1e-13).unwrap();
        let classical = solve_classical(&omega, &lap(2), &nu, &Field::zeros(&g), 1e-13).unwrap();
        assert!(relaxed.u.max_diff(&classical.u).unwrap() <= 1e-10);
    }

    #[test]
    fn incompatible_datum_is_rejected() {
        let g = unit_square(0.1);
        let full = NodeSet::full(&g);
        let e = mask(&g, &Shape::HalfSpace { normal: vec![1.0, 0.0], offset: 0.0 }).unwrap();
        let p = RelaxedProblem::new(
            &full,
            &lap(2),
            MeasureSpec::obstacle(e),
            MeasureSpec::Zero,
            Field::constant(&g, 1.0),
        )
        .unwrap();
        assert!(matches!(solve_relaxed(&p, 1e-8), Err(Error::Incompatible { .. })));
    }

    #[test]
    fn signed_mu_is_rejected() {
        let g = unit_square(0.1);
        let full = NodeSet::full(&g);
        assert!(RelaxedProblem::homogeneous(&full, &lap(2), ones(&g), MeasureSpec::Zero).is_err());
    }

    #[test]
    fn penalty_converges_monotonically_to_the_obstacle() {
        let g = unit_square(1.0 / 32.0);
        let full = NodeSet::full(&g);
        let e = mask(&g, &Shape::ball(&[0.5, 0.5], 0.2)).unwrap();
        let hard = RelaxedProblem::homogeneous(&full, &lap(2), MeasureSpec::obstacle(e.clone()), ones(&g))
            .unwrap();
        let target = solve_relaxed(&hard, 1e-12).unwrap();
        let mut gaps = Vec::new();
        let mut prev: Option<Field> = None;
        for c in [1e2, 1e4, 1e6] {
            let mu = MeasureSpec::density(Field::constant(&g, c))
                .unwrap()
                .restrict(&e)
                .unwrap();
            let s = solve_relaxed(&hard.with_mu(mu).unwrap(), 1e-12).unwrap();
            if let Some(p) = &prev {
                // larger absorption lowers the solution everywhere
                for i in 0..g.node_count() {
                    assert!(s.u.get(i) <= p.get(i) + 1e-12);
                }
            }
            gaps.push(s.u.max_diff(&target.u).unwrap());
            prev = Some(s.u);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-3);
    }

    #[test]
    fn solution_minimises_the_functional() {
        let g = unit_square(1.0 / 16.0);
        let full = NodeSet::full(&g);
        let mu = MeasureSpec::density(Field::from_fn(&g, |x| 5.0 * x[0])).unwrap();
        let nu = MeasureSpec::signed(Field::from_fn(&g, |x| (6.0 * x[1]).sin()));
        let p = RelaxedProblem::new(&full, &lap(2), mu, nu, Field::from_fn(&g, |x| x[0] * x[1]))
            .unwrap();
        let s = solve_relaxed(&p, 1e-12).unwrap();
        let r = minimize_functional_check(&p, &s, 20, 7).unwrap();
        assert_eq!(r.violations(), 0);
        assert_eq!(r.checks.len(), 80);
        assert!(r.zero_step_gap < 1e-12);
        assert!(r.max_quadratic_deviation < 1e-8, "{}", r.max_quadratic_deviation);
        assert!((s.functional - (s.energy + s.mu_term - 2.0 * dot_load(&p, &s.u))).abs() < 1e-9);
    }

    fn dot_load(p: &RelaxedProblem, u: &Field) -> f64 {
        load_vector(&p.grid, &p.domain, &p.nu)
            .unwrap()
            .iter()
            .zip(u.values())
            .map(|(b, u)| b * u)
            .sum()
    }

    #[test]
    fn minimality_needs_symmetry() {
        let g = unit_square(0.125);
        let full = NodeSet::full(&g);
        let a = [[2.0, 0.5, 0.0], [-0.5, 2.0, 0.0], [0.0; 3]];
        let coeffs = EllipticCoefficients::constant(2, a, 1.0, 2.0).unwrap();
        let p = RelaxedProblem::homogeneous(&full, &coeffs, MeasureSpec::Zero, ones(&g)).unwrap();
        let s = solve_relaxed(&p, 1e-10).unwrap();
        assert!(matches!(
            minimize_functional_check(&p, &s, 2, 1),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn oscillation_of_simple_fields() {
        let g = unit_square(0.25);
        let c = Field::constant(&g, 2.5);
        let o = local_oscillation(&c, &[0.5, 0.5], 0.3).unwrap();
        assert_eq!(o.osc, 0.0);
        assert!((o.average - 2.5).abs() < 1e-14);

        let x1 = Field::from_fn(&g, |x| x[0]);
        let o = local_oscillation(&x1, &[0.5, 0.5], 0.25).unwrap();
        // nodes within 0.25 of the centre: the plus-shaped stencil
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut count = 0;
        for n in 0..g.node_count() {
            let x = g.coord(n);
            if ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() <= 0.25 + 1e-12 {
                lo = lo.min(x[0]);
                hi = hi.max(x[0]);
                count += 1;
            }
        }
        assert_eq!(o.nodes, count);
        assert_eq!(count, 5);
        assert!((o.osc - (hi - lo)).abs() < 1e-14);
        assert!((o.osc - 0.5).abs() < 1e-14);
        assert!(local_oscillation(&x1, &[3.0, 3.0], 0.1).is_err());
    }

    #[test]
    fn nested_solve_matches_a_single_fine_solve() {
        let x0 = vec![0.0, 0.0];
        let datum = Datum::new(|x| 1.0 + x[0] * x[0] - x[1]);
        let mu = MeasureModel::Obstacle(Shape::HalfSpace { normal: vec![0.0, 1.0], offset: -0.125 });
        let nested = |parent_h: f64| {
            solve_nested(&NestedProblem {
                x0: x0.clone(),
                parent_radius: 1.0,
                parent_h,
                local_radius: 0.4,
                h: 1.0 / 128.0,
                coeffs: lap(2),
                mu: mu.clone(),
                nu: MeasureModel::Zero,
                datum: datum.clone(),
                rel_tol: 1e-11,
            })
            .unwrap()
        };
        let same = nested(1.0 / 128.0);
        let coarse = nested(1.0 / 64.0);
        let u = &same.solution.u;
        let map = same.parent.grid.embed(u.grid()).unwrap();
        for &i in same.local.domain.indices() {
            assert!((u.get(i) - same.parent_solution.u.get(map[i])).abs() < 1e-8);
        }
        let diff = coarse.solution.u.max_diff(u).unwrap();
        assert!(diff < 0.02 * u.max_abs(), "{diff}");
        if let MeasureSpec::Obstacle(e) = &coarse.local.mu {
            assert!(e.indices().iter().all(|&i| coarse.solution.u.get(i) == 0.0));
        }
    }

    #[test]
    fn local_problem_reproduces_the_parent() {
        let g = unit_square(1.0 / 32.0);
        let full = NodeSet::full(&g);
        let mu = MeasureSpec::density(Field::from_fn(&g, |x| 10.0 * x[1])).unwrap();
        let p = RelaxedProblem::homogeneous(&full, &lap(2), mu, ones(&g)).unwrap();
        let parent = solve_relaxed(&p, 1e-12).unwrap();
        let ball = BallSpec::new(&[0.5, 0.45], 0.3);
        let local = local_problem(&p, &parent.u, &ball).unwrap();
        let s = solve_relaxed(&local, 1e-12).unwrap();
        let map = g.embed(&local.grid).unwrap();
        for &i in local.domain.indices() {
            assert!((s.u.get(i) - parent.u.get(map[i])).abs() < 1e-9);
        }
        assert!(local_problem(&p, &parent.u, &BallSpec::new(&[0.9, 0.5], 0.3)).is_err());
    }

    fn random_density(g: &Grid, seed: u64, signed: bool) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = if signed { -1.0 } else { 0.0 };
        Field::from_values(g, (0..g.node_count()).map(|_| rng.gen_range(lo..=1.0)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn uniqueness_under_different_guesses(seed in 0u64..1000, scale in 0.0f64..20.0) {
            let g = unit_square(1.0 / 16.0);
            let full = NodeSet::full(&g);
            let mu = MeasureSpec::density(random_density(&g, seed, false).scaled(scale)).unwrap();
            let nu = MeasureSpec::signed(random_density(&g, seed + 1, true));
            let p = RelaxedProblem::homogeneous(&full, &lap(2), mu, nu).unwrap();
            let tol = 1e-10;
            let a = solve_relaxed(&p, tol).unwrap();
            let guess = random_density(&g, seed + 2, true).scaled(10.0);
            let b = solve_relaxed_with(&p, &SolverOptions::with_tol(tol), Some(&guess)).unwrap();
            let size = a.u.max_abs().max(1e-300);
            prop_assert!(a.u.max_diff(&b.u).unwrap() <= 2.0 * tol * size.max(1.0));
        }

        #[test]
        fn linear_in_the_data(seed in 0u64..1000) {
            let g = unit_square(1.0 / 16.0);
            let full = NodeSet::full(&g);
            let mu = MeasureSpec::density(random_density(&g, seed, false)).unwrap();
            let n1 = random_density(&g, seed + 3, true);
            let n2 = random_density(&g, seed + 4, true);
            let sum = n1.axpy(1.0, &n2).unwrap();
            let base = RelaxedProblem::homogeneous(&full, &lap(2), mu, MeasureSpec::Zero).unwrap();
            let tol = 1e-12;
            let solve = |f: Field| solve_relaxed(&base.with_nu(MeasureSpec::signed(f)).unwrap(), tol).unwrap().u;
            let u1 = solve(n1);
            let u2 = solve(n2);
            let u12 = solve(sum);
            let combined = u1.axpy(1.0, &u2).unwrap();
            prop_assert!(u12.max_diff(&combined).unwrap() <= 2e-8 * u12.max_abs().max(1e-3));
        }

        #[test]
        fn comparison_principle(seed in 0u64..1000, obstacle in any::<bool>()) {
            let g = unit_square(1.0 / 16.0);
            let full = NodeSet::full(&g);
            let mu = if obstacle {
                MeasureSpec::obstacle(mask(&g, &Shape::ball(&[0.4, 0.6], 0.15)).unwrap())
            } else {
                MeasureSpec::density(random_density(&g, seed, false).scaled(50.0)).unwrap()
            };
            let nu = MeasureSpec::signed(random_density(&g, seed + 5, false));
            let datum = random_density(&g, seed + 6, false);
            let p = RelaxedProblem::new(&full, &lap(2), mu, nu, datum).unwrap();
            let s = solve_relaxed(&p, 1e-12).unwrap();
            prop_assert!(s.u.values().iter().all(|&v| v >= -1e-10));
        }

        #[test]
        fn oscillation_is_monotone_in_radius(seed in 0u64..1000, r1 in 0.0f64..0.4, extra in 0.0f64..0.4) {
            let g = unit_square(1.0 / 16.0);
            let u = random_density(&g, seed, true);
            let a = local_oscillation(&u, &[0.5, 0.5], r1).unwrap();
            let b = local_oscillation(&u, &[0.5, 0.5], r1 + extra).unwrap();
            prop_assert!(a.osc <= b.osc);
        }
    }
}
