//! Harmonic capacity, μ-capacity and the laws relating them.
//!
//! Constraints are imposed by pinning nodes. Nodes outside `Ω` are fixed
//! like boundary nodes, so the operator never sees them as unknowns.

use std::sync::OnceLock;

use crate::elliptic::{
    assemble_stiffness, energy_of, free_nodes, local_dirichlet_energy, local_l2_squared,
    ConstrainedSystem, EllipticCoefficients, Field, SolverOptions, SparseSpdMatrix,
};
use crate::error::{Error, Result};
use crate::grid::{mask, BallSpec, Grid, NodeSet, Shape};
use crate::measures::{cell_mu_energy, mass_matrix, MeasureSpec};

#[derive(Debug, Clone)]
pub struct CapacityReport {
    pub value: f64,
    pub potential: Field,
    pub set: NodeSet,
    pub domain: NodeSet,
    /// Relative residual of the final solve (0 when nothing was solved).
    pub residual: f64,
    pub iterations: usize,
    /// `"zero"` for harmonic capacity, else the kind of `μ`.
    pub measure: &'static str,
}

/// Stiffness matrix of `L` on `Ω`, reused across capacity solves.
#[derive(Debug)]
pub struct CapacityProblem {
    grid: Grid,
    domain: NodeSet,
    boundary: NodeSet,
    stiffness: SparseSpdMatrix,
    opts: SolverOptions,
    threshold: OnceLock<f64>,
}

impl CapacityProblem {
    pub fn new(domain: &NodeSet, coeffs: &EllipticCoefficients, rel_tol: f64) -> Result<CapacityProblem> {
        let opts = SolverOptions::with_tol(rel_tol);
        opts.validate()?;
        let grid = domain.grid().clone();
        let stiffness = assemble_stiffness(&grid, domain, coeffs)?;
        Ok(CapacityProblem {
            boundary: domain.boundary(),
            grid,
            domain: domain.clone(),
            stiffness,
            opts,
            threshold: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> &NodeSet {
        &self.domain
    }

    pub fn stiffness(&self) -> &SparseSpdMatrix {
        &self.stiffness
    }

    pub fn rel_tol(&self) -> f64 {
        self.opts.rel_tol
    }

    fn check_set(&self, e: &NodeSet) -> Result<()> {
        if e.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if !e.is_subset(&self.domain) {
            return Err(Error::invalid("set is not contained in the domain"));
        }
        Ok(())
    }

    /// `Cap(E, Ω)`: minimises `a(u, u)` with `u = 1` on `E` and `u = 0` on
    /// `∂Ω` and outside. Nodes of `E` on `∂Ω` keep the boundary value.
    pub fn harmonic(&self, e: &NodeSet) -> Result<CapacityReport> {
        self.check_set(e)?;
        let conflict = e.intersection(&self.boundary)?;
        if !conflict.is_empty() {
            log::warn!(
                "{} node(s) of the set lie on the domain boundary and are held at 0",
                conflict.len()
            );
        }
        let pinned = e.difference(&conflict)?;
        let report = |potential: Field, value: f64, residual: f64, iterations: usize| CapacityReport {
            value,
            potential,
            set: e.clone(),
            domain: self.domain.clone(),
            residual,
            iterations,
            measure: "zero",
        };
        if pinned.is_empty() {
            return Ok(report(Field::zeros(&self.grid), 0.0, 0.0, 0));
        }
        let mut fixed = vec![0.0; self.grid.node_count()];
        for &i in pinned.indices() {
            fixed[i] = 1.0;
        }
        let fixed = Field::from_values(&self.grid, fixed)?;
        let free = free_nodes(&self.domain, Some(&pinned))?;
        let sys = ConstrainedSystem::new(self.stiffness.clone(), &free)?;
        let load = vec![0.0; self.grid.node_count()];
        let (u, stats) = sys.solve(&load, &fixed, &self.opts, None)?;
        let value = energy_of(&self.stiffness, &u)?;
        Ok(report(u, value, stats.residual, stats.iterations))
    }

    /// `Cap_μ(E, Ω)`: minimises `a(u, u) + ∫ u² dμ_E` with `u = 1` on `∂Ω`.
    pub fn mu_capacity(&self, e: &NodeSet, mu: &MeasureSpec) -> Result<CapacityReport> {
        self.check_set(e)?;
        let mu_e = mu.restrict(e)?;
        let ones = Field::constant(&self.grid, 1.0);
        let load = vec![0.0; self.grid.node_count()];
        let done = |potential: Field, value: f64, residual: f64, iterations: usize| CapacityReport {
            value,
            potential,
            set: e.clone(),
            domain: self.domain.clone(),
            residual,
            iterations,
            measure: mu.kind(),
        };
        match &mu_e {
            MeasureSpec::Zero => Ok(done(ones, 0.0, 0.0, 0)),
            MeasureSpec::Density { .. } => {
                let m = mass_matrix(&self.grid, &self.domain, &mu_e)?;
                let a = self.stiffness.add_diagonal(&m.diagonal());
                let free = free_nodes(&self.domain, None)?;
                let sys = ConstrainedSystem::new(a, &free)?;
                let (u, stats) = sys.solve(&load, &ones, &self.opts, None)?;
                let value = energy_of(&self.stiffness, &u)? + m.quadratic(u.values()).max(0.0);
                Ok(done(u, value, stats.residual, stats.iterations))
            }
            MeasureSpec::Obstacle(z) => {
                let conflict = z.intersection(&self.boundary)?;
                if !conflict.is_empty() {
                    log::warn!(
                        "{} obstacle node(s) lie on the domain boundary and are held at 1",
                        conflict.len()
                    );
                }
                let pinned = z.difference(&conflict)?;
                if pinned.is_empty() {
                    return Ok(done(ones, 0.0, 0.0, 0));
                }
                let mut fixed = vec![1.0; self.grid.node_count()];
                for &i in pinned.indices() {
                    fixed[i] = 0.0;
                }
                let fixed = Field::from_values(&self.grid, fixed)?;
                let free = free_nodes(&self.domain, Some(&pinned))?;
                let sys = ConstrainedSystem::new(self.stiffness.clone(), &free)?;
                let (u, stats) = sys.solve(&load, &fixed, &self.opts, None)?;
                let value = energy_of(&self.stiffness, &u)?;
                Ok(done(u, value, stats.residual, stats.iterations))
            }
            MeasureSpec::SignedDensity { .. } => Err(Error::UnsupportedMeasure(
                "μ-capacity needs a nonnegative measure",
            )),
        }
    }

    /// Below this value a discrete set counts as having zero capacity:
    /// `10 · rel_tol · Cap(B_h, Ω)` for the interior node nearest the
    /// centroid of `Ω`.
    pub fn zero_capacity_threshold(&self) -> Result<f64> {
        if let Some(t) = self.threshold.get() {
            return Ok(*t);
        }
        let interior = self.domain.interior();
        let d = self.grid.dim();
        let mut centroid = [0.0; 3];
        for &i in interior.indices() {
            let x = self.grid.coord(i);
            for k in 0..d {
                centroid[k] += x[k] / interior.len() as f64;
            }
        }
        let node = interior
            .indices()
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = crate::grid::dist(&self.grid.coord(a)[..d], &centroid[..d]);
                let db = crate::grid::dist(&self.grid.coord(b)[..d], &centroid[..d]);
                da.total_cmp(&db)
            })
            .ok_or_else(|| Error::Geometry("domain has no interior nodes".into()))?;
        let cap = self.harmonic(&NodeSet::single(&self.grid, node))?.value;
        let t = 10.0 * self.opts.rel_tol * cap;
        Ok(*self.threshold.get_or_init(|| t))
    }
}

pub fn harmonic_capacity(
    e: &NodeSet,
    omega: &NodeSet,
    coeffs: &EllipticCoefficients,
    rel_tol: f64,
) -> Result<CapacityReport> {
    CapacityProblem::new(omega, coeffs, rel_tol)?.harmonic(e)
}

pub fn mu_capacity(
    e: &NodeSet,
    omega: &NodeSet,
    coeffs: &EllipticCoefficients,
    mu: &MeasureSpec,
    rel_tol: f64,
) -> Result<CapacityReport> {
    CapacityProblem::new(omega, coeffs, rel_tol)?.mu_capacity(e, mu)
}

/// Recomputes `a(u, u) + uᵀ M_{μ_E} u` for a report.
pub fn recompute_value(
    problem: &CapacityProblem,
    report: &CapacityReport,
    mu: &MeasureSpec,
) -> Result<f64> {
    let a = energy_of(problem.stiffness(), &report.potential)?;
    let mu_e = mu.restrict(&report.set)?;
    let m = match &mu_e {
        MeasureSpec::Density { .. } => {
            mass_matrix(problem.grid(), problem.domain(), &mu_e)?.quadratic(report.potential.values())
        }
        _ => 0.0,
    };
    Ok(a + m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawCheck {
    /// Letter of the law, `'a'` to `'e'`.
    pub law: char,
    pub description: String,
    /// The law reads `lhs <= rhs`.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LawReport {
    pub checks: Vec<LawCheck>,
    /// Absolute slack: capacities below the zero threshold are round-off.
    pub floor: f64,
}

impl LawReport {
    pub fn violations(&self) -> Vec<&LawCheck> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }

    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    fn push(&mut self, law: char, description: impl Into<String>, lhs: f64, rhs: f64, rel: f64) {
        let scale = lhs.abs().max(rhs.abs());
        self.checks.push(LawCheck {
            law,
            description: description.into(),
            lhs,
            rhs,
            holds: lhs <= rhs + rel * scale + self.floor,
        });
    }
}

/// Inputs for [`check_capacity_laws`]. `sub_domain` must satisfy
/// `sub_domain ⊆ domain`, and `mu <= nu` must hold as measures.
pub struct LawInstance<'a> {
    pub domain: &'a CapacityProblem,
    pub sub_domain: &'a CapacityProblem,
    pub e: &'a NodeSet,
    pub f: &'a NodeSet,
    pub mu: &'a MeasureSpec,
    pub nu: &'a MeasureSpec,
}

/// True when `a <= b` as measures on the grid of `grid`.
pub fn measure_le(a: &MeasureSpec, b: &MeasureSpec, grid: &Grid, domain: &NodeSet) -> Result<bool> {
    let support = |m: &MeasureSpec| -> Result<Vec<f64>> {
        Ok(match m {
            MeasureSpec::Zero => vec![0.0; grid.node_count()],
            MeasureSpec::Obstacle(_) => vec![f64::INFINITY; grid.node_count()],
            _ => mass_matrix(grid, domain, m)?.diagonal(),
        })
    };
    Ok(match (a, b) {
        (MeasureSpec::Zero, _) => true,
        (_, MeasureSpec::Zero) => support(a)?.iter().all(|&v| v == 0.0),
        (MeasureSpec::Obstacle(x), MeasureSpec::Obstacle(y)) => x.is_subset(y),
        (MeasureSpec::Obstacle(_), _) => false,
        (_, MeasureSpec::Obstacle(y)) => {
            let m = y.to_mask();
            support(a)?.iter().zip(m).all(|(&v, inside)| inside || v == 0.0)
        }
        _ => support(a)?.iter().zip(support(b)?).all(|(x, y)| *x <= y),
    })
}

/// Evaluates laws (a) to (e) relating μ-capacities:
/// (a) `0 <= Cap_μ(E) <= Cap(E)`; (b) monotonicity in the set;
/// (c) submodularity; (d) `Cap_μ(E, Ω) <= Cap_μ(E, Ω')` for `E ⊆ Ω' ⊆ Ω`;
/// (e) `Cap_μ <= Cap_ν` when `μ <= ν`. Each is checked with relative
/// slack `5 · rel_tol`. Violations are reported, not returned as errors.
pub fn check_capacity_laws(inst: &LawInstance<'_>) -> Result<LawReport> {
    let p = inst.domain;
    let rel = 5.0 * p.rel_tol();
    if !inst.sub_domain.domain().is_subset(p.domain()) {
        return Err(Error::invalid("sub-domain is not contained in the domain"));
    }
    if !measure_le(inst.mu, inst.nu, p.grid(), p.domain())? {
        return Err(Error::invalid("second measure does not dominate the first"));
    }
    let (e, f) = (inst.e, inst.f);
    let union = e.union(f)?;
    let inter = e.intersection(f)?;
    let cap_mu = |s: &NodeSet| p.mu_capacity(s, inst.mu).map(|r| r.value);

    let mut report = LawReport {
        checks: Vec::new(),
        floor: p.zero_capacity_threshold()?.max(inst.sub_domain.zero_capacity_threshold()?),
    };
    let c_e = cap_mu(e)?;
    let c_f = cap_mu(f)?;
    let c_u = cap_mu(&union)?;
    let c_i = cap_mu(&inter)?;
    for (name, s, c) in [("E", e, c_e), ("F", f, c_f)] {
        report.push('a', format!("0 <= Cap_mu({name})"), 0.0, c, rel);
        let harm = p.harmonic(s)?.value;
        report.push('a', format!("Cap_mu({name}) <= Cap({name})"), c, harm, rel);
    }
    report.push('b', "Cap_mu(E n F) <= Cap_mu(E)", c_i, c_e, rel);
    report.push('b', "Cap_mu(E) <= Cap_mu(E u F)", c_e, c_u, rel);
    report.push('b', "Cap_mu(F) <= Cap_mu(E u F)", c_f, c_u, rel);
    report.push('c', "Cap_mu(E u F) + Cap_mu(E n F) <= Cap_mu(E) + Cap_mu(F)", c_u + c_i, c_e + c_f, rel);

    let sub = inst.sub_domain;
    let e_sub = e.intersection(sub.domain())?;
    let outer = p.mu_capacity(&e_sub, inst.mu)?.value;
    let inner = sub.mu_capacity(&e_sub, inst.mu)?.value;
    report.push('d', "Cap_mu(E, Omega) <= Cap_mu(E, Omega')", outer, inner, rel);

    let c_nu = p.mu_capacity(e, inst.nu)?.value;
    report.push('e', "Cap_mu(E) <= Cap_nu(E)", c_e, c_nu, rel);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReport {
    pub ball: BallSpec,
    pub cap_mu: f64,
    pub ratios: Vec<f64>,
    /// Largest ratio over the family: the empirical constant.
    pub constant: f64,
    pub degenerate: bool,
}

/// Ratio `∫_{B_r} u² / [ r^N / Cap_μ(B_r, B_2r) · (∫_{B_r} |Du|² + ∫_{B_r} u² dμ) ]`
/// for each field of the family, with the Laplacian. Integrals run over the
/// cells whose centre lies in `B_r`. A zero numerator gives ratio 0.
pub fn poincare_check(family: &[Field], ball: &BallSpec, mu: &MeasureSpec, rel_tol: f64) -> Result<PoincareReport> {
    let grid = match family.first() {
        Some(u) => u.grid().clone(),
        None => return Err(Error::invalid("empty family of test fields")),
    };
    if family.iter().any(|u| u.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let outer = ball.scaled(2.0);
    if !grid.contains_ball(&outer) {
        return Err(Error::Geometry("B_2r does not fit in the grid box".into()));
    }
    let dim = grid.dim();
    let omega = mask(&grid, &Shape::Ball(outer))?;
    let e = mask(&grid, &Shape::Ball(ball.clone()))?;
    let problem = CapacityProblem::new(&omega, &EllipticCoefficients::laplacian(dim), rel_tol)?;
    let cap_mu = problem.mu_capacity(&e, mu)?.value;
    let mut report = PoincareReport {
        ball: ball.clone(),
        cap_mu,
        ratios: Vec::new(),
        constant: 0.0,
        degenerate: false,
    };
    if cap_mu < problem.zero_capacity_threshold()? {
        report.degenerate = true;
        return Ok(report);
    }
    let cells = grid.cells_in_ball(ball);
    let scale = ball.radius.powi(dim as i32) / cap_mu;
    for u in family {
        let num = local_l2_squared(u, &cells);
        let ratio = if num == 0.0 {
            0.0
        } else {
            let energy = local_dirichlet_energy(u, &cells, None) + cell_mu_energy(mu, u, &cells, None)?;
            num / (scale * energy)
        };
        report.ratios.push(ratio);
    }
    report.constant = report.ratios.iter().fold(0.0, |m: f64, r| m.max(*r));
    Ok(report)
}
