//! Nonnegative measures `μ`, signed densities `ν`, their discrete mass
//! matrices and Kato norms.
//!
//! Densities enter through a lumped midpoint rule: every cell carries the
//! mean of its corner samples, and each corner receives `1 / 2^N` of the
//! cell's mass. The resulting mass matrix is diagonal, so adding it to a
//! stiffness matrix keeps the M-matrix structure.

use std::f64::consts::PI;

use crate::elliptic::{
    assemble_stiffness, free_nodes, ConstrainedSystem, EllipticCoefficients, Field,
    SolverOptions, SparseSpdMatrix,
};
use crate::error::{Error, Result};
use crate::grid::{dist, mask, BallSpec, Grid, NodeSet, Shape};

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Zero,
    /// Nonnegative density, optionally restricted to a node set.
    Density {
        density: Field,
        support: Option<NodeSet>,
    },
    /// `∞_E`: forces `u = 0` on `E`.
    Obstacle(NodeSet),
    /// Signed density, used for right-hand sides.
    SignedDensity {
        density: Field,
        support: Option<NodeSet>,
    },
}

impl MeasureSpec {
    pub fn density(density: Field) -> Result<MeasureSpec> {
        if let Some((node, &value)) = density
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| **v < 0.0)
        {
            return Err(Error::NegativeDensity { node, value });
        }
        Ok(MeasureSpec::Density {
            density,
            support: None,
        })
    }

    pub fn signed(density: Field) -> MeasureSpec {
        MeasureSpec::SignedDensity {
            density,
            support: None,
        }
    }

    pub fn obstacle(set: NodeSet) -> MeasureSpec {
        MeasureSpec::Obstacle(set)
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            MeasureSpec::Zero => None,
            MeasureSpec::Density { density, .. } | MeasureSpec::SignedDensity { density, .. } => {
                Some(density.grid())
            }
            MeasureSpec::Obstacle(e) => Some(e.grid()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MeasureSpec::Zero => "zero",
            MeasureSpec::Density { .. } => "density",
            MeasureSpec::Obstacle(_) => "obstacle",
            MeasureSpec::SignedDensity { .. } => "signed_density",
        }
    }

    pub fn is_obstacle(&self) -> bool {
        matches!(self, MeasureSpec::Obstacle(_))
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        match self.grid() {
            Some(g) if g != grid => Err(Error::GridMismatch),
            _ => Ok(()),
        }
    }

    /// Nodal density with the support applied; `None` for zero and
    /// obstacle measures.
    pub fn nodal_density(&self) -> Option<Vec<f64>> {
        match self {
            MeasureSpec::Density { density, support }
            | MeasureSpec::SignedDensity { density, support } => {
                let mut v = density.values().to_vec();
                if let Some(s) = support {
                    let m = s.to_mask();
                    v.iter_mut().zip(&m).filter(|(_, &k)| !k).for_each(|(x, _)| *x = 0.0);
                }
                Some(v)
            }
            _ => None,
        }
    }

    /// `μ_E(B) = μ(B ∩ E)`.
    pub fn restrict(&self, e: &NodeSet) -> Result<MeasureSpec> {
        self.check_grid(e.grid())?;
        let full = |s: &NodeSet| s.len() == s.grid().node_count();
        let narrowed = |support: &Option<NodeSet>| -> Result<Option<NodeSet>> {
            let s = match support {
                Some(s) => s.intersection(e)?,
                None => e.clone(),
            };
            Ok(if full(&s) { None } else { Some(s) })
        };
        Ok(match self {
            MeasureSpec::Zero => MeasureSpec::Zero,
            MeasureSpec::Density { density, support } => MeasureSpec::Density {
                density: density.clone(),
                support: narrowed(support)?,
            },
            MeasureSpec::SignedDensity { density, support } => MeasureSpec::SignedDensity {
                density: density.clone(),
                support: narrowed(support)?,
            },
            MeasureSpec::Obstacle(set) => MeasureSpec::Obstacle(set.intersection(e)?),
        })
    }

    /// Multiplies a density by `c`; obstacles and zero are unchanged.
    pub fn scaled(&self, c: f64) -> MeasureSpec {
        match self {
            MeasureSpec::Density { density, support } => MeasureSpec::Density {
                density: density.scaled(c),
                support: support.clone(),
            },
            MeasureSpec::SignedDensity { density, support } => MeasureSpec::SignedDensity {
                density: density.scaled(c),
                support: support.clone(),
            },
            other => other.clone(),
        }
    }

    /// Same measure on an aligned sub-grid.
    pub fn crop_to(&self, sub: &Grid) -> Result<MeasureSpec> {
        let crop_support = |s: &Option<NodeSet>| -> Result<Option<NodeSet>> {
            s.as_ref().map(|s| s.crop_to(sub)).transpose()
        };
        Ok(match self {
            MeasureSpec::Zero => MeasureSpec::Zero,
            MeasureSpec::Density { density, support } => MeasureSpec::Density {
                density: density.crop_to(sub)?,
                support: crop_support(support)?,
            },
            MeasureSpec::SignedDensity { density, support } => MeasureSpec::SignedDensity {
                density: density.crop_to(sub)?,
                support: crop_support(support)?,
            },
            MeasureSpec::Obstacle(e) => MeasureSpec::Obstacle(e.crop_to(sub)?),
        })
    }
}

/// Lumped nodal weights `∫ f φ_i` of a density over the cells of the grid,
/// zero outside `domain` and outside the support.
fn lumped_weights(
    grid: &Grid,
    domain: &NodeSet,
    density: &Field,
    support: Option<&NodeSet>,
) -> Vec<f64> {
    let d = grid.dim();
    let share = grid.cell_volume() / grid.corners_per_cell() as f64;
    let raw = density.values();
    let mut keep = domain.to_mask();
    if let Some(e) = support {
        let m = e.to_mask();
        keep.iter_mut().zip(m).for_each(|(k, m)| *k &= m);
    }
    let mut cell_value = vec![0.0; grid.node_count()];
    for origin in grid.cells() {
        let c = grid.cell_corners(origin);
        cell_value[origin] =
            c[..grid.corners_per_cell()].iter().map(|&k| raw[k]).sum::<f64>() / (1 << d) as f64;
    }
    (0..grid.node_count())
        .map(|i| {
            if !keep[i] {
                return 0.0;
            }
            grid.incident_cells(i)
                .map(|(origin, _)| cell_value[origin] * share)
                .sum()
        })
        .collect()
}

/// Diagonal matrix `M[i][i] = ∫ f φ_i`, the lumped form of `∫ u v dμ`.
pub fn mass_matrix(grid: &Grid, domain: &NodeSet, mu: &MeasureSpec) -> Result<SparseSpdMatrix> {
    if domain.grid() != grid {
        return Err(Error::GridMismatch);
    }
    mu.check_grid(grid)?;
    match mu {
        MeasureSpec::Zero => Ok(SparseSpdMatrix::diagonal_matrix(
            &vec![0.0; grid.node_count()],
            Some(grid.clone()),
        )),
        MeasureSpec::Density { density, support } => {
            if let Some((node, &value)) =
                density.values().iter().enumerate().find(|(_, v)| **v < 0.0)
            {
                return Err(Error::NegativeDensity { node, value });
            }
            Ok(SparseSpdMatrix::diagonal_matrix(
                &lumped_weights(grid, domain, density, support.as_ref()),
                Some(grid.clone()),
            ))
        }
        MeasureSpec::Obstacle(_) => Err(Error::UnsupportedMeasure(
            "obstacle measures are imposed as constraints, not as a mass matrix",
        )),
        MeasureSpec::SignedDensity { .. } => Err(Error::UnsupportedMeasure(
            "a signed density is not a nonnegative measure",
        )),
    }
}

/// Load vector `b_i = ∫ ν φ_i` over `domain`, using the same lumped rule as
/// [`mass_matrix`].
pub fn load_vector(grid: &Grid, domain: &NodeSet, nu: &MeasureSpec) -> Result<Vec<f64>> {
    if domain.grid() != grid {
        return Err(Error::GridMismatch);
    }
    nu.check_grid(grid)?;
    match nu {
        MeasureSpec::Zero => Ok(vec![0.0; grid.node_count()]),
        MeasureSpec::Density { density, support }
        | MeasureSpec::SignedDensity { density, support } => {
            Ok(lumped_weights(grid, domain, density, support.as_ref()))
        }
        MeasureSpec::Obstacle(_) => Err(Error::UnsupportedMeasure(
            "an obstacle measure cannot be a right-hand side",
        )),
    }
}

/// `Σ_c w_c ∫_c u² dμ` over the listed cells with the lumped rule, where
/// `w_c` defaults to 1. For `∞_E` the result is `0` when `u` vanishes on
/// the `E` corners of those cells and `+∞` otherwise.
pub fn cell_mu_energy(
    mu: &MeasureSpec,
    u: &Field,
    cells: &[usize],
    weights: Option<&[f64]>,
) -> Result<f64> {
    let grid = u.grid();
    mu.check_grid(grid)?;
    let corners = grid.corners_per_cell();
    let v = u.values();
    match mu {
        MeasureSpec::Zero => Ok(0.0),
        MeasureSpec::Obstacle(e) => {
            let m = e.to_mask();
            let hit = cells.iter().any(|&c| {
                grid.cell_corners(c)[..corners]
                    .iter()
                    .any(|&k| m[k] && v[k] != 0.0)
            });
            Ok(if hit { f64::INFINITY } else { 0.0 })
        }
        MeasureSpec::Density { density, support } => {
            let keep = support.as_ref().map(|s| s.to_mask());
            let raw = density.values();
            let share = grid.cell_volume() / corners as f64;
            let mut total = 0.0;
            for (n, &c) in cells.iter().enumerate() {
                let cc = grid.cell_corners(c);
                let f = cc[..corners].iter().map(|&k| raw[k]).sum::<f64>() / corners as f64;
                let s: f64 = cc[..corners]
                    .iter()
                    .filter(|&&k| keep.as_ref().is_none_or(|m| m[k]))
                    .map(|&k| v[k] * v[k])
                    .sum();
                total += weights.map_or(1.0, |w| w[n]) * f * share * s;
            }
            Ok(total)
        }
        MeasureSpec::SignedDensity { .. } => Err(Error::UnsupportedMeasure(
            "a signed density is not a nonnegative measure",
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `|x - y|^{2-N}`, used for `N = 3`.
    Riesz,
    /// `log(L0 / |x - y|)`, used for `N = 2`.
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KatoNorm {
    pub value: f64,
    pub ball: BallSpec,
    pub kernel: KernelKind,
    /// Length inside the logarithmic kernel; `None` for the Riesz kernel.
    pub rescale: Option<f64>,
    /// Node attaining the supremum, if the ball holds any node.
    pub argmax: Option<usize>,
}

/// Integral of the kernel over a ball of radius `a` centred at the pole.
fn self_ball_integral(dim: usize, a: f64, rescale: f64) -> f64 {
    match dim {
        3 => 2.0 * PI * a * a,
        _ => PI * a * a * ((rescale / a).ln() + 0.5),
    }
}

/// `sup_{x ∈ B} ∫_B K(x - y) d|ν|(y)` over grid nodes `x`.
///
/// Cells whose centre lies in the ball carry `|ν|` at their midpoint. The
/// (up to `2^N`) cells having `x` as a corner are replaced by a ball of the
/// same volume centred at `x`, where the kernel integral is exact. For
/// `N = 2` the log kernel uses `rescale`, default `4R`, which must be at
/// least the ball diameter.
pub fn kato_norm(nu: &MeasureSpec, ball: &BallSpec, rescale: Option<f64>) -> Result<KatoNorm> {
    let grid = match nu {
        MeasureSpec::Obstacle(_) => {
            return Err(Error::UnsupportedMeasure("an obstacle measure is not a Kato measure"))
        }
        MeasureSpec::Zero => None,
        _ => nu.grid(),
    };
    if !(ball.radius > 0.0) {
        return Err(Error::invalid("Kato ball needs a positive radius"));
    }
    let dim = grid.map(|g| g.dim()).unwrap_or(ball.center.len());
    let (kernel, l0) = match dim {
        3 => (KernelKind::Riesz, None),
        2 => {
            let l0 = rescale.unwrap_or(4.0 * ball.radius);
            if l0 < 2.0 * ball.radius * (1.0 - 1e-12) {
                return Err(Error::invalid(format!(
                    "log-kernel rescale length {l0} is below the ball diameter"
                )));
            }
            (KernelKind::Log, Some(l0))
        }
        d => return Err(Error::Dimension(d)),
    };
    let mut report = KatoNorm {
        value: 0.0,
        ball: ball.clone(),
        kernel,
        rescale: l0,
        argmax: None,
    };
    let Some(grid) = grid else {
        return Ok(report);
    };
    let nodal: Vec<f64> = nu
        .nodal_density()
        .expect("density variant")
        .iter()
        .map(|v| v.abs())
        .collect();
    let h = grid.spacing();
    let slack = 1e-9 * h;
    let l0v = l0.unwrap_or(1.0);

    // cells in the ball with their midpoint density
    let mut cells: Vec<([usize; 3], f64)> = Vec::new();
    for origin in grid.cells() {
        let c = grid.cell_center(origin);
        if !ball.contains(&c[..dim], slack) {
            continue;
        }
        let corners = grid.cell_corners(origin);
        let f = corners[..grid.corners_per_cell()]
            .iter()
            .map(|&k| nodal[k])
            .sum::<f64>()
            / grid.corners_per_cell() as f64;
        cells.push((grid.multi_index(origin), f));
    }
    let candidates: Vec<usize> = (0..grid.node_count())
        .filter(|&n| ball.contains(&grid.coord(n)[..dim], slack))
        .collect();
    if candidates.is_empty() || cells.iter().all(|(_, f)| *f == 0.0) {
        report.argmax = candidates.first().copied();
        return Ok(report);
    }

    // kernel values on the half-integer offset lattice
    let span: Vec<usize> = grid.counts().to_vec();
    let width: Vec<usize> = span.iter().map(|s| 2 * s + 1).collect();
    let table_len: usize = width.iter().product();
    let mut table = vec![0.0; table_len];
    for (t, slot) in table.iter_mut().enumerate() {
        let mut rest = t;
        let mut r2 = 0.0;
        for w in width.iter().take(dim) {
            let d = (rest % w) as f64 - ((w - 1) / 2) as f64;
            rest /= w;
            let off = (d + 0.5) * h;
            r2 += off * off;
        }
        let r = r2.sqrt();
        *slot = match kernel {
            KernelKind::Riesz => 1.0 / r,
            KernelKind::Log => (l0v / r).ln(),
        };
    }
    let cell_vol = grid.cell_volume();

    let mut best = f64::NEG_INFINITY;
    let mut best_node = candidates[0];
    for &x in &candidates {
        let m = grid.multi_index(x);
        let mut sum = 0.0;
        let mut self_mass = 0.0;
        let mut self_count = 0usize;
        for (cm, f) in &cells {
            let mut t = 0;
            let mut stride = 1;
            let mut is_self = true;
            for k in 0..dim {
                let d = cm[k] as isize - m[k] as isize;
                if d != 0 && d != -1 {
                    is_self = false;
                }
                t += (d + span[k] as isize) as usize * stride;
                stride *= width[k];
            }
            if is_self {
                self_mass += f;
                self_count += 1;
            } else {
                sum += f * table[t];
            }
        }
        sum *= cell_vol;
        if self_count > 0 {
            let vol = self_count as f64 * cell_vol;
            let a = (vol / crate::grid::unit_ball_volume(dim)).powf(1.0 / dim as f64);
            sum += self_mass / self_count as f64 * self_ball_integral(dim, a, l0v);
        }
        if sum > best {
            best = sum;
            best_node = x;
        }
    }
    report.value = best.max(0.0);
    report.argmax = Some(best_node);
    Ok(report)
}

/// Kato norms on concentric balls of decreasing radius. For `N = 2` the log
/// kernel uses one rescale length for every ball, default four times the
/// largest radius, so the entries are comparable.
pub fn kato_vanishing_profile(
    nu: &MeasureSpec,
    center: &[f64],
    radii: &[f64],
    rescale: Option<f64>,
) -> Result<Vec<KatoNorm>> {
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("radii must be strictly decreasing"));
    }
    let l0 = rescale.or_else(|| radii.first().map(|r| 4.0 * r));
    radii
        .iter()
        .map(|&r| kato_norm(nu, &BallSpec::new(center, r), l0))
        .collect()
}

/// Ratio `‖ν‖_{H^{-1}(B)} / ‖ν‖_{K_N(B)}` for the Laplacian on the ball,
/// with `‖ν‖_{H^{-1}}^2 = bᵀ K^{-1} b`. Returns `None` when the Kato norm
/// vanishes.
pub fn dual_norm_ratio(
    nu: &MeasureSpec,
    ball: &BallSpec,
    rel_tol: f64,
) -> Result<Option<f64>> {
    let Some(grid) = nu.grid() else {
        return Ok(None);
    };
    let kato = kato_norm(nu, ball, None)?;
    if kato.value == 0.0 {
        return Ok(None);
    }
    let domain = mask(grid, &Shape::Ball(ball.clone()))?;
    let k = assemble_stiffness(grid, &domain, &EllipticCoefficients::laplacian(grid.dim()))?;
    let b = load_vector(grid, &domain, &nu.restrict(&domain)?)?;
    let sys = ConstrainedSystem::new(k, &free_nodes(&domain, None)?)?;
    let (u, _) = sys.solve(&b, &Field::zeros(grid), &SolverOptions::with_tol(rel_tol), None)?;
    let dual: f64 = b.iter().zip(u.values()).map(|(x, y)| x * y).sum();
    Ok(Some(dual.max(0.0).sqrt() / kato.value))
}

/// Grid-independent description of a density, realised per grid.
#[derive(Debug, Clone)]
pub enum DensityModel {
    Constant(f64),
    /// `scale * |x - center|^power`, zero at the centre when `power > 0`
    /// and capped at `cap` when `power < 0`.
    RadialPower {
        center: Vec<f64>,
        scale: f64,
        power: f64,
        cap: f64,
    },
    /// `value` on the shape, zero elsewhere.
    Indicator { shape: Shape, value: f64 },
}

impl DensityModel {
    pub fn eval(&self, x: &[f64], eps: f64) -> f64 {
        match self {
            DensityModel::Constant(c) => *c,
            DensityModel::RadialPower {
                center,
                scale,
                power,
                cap,
            } => {
                let r = dist(center, x);
                if r == 0.0 {
                    if *power > 0.0 {
                        0.0
                    } else if *power == 0.0 {
                        *scale
                    } else {
                        *cap
                    }
                } else {
                    (scale * r.powf(*power)).min(*cap)
                }
            }
            DensityModel::Indicator { shape, value } => {
                if shape.contains(x, eps) {
                    *value
                } else {
                    0.0
                }
            }
        }
    }

    pub fn realize(&self, grid: &Grid) -> Field {
        let eps = 1e-9 * grid.spacing();
        Field::from_fn(grid, |x| self.eval(x, eps))
    }
}

/// Grid-independent description of a measure.
#[derive(Debug, Clone)]
pub enum MeasureModel {
    Zero,
    Density {
        density: DensityModel,
        support: Option<Shape>,
    },
    Obstacle(Shape),
    Signed {
        density: DensityModel,
        support: Option<Shape>,
    },
}

impl MeasureModel {
    pub fn realize(&self, grid: &Grid) -> Result<MeasureSpec> {
        let support = |s: &Option<Shape>| s.as_ref().map(|s| mask(grid, s)).transpose();
        Ok(match self {
            MeasureModel::Zero => MeasureSpec::Zero,
            MeasureModel::Density { density, support: s } => {
                let mu = MeasureSpec::density(density.realize(grid))?;
                match support(s)? {
                    Some(e) => mu.restrict(&e)?,
                    None => mu,
                }
            }
            MeasureModel::Obstacle(shape) => MeasureSpec::Obstacle(mask(grid, shape)?),
            MeasureModel::Signed { density, support: s } => {
                let nu = MeasureSpec::signed(density.realize(grid));
                match support(s)? {
                    Some(e) => nu.restrict(&e)?,
                    None => nu,
                }
            }
        })
    }
}
