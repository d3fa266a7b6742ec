//! Bilinear-form assembly for divergence-form operators and SPD solves.

mod coefficients;
pub mod element;
mod field;
pub mod solver;
pub mod sparse;

pub use coefficients::{probe_vectors, CoefficientField, EllipticCoefficients, Mat3, MatrixFn};
pub use element::ReferenceElement;
pub use field::Field;
pub use solver::{solve_spd, solve_spd_with, SolveStats, SolverOptions, DEFAULT_REL_TOL};
pub use sparse::SparseSpdMatrix;

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeSet};

/// Asymmetry (relative to the bound) above which a warning is logged before
/// the coefficients are symmetrised.
const ASYMMETRY_WARN: f64 = 1e-12;

/// Cells taking part in the form over `domain`: those with at least one
/// corner in the domain. Indexed by the cell's lower-corner node.
pub fn active_cells(grid: &Grid, domain: &NodeSet) -> Result<Vec<bool>> {
    if domain.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let in_domain = domain.to_mask();
    let mut active = vec![false; grid.node_count()];
    for origin in grid.cells() {
        let corners = grid.cell_corners(origin);
        active[origin] = corners[..grid.corners_per_cell()]
            .iter()
            .any(|&c| in_domain[c]);
    }
    Ok(active)
}

/// Assembles `K[i][j] = a(φ_i, φ_j)` over the active cells of `domain`.
///
/// Rows are indexed by grid node. Restriction to free nodes happens in
/// [`ConstrainedSystem`], so constants lie in the kernel of every row whose
/// incident cells are all active.
pub fn assemble_stiffness(
    grid: &Grid,
    domain: &NodeSet,
    coeffs: &EllipticCoefficients,
) -> Result<SparseSpdMatrix> {
    if coeffs.dim() != grid.dim() {
        return Err(Error::invalid("coefficient and grid dimensions differ"));
    }
    if domain.interior().is_empty() {
        return Err(Error::Geometry("domain has no interior nodes".into()));
    }
    let active = active_cells(grid, domain)?;
    let dim = grid.dim();
    let h = grid.spacing();
    let reference = ReferenceElement::new(dim);

    let mut asym: f64 = 0.0;
    for origin in grid.cells().filter(|&c| active[c]) {
        let x = grid.cell_center(origin);
        coeffs.check_at(&x[..dim])?;
        asym = asym.max(coeffs.asymmetry_at(&x[..dim]));
    }
    if asym > ASYMMETRY_WARN {
        log::warn!("coefficients are not symmetric (relative skew {asym:.3e}); using the symmetric part");
    }

    let constant = if coeffs.is_constant() {
        Some(reference.stiffness(&coeffs.symmetric_at(&[0.0; 3]), h))
    } else {
        None
    };
    let element = |origin: usize| -> [[f64; 8]; 8] {
        match &constant {
            Some(ke) => *ke,
            None => {
                let x = grid.cell_center(origin);
                reference.stiffness(&coeffs.symmetric_at(&x[..dim]), h)
            }
        }
    };

    let strides = grid.strides();
    let slots = 3usize.pow(dim as u32);
    let n = grid.node_count();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut acc = [0.0f64; 27];
    let mut touched = [false; 27];
    for node in 0..n {
        acc[..slots].iter_mut().for_each(|v| *v = 0.0);
        touched[..slots].iter_mut().for_each(|v| *v = false);
        for (origin, local) in grid.incident_cells(node) {
            if !active[origin] {
                continue;
            }
            let ke = element(origin);
            for b in 0..grid.corners_per_cell() {
                let mut slot = 0;
                let mut pow = 1;
                for k in 0..dim {
                    let d = (b >> k & 1) as isize - (local >> k & 1) as isize;
                    slot += (d + 1) as usize * pow;
                    pow *= 3;
                }
                acc[slot] += ke[local][b];
                touched[slot] = true;
            }
        }
        // slot order is column order because every stride exceeds the sum
        // of the smaller ones
        for slot in 0..slots {
            if !touched[slot] || acc[slot] == 0.0 {
                continue;
            }
            let mut col = node as isize;
            let mut rest = slot;
            for s in strides.iter().take(dim) {
                col += (rest % 3) as isize * *s as isize - *s as isize;
                rest /= 3;
            }
            cols.push(col as u32);
            vals.push(acc[slot]);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseSpdMatrix::from_csr(
        n,
        row_ptr,
        cols,
        vals,
        Some(grid.clone()),
    ))
}

/// `a(u, u) = uᵀ K u`, clamped at zero against rounding.
pub fn energy_of(k: &SparseSpdMatrix, u: &Field) -> Result<f64> {
    if k.grid() != Some(u.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(k.quadratic(u.values()).max(0.0))
}

/// `Σ_c w_c ∫_c |Du|²` over the listed cells (`w_c = 1` by default).
pub fn local_dirichlet_energy(u: &Field, cells: &[usize], weights: Option<&[f64]>) -> f64 {
    let grid = u.grid();
    let re = ReferenceElement::new(grid.dim());
    cells
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let uc = element::corner_values(grid, c, u.values());
            weights.map_or(1.0, |w| w[n]) * re.dirichlet_energy(&uc, grid.spacing())
        })
        .sum()
}

/// `Σ_c ∫_c u²` over the listed cells.
pub fn local_l2_squared(u: &Field, cells: &[usize]) -> f64 {
    let grid = u.grid();
    let re = ReferenceElement::new(grid.dim());
    cells
        .iter()
        .map(|&c| re.l2_squared(&element::corner_values(grid, c, u.values()), grid.spacing()))
        .sum()
}

/// Interior nodes of `domain` that are not pinned.
pub fn free_nodes(domain: &NodeSet, pinned: Option<&NodeSet>) -> Result<NodeSet> {
    let interior = domain.interior();
    match pinned {
        Some(p) => interior.difference(p),
        None => Ok(interior),
    }
}

/// A grid operator split into free and prescribed nodes.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    grid: Grid,
    matrix: SparseSpdMatrix,
    free: Vec<usize>,
    reduced: SparseSpdMatrix,
}

impl ConstrainedSystem {
    pub fn new(matrix: SparseSpdMatrix, free: &NodeSet) -> Result<ConstrainedSystem> {
        let grid = match matrix.grid() {
            Some(g) if g == free.grid() => g.clone(),
            _ => return Err(Error::GridMismatch),
        };
        let mut pos = vec![u32::MAX; grid.node_count()];
        for (p, &i) in free.indices().iter().enumerate() {
            pos[i] = p as u32;
        }
        let reduced = matrix.principal_submatrix(free.indices(), &pos);
        Ok(ConstrainedSystem {
            grid,
            matrix,
            free: free.indices().to_vec(),
            reduced,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &SparseSpdMatrix {
        &self.matrix
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn reduced(&self) -> &SparseSpdMatrix {
        &self.reduced
    }

    /// Solves `A u = load` on free nodes with `u = fixed` elsewhere. Values
    /// of `fixed` on free nodes are ignored.
    pub fn solve(
        &self,
        load: &[f64],
        fixed: &Field,
        opts: &SolverOptions,
        guess: Option<&Field>,
    ) -> Result<(Field, SolveStats)> {
        if fixed.grid() != &self.grid || guess.is_some_and(|g| g.grid() != &self.grid) {
            return Err(Error::GridMismatch);
        }
        if load.len() != self.grid.node_count() {
            return Err(Error::invalid("load vector has wrong length"));
        }
        let mut u = fixed.values().to_vec();
        for &i in &self.free {
            u[i] = 0.0;
        }
        let lift = self.matrix.apply(&u);
        let rhs: Vec<f64> = self.free.iter().map(|&i| load[i] - lift[i]).collect();
        let start: Option<Vec<f64>> =
            guess.map(|g| self.free.iter().map(|&i| g.get(i)).collect());
        let (x, stats) = solve_spd_with(&self.reduced, &rhs, opts, start.as_deref())?;
        for (&i, v) in self.free.iter().zip(x) {
            u[i] = v;
        }
        Ok((Field::from_values(&self.grid, u)?, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mask, Shape};

    fn unit_square(h: f64) -> Grid {
        Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], h).unwrap()
    }

    #[test]
    fn interior_rows_sum_to_zero() {
        let g = unit_square(0.25);
        let full = NodeSet::full(&g);
        let k = assemble_stiffness(&g, &full, &EllipticCoefficients::laplacian(2)).unwrap();
        for &i in full.interior().indices() {
            let s: f64 = k.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-14, "row {i} sums to {s}");
        }
        assert!(k.max_asymmetry() < 1e-12);
        // 2-D Laplacian stencil: 8/3 centre, -1/3 for all eight neighbours
        let centre = g.index(&[2, 2]);
        assert!((k.get(centre, centre) - 8.0 / 3.0).abs() < 1e-14);
        assert!((k.get(centre, centre + 1) + 1.0 / 3.0).abs() < 1e-14);
        assert!((k.get(centre, centre + 6) + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn constants_have_zero_energy() {
        let g = unit_square(0.125);
        let full = NodeSet::full(&g);
        let k = assemble_stiffness(&g, &full, &EllipticCoefficients::laplacian(2)).unwrap();
        assert!(energy_of(&k, &Field::constant(&g, 3.0)).unwrap() < 1e-12);
    }

    #[test]
    fn linear_field_energy_is_area() {
        let g = unit_square(0.125);
        let full = NodeSet::full(&g);
        let k = assemble_stiffness(&g, &full, &EllipticCoefficients::laplacian(2)).unwrap();
        let u = Field::from_fn(&g, |x| x[0]);
        assert!((energy_of(&k, &u).unwrap() - 1.0).abs() < 1e-13);
        let g3 = Grid::new(3, &[(0.0, 1.0); 3], 0.25).unwrap();
        let k3 = assemble_stiffness(&g3, &NodeSet::full(&g3), &EllipticCoefficients::laplacian(3))
            .unwrap();
        let u3 = Field::from_fn(&g3, |x| x[0] - 2.0 * x[2]);
        assert!((energy_of(&k3, &u3).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn energy_rejects_other_grid() {
        let g = unit_square(0.25);
        let k = assemble_stiffness(&g, &NodeSet::full(&g), &EllipticCoefficients::laplacian(2))
            .unwrap();
        let other = unit_square(0.125);
        assert!(matches!(
            energy_of(&k, &Field::zeros(&other)),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn empty_interior_is_an_error() {
        let g = unit_square(0.25);
        let single = NodeSet::single(&g, g.index(&[2, 2]));
        assert!(assemble_stiffness(&g, &single, &EllipticCoefficients::laplacian(2)).is_err());
    }

    #[test]
    fn linear_boundary_data_is_reproduced() {
        let g = unit_square(0.125);
        let full = NodeSet::full(&g);
        let k = assemble_stiffness(&g, &full, &EllipticCoefficients::laplacian(2)).unwrap();
        let sys = ConstrainedSystem::new(k, &free_nodes(&full, None).unwrap()).unwrap();
        let g_field = Field::from_fn(&g, |x| 0.3 + x[0] - 0.5 * x[1]);
        let load = vec![0.0; g.node_count()];
        let (u, _) = sys
            .solve(&load, &g_field, &SolverOptions::with_tol(1e-12), None)
            .unwrap();
        assert!(u.max_diff(&g_field).unwrap() < 1e-10);
    }

    #[test]
    fn asymmetric_coefficients_use_symmetric_part() {
        let g = unit_square(0.25);
        let full = NodeSet::full(&g);
        let skew = [[2.0, 0.5, 0.0], [-0.5, 2.0, 0.0], [0.0; 3]];
        let sym = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0; 3]];
        let ka = assemble_stiffness(&g, &full, &EllipticCoefficients::constant(2, skew, 1.0, 2.0).unwrap())
            .unwrap();
        let kb = assemble_stiffness(&g, &full, &EllipticCoefficients::constant(2, sym, 1.0, 2.0).unwrap())
            .unwrap();
        assert_eq!(ka, kb);
    }

    #[test]
    fn ball_domain_masks_cells() {
        let g = unit_square(0.05);
        let disc = mask(&g, &Shape::ball(&[0.5, 0.5], 0.3)).unwrap();
        let active = active_cells(&g, &disc).unwrap();
        let far = g.index(&[0, 0]);
        assert!(!active[far]);
        let k = assemble_stiffness(&g, &disc, &EllipticCoefficients::laplacian(2)).unwrap();
        assert_eq!(k.row(far).count(), 0);
    }
}
