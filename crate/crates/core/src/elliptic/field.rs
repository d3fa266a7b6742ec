use crate::error::{Error, Result};
use crate::grid::Grid;

/// One scalar per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Field {
        Field::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Field {
        let dim = grid.dim();
        let values = (0..grid.node_count())
            .map(|n| f(&grid.coord(n)[..dim]))
            .collect();
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at node {i}")));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    /// Largest nodal difference.
    pub fn max_diff(&self, other: &Field) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Multilinear interpolant at `x`, or `None` outside the grid box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        if x.len() != g.dim() || !g.contains_point(x) {
            return None;
        }
        let h = g.spacing();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..g.dim() {
            let s = ((x[a] - g.min_corner()[a]) / h).max(0.0);
            let i = (s.floor() as usize).min(g.counts()[a] - 2);
            base[a] = i;
            t[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let origin = g.index(&base);
        let corners = g.cell_corners(origin);
        let mut v = 0.0;
        for (k, &c) in corners[..g.corners_per_cell()].iter().enumerate() {
            let mut w = 1.0;
            for a in 0..g.dim() {
                w *= if k >> a & 1 == 1 { t[a] } else { 1.0 - t[a] };
            }
            v += w * self.values[c];
        }
        Some(v)
    }

    /// Interpolates onto every node of `target`, which must lie inside this
    /// field's box.
    pub fn resample(&self, target: &Grid) -> Result<Field> {
        let d = target.dim();
        let values = (0..target.node_count())
            .map(|n| {
                self.interpolate(&target.coord(n)[..d])
                    .ok_or_else(|| Error::Geometry("target grid leaves the source box".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Field::from_values(target, values)
    }

    /// Values of this field on an aligned sub-grid.
    pub fn crop_to(&self, sub: &Grid) -> Result<Field> {
        let map = self.grid.embed(sub)?;
        Field::from_values(sub, map.iter().map(|&i| self.values[i]).collect())
    }
}
