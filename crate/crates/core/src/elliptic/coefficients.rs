use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub type MatrixFn = Arc<dyn Fn(&[f64]) -> Mat3 + Send + Sync>;

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Relative slack on the declared bounds, covering rounding in the
/// coefficient evaluation itself.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone)]
pub enum CoefficientField {
    Constant(Mat3),
    Variable(MatrixFn),
}

/// Coefficient matrix field `a_ij(x)` with declared ellipticity `lambda`
/// and entry bound `bound`.
#[derive(Clone)]
pub struct EllipticCoefficients {
    dim: usize,
    field: CoefficientField,
    lambda: f64,
    bound: f64,
}

impl fmt::Debug for EllipticCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = match &self.field {
            CoefficientField::Constant(a) => format!("{a:?}"),
            CoefficientField::Variable(_) => "variable".to_string(),
        };
        f.debug_struct("EllipticCoefficients")
            .field("dim", &self.dim)
            .field("field", &field)
            .field("lambda", &self.lambda)
            .field("bound", &self.bound)
            .finish()
    }
}

impl EllipticCoefficients {
    pub fn laplacian(dim: usize) -> EllipticCoefficients {
        EllipticCoefficients {
            dim,
            field: CoefficientField::Constant(IDENTITY),
            lambda: 1.0,
            bound: 1.0,
        }
    }

    pub fn constant(dim: usize, a: Mat3, lambda: f64, bound: f64) -> Result<EllipticCoefficients> {
        Self::build(dim, CoefficientField::Constant(a), lambda, bound)
    }

    pub fn variable(
        dim: usize,
        f: impl Fn(&[f64]) -> Mat3 + Send + Sync + 'static,
        lambda: f64,
        bound: f64,
    ) -> Result<EllipticCoefficients> {
        Self::build(dim, CoefficientField::Variable(Arc::new(f)), lambda, bound)
    }

    fn build(
        dim: usize,
        field: CoefficientField,
        lambda: f64,
        bound: f64,
    ) -> Result<EllipticCoefficients> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if !(lambda > 0.0 && lambda.is_finite() && bound.is_finite() && bound >= lambda) {
            return Err(Error::invalid(format!(
                "need 0 < lambda <= Lambda, got lambda={lambda}, Lambda={bound}"
            )));
        }
        let c = EllipticCoefficients {
            dim,
            field,
            lambda,
            bound,
        };
        if let CoefficientField::Constant(_) = c.field {
            c.check_at(&[0.0; 3])?;
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.field, CoefficientField::Constant(_))
    }

    /// Coefficients multiplied by `c > 0`, with bounds scaled alongside.
    pub fn scaled(&self, c: f64) -> EllipticCoefficients {
        assert!(c > 0.0, "scale factor must be positive");
        let field = match &self.field {
            CoefficientField::Constant(a) => CoefficientField::Constant(scale_mat(a, c)),
            CoefficientField::Variable(f) => {
                let f = f.clone();
                CoefficientField::Variable(Arc::new(move |x: &[f64]| scale_mat(&f(x), c)))
            }
        };
        EllipticCoefficients {
            dim: self.dim,
            field,
            lambda: self.lambda * c,
            bound: self.bound * c,
        }
    }

    /// Raw (possibly non-symmetric) coefficient matrix at `x`.
    pub fn at(&self, x: &[f64]) -> Mat3 {
        let mut a = match &self.field {
            CoefficientField::Constant(a) => *a,
            CoefficientField::Variable(f) => f(x),
        };
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i >= self.dim || j >= self.dim {
                    *v = 0.0;
                }
            }
        }
        a
    }

    /// Symmetric part of the coefficient matrix at `x`.
    pub fn symmetric_at(&self, x: &[f64]) -> Mat3 {
        let a = self.at(x);
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = 0.5 * (a[i][j] + a[j][i]);
            }
        }
        s
    }

    /// Largest `|a_ij - a_ji|` relative to the bound at `x`.
    pub fn asymmetry_at(&self, x: &[f64]) -> f64 {
        let a = self.at(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((a[i][j] - a[j][i]).abs());
            }
        }
        worst / self.bound
    }

    /// Checks `|a_ij| <= Lambda` and `a ξ·ξ >= lambda |ξ|^2` on the probe set.
    pub fn check_at(&self, x: &[f64]) -> Result<()> {
        let a = self.at(x);
        let point = x[..self.dim].to_vec();
        for i in 0..self.dim {
            for j in 0..self.dim {
                if !a[i][j].is_finite() || a[i][j].abs() > self.bound * (1.0 + BOUND_SLACK) {
                    return Err(Error::Ellipticity {
                        point,
                        reason: format!("|a[{i}][{j}]| = {} exceeds {}", a[i][j].abs(), self.bound),
                    });
                }
            }
        }
        for xi in probe_vectors(self.dim) {
            let mut q = 0.0;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    q += a[i][j] * xi[i] * xi[j];
                }
            }
            if q < self.lambda * (1.0 - BOUND_SLACK) {
                return Err(Error::Ellipticity {
                    point,
                    reason: format!("a xi.xi = {q} below lambda = {} for xi = {xi:?}", self.lambda),
                });
            }
        }
        Ok(())
    }
}

fn scale_mat(a: &Mat3, c: f64) -> Mat3 {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|v| *v *= c);
    out
}

/// Unit probe directions: axes, normalised pairwise sums and differences,
/// and in 3-D the four body diagonals.
pub fn probe_vectors(dim: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in 0..dim {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        out.push(e);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        for j in i + 1..dim {
            for sign in [1.0, -1.0] {
                let mut e = [0.0; 3];
                e[i] = s;
                e[j] = sign * s;
                out.push(e);
            }
        }
    }
    if dim == 3 {
        let t = 1.0 / 3f64.sqrt();
        for (b, c) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            out.push([t, b * t, c * t]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_passes_checks() {
        for dim in [2, 3] {
            let c = EllipticCoefficients::laplacian(dim);
            c.check_at(&[0.3, 0.1, 0.0]).unwrap();
            assert_eq!(c.asymmetry_at(&[0.0; 3]), 0.0);
        }
    }

    #[test]
    fn rejects_violations() {
        let weak = [[0.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        assert!(matches!(
            EllipticCoefficients::constant(2, weak, 1.0, 1.0),
            Err(Error::Ellipticity { .. })
        ));
        let big = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        assert!(EllipticCoefficients::constant(2, big, 1.0, 2.0).is_err());
        // off-diagonal coupling that breaks ellipticity along (1, -1)
        let skew = [[1.0, 0.9, 0.0], [0.9, 1.0, 0.0], [0.0; 3]];
        assert!(EllipticCoefficients::constant(2, skew, 0.5, 1.0).is_err());
        assert!(EllipticCoefficients::constant(2, skew, 0.1, 1.0).is_ok());
    }

    #[test]
    fn variable_checked_pointwise() {
        let c = EllipticCoefficients::variable(
            2,
            |x| [[1.0 + x[0], 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]],
            1.0,
            1.5,
        )
        .unwrap();
        assert!(c.check_at(&[0.4, 0.0]).is_ok());
        assert!(c.check_at(&[0.9, 0.0]).is_err());
    }

    #[test]
    fn scaling_scales_bounds() {
        let c = EllipticCoefficients::laplacian(3).scaled(2.5);
        assert_eq!(c.at(&[0.0; 3])[1][1], 2.5);
        assert_eq!(c.lambda(), 2.5);
        assert!(c.check_at(&[0.0; 3]).is_ok());
    }

    #[test]
    fn probes_are_unit() {
        for dim in [2, 3] {
            for p in probe_vectors(dim) {
                let n: f64 = p.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-15);
            }
        }
    }
}
