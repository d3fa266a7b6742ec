//! Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};

use super::sparse::SparseSpdMatrix;

pub const DEFAULT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖b - Ax‖ <= rel_tol ‖b‖`.
    pub rel_tol: f64,
    /// Iteration cap; defaults to `50 * sqrt(n)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: DEFAULT_REL_TOL,
            max_iter: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(rel_tol: f64) -> SolverOptions {
        SolverOptions {
            rel_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rel_tol > 0.0 && self.rel_tol <= 1e-2 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "rel_tol must lie in (0, 1e-2], got {}",
                self.rel_tol
            )))
        }
    }

    pub fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| (50.0 * (n as f64).sqrt()).ceil() as usize)
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// True relative residual of the returned iterate.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn solve_spd(k: &SparseSpdMatrix, rhs: &[f64], rel_tol: f64) -> Result<(Vec<f64>, SolveStats)> {
    solve_spd_with(k, rhs, &SolverOptions::with_tol(rel_tol), None)
}

/// Solves `K x = rhs` for symmetric positive definite `K`.
///
/// Fails with [`Error::NoConvergence`] rather than returning a partial
/// iterate when the cap is reached.
pub fn solve_spd_with(
    k: &SparseSpdMatrix,
    rhs: &[f64],
    opts: &SolverOptions,
    guess: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveStats)> {
    opts.validate()?;
    let n = k.dim();
    if rhs.len() != n {
        return Err(Error::invalid("right-hand side has wrong length"));
    }
    let bnorm = norm(rhs);
    if n == 0 || bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = k
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN })
        .collect();
    if inv_diag.iter().any(|d| d.is_nan()) {
        return Err(Error::invalid("matrix has a non-positive diagonal entry"));
    }
    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(_) => return Err(Error::invalid("initial guess has wrong length")),
        None => vec![0.0; n],
    };
    let cap = opts.iteration_cap(n);
    let target = opts.rel_tol * bnorm;
    let mut iterations = 0;
    let mut ap = vec![0.0; n];
    let mut r = vec![0.0; n];

    loop {
        // (re)start from the true residual
        k.matvec(&x, &mut ap);
        for i in 0..n {
            r[i] = rhs[i] - ap[i];
        }
        let rnorm = norm(&r);
        if rnorm <= target {
            return Ok((
                x,
                SolveStats {
                    iterations,
                    residual: rnorm / bnorm,
                },
            ));
        }
        if iterations >= cap {
            return Err(Error::NoConvergence {
                iterations,
                residual: rnorm / bnorm,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < cap {
            k.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::invalid("matrix is not positive definite"));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm(&r) <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}
