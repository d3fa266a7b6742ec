//! Reference integrals for tensor-product multilinear elements on the unit
//! cube. Local corner `a` has coordinate bit `k` of `a` along axis `k`.

use crate::grid::Grid;

const MASS_1D: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
const STIFF_1D: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];

/// `∫ ψ'_a ψ_b` on `[0, 1]`.
fn mixed_1d(a: usize, _b: usize) -> f64 {
    if a == 0 {
        -0.5
    } else {
        0.5
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceElement {
    dim: usize,
    corners: usize,
    /// `grad[i * 3 + j][a][b] = ∫ ∂_i φ_a ∂_j φ_b` on the unit cube.
    grad: Vec<[[f64; 8]; 8]>,
    /// `mass[a][b] = ∫ φ_a φ_b` on the unit cube.
    mass: [[f64; 8]; 8],
}

impl ReferenceElement {
    pub fn new(dim: usize) -> ReferenceElement {
        let corners = 1 << dim;
        let bit = |a: usize, k: usize| a >> k & 1;
        let mut grad = vec![[[0.0; 8]; 8]; 9];
        let mut mass = [[0.0; 8]; 8];
        for a in 0..corners {
            for b in 0..corners {
                mass[a][b] = (0..dim).map(|k| MASS_1D[bit(a, k)][bit(b, k)]).product();
                for i in 0..dim {
                    for j in 0..dim {
                        let mut v = 1.0;
                        for k in 0..dim {
                            let (ak, bk) = (bit(a, k), bit(b, k));
                            v *= if k == i && k == j {
                                STIFF_1D[ak][bk]
                            } else if k == i {
                                mixed_1d(ak, bk)
                            } else if k == j {
                                mixed_1d(bk, ak)
                            } else {
                                MASS_1D[ak][bk]
                            };
                        }
                        grad[i * 3 + j][a][b] = v;
                    }
                }
            }
        }
        ReferenceElement {
            dim,
            corners,
            grad,
            mass,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn corners(&self) -> usize {
        self.corners
    }

    /// Element stiffness matrix for a constant symmetric coefficient matrix
    /// on a cell of side `h`.
    pub fn stiffness(&self, a: &[[f64; 3]; 3], h: f64) -> [[f64; 8]; 8] {
        let scale = h.powi(self.dim as i32 - 2);
        let mut ke = [[0.0; 8]; 8];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let c = a[i][j];
                if c == 0.0 {
                    continue;
                }
                let g = &self.grad[i * 3 + j];
                for (row, grow) in ke.iter_mut().zip(g).take(self.corners) {
                    for (v, gv) in row.iter_mut().zip(grow).take(self.corners) {
                        *v += c * gv;
                    }
                }
            }
        }
        for row in ke.iter_mut().take(self.corners) {
            for v in row.iter_mut().take(self.corners) {
                *v *= scale;
            }
        }
        ke
    }

    /// `∫_cell |Du|^2` for corner values `uc`.
    pub fn dirichlet_energy(&self, uc: &[f64], h: f64) -> f64 {
        let scale = h.powi(self.dim as i32 - 2);
        let mut total = 0.0;
        for i in 0..self.dim {
            let g = &self.grad[i * 3 + i];
            total += quad(g, uc, self.corners);
        }
        total * scale
    }

    /// `∫_cell u^2` for corner values `uc`.
    pub fn l2_squared(&self, uc: &[f64], h: f64) -> f64 {
        quad(&self.mass, uc, self.corners) * h.powi(self.dim as i32)
    }

    /// `∫_cell u`.
    pub fn integral(&self, uc: &[f64], h: f64) -> f64 {
        uc[..self.corners].iter().sum::<f64>() / self.corners as f64 * h.powi(self.dim as i32)
    }
}

fn quad(m: &[[f64; 8]; 8], u: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        let mut row = 0.0;
        for b in 0..n {
            row += m[a][b] * u[b];
        }
        s += u[a] * row;
    }
    s
}

/// Gathers the corner values of a nodal vector on one cell.
pub fn corner_values(grid: &Grid, origin: usize, values: &[f64]) -> [f64; 8] {
    let corners = grid.cell_corners(origin);
    let mut out = [0.0; 8];
    for (o, &c) in out.iter_mut().zip(&corners).take(grid.corners_per_cell()) {
        *o = values[c];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn bilinear_laplacian_element() {
        let e = ReferenceElement::new(2);
        let k = e.stiffness(&IDENTITY, 1.0);
        // corners: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1)
        let tol = 1e-15;
        for a in 0..4 {
            assert!((k[a][a] - 2.0 / 3.0).abs() < tol);
        }
        assert!((k[0][1] + 1.0 / 6.0).abs() < tol);
        assert!((k[0][2] + 1.0 / 6.0).abs() < tol);
        assert!((k[0][3] + 1.0 / 3.0).abs() < tol);
        for a in 0..4 {
            let row: f64 = k[a][..4].iter().sum();
            assert!(row.abs() < tol);
        }
    }

    #[test]
    fn trilinear_laplacian_element() {
        let e = ReferenceElement::new(3);
        let k = e.stiffness(&IDENTITY, 1.0);
        assert!((k[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(k[0][1].abs() < 1e-15);
        assert!((k[0][3] + 1.0 / 12.0).abs() < 1e-15);
        assert!((k[0][7] + 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn linear_field_energy_is_exact() {
        for dim in [2, 3] {
            let e = ReferenceElement::new(dim);
            let h = 0.1;
            let mut uc = [0.0; 8];
            for (a, v) in uc.iter_mut().enumerate().take(1 << dim) {
                *v = 2.0 * h * (a & 1) as f64;
            }
            let expect = 4.0 * h.powi(dim as i32);
            assert!((e.dirichlet_energy(&uc, h) - expect).abs() < 1e-14);
            let mass: f64 = (0..1 << dim)
                .flat_map(|a| (0..1 << dim).map(move |b| (a, b)))
                .map(|(a, b)| e.mass[a][b])
                .sum();
            assert!((mass - 1.0).abs() < 1e-14);
        }
    }
}
