//! Sparse symmetric systems from the Newton linearisation: CSR storage with a fixed
//! stencil pattern, Jacobi-preconditioned conjugate gradients, and a tridiagonal
//! direct solve for 1D grids.

use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("conjugate gradients broke down at iteration {iteration} (pᵀAp = {curvature:e})")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("conjugate gradients did not reach {target:e} in {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    #[error("tridiagonal solve hit a zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("matrix is not tridiagonal")]
    NotTridiagonal,
}

/// Row-compressed matrix whose sparsity pattern is the 9-point (2D) or 3-point (1D)
/// neighbourhood of each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn stencil_pattern(grid: &Grid) -> CsrMatrix {
        let n = grid.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
        let dj_range = if grid.dim() == 2 { -1..=1 } else { 0..=0 };
        for c in 0..n {
            let (i, j) = grid.coords(c);
            for dj in dj_range.clone() {
                for di in -1isize..=1 {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii >= 0 && ii < nx && jj >= 0 && jj < ny {
                        cols.push(grid.index(ii as usize, jj as usize));
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn position(&self, row: usize, col: usize) -> usize {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        range
            .clone()
            .find(|&k| self.cols[k] == col)
            .unwrap_or_else(|| panic!("({row}, {col}) outside the stencil pattern"))
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self.position(row, col);
        self.vals[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        range
            .into_iter()
            .find(|&k| self.cols[k] == col)
            .map_or(0.0, |k| self.vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (row, out) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *out = s;
        }
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                worst = worst.max((self.vals[k] - self.get(self.cols[k], row)).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned CG for SPD `A`, starting from `x = 0`. Stops when
/// `‖b − Ax‖ ≤ max(rel_tol·‖b‖, abs_floor)`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    abs_floor: f64,
    max_iter: usize,
) -> Result<CgOutcome, LinearError> {
    let n = a.n;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    x.iter_mut().for_each(|v| *v = 0.0);
    let mut r = b.to_vec();
    let target = (rel_tol * dot(b, b).sqrt()).max(abs_floor);
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return Ok(CgOutcome {
            iterations: 0,
            residual: rnorm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(LinearError::Breakdown {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok(CgOutcome {
                iterations: it,
                residual: rnorm,
            });
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(LinearError::NotConverged {
        iterations: max_iter,
        residual: rnorm,
        target,
    })
}

/// Thomas algorithm for a tridiagonal CSR matrix (1D stencil pattern).
pub fn solve_tridiagonal(a: &CsrMatrix, b: &[f64], x: &mut [f64]) -> Result<(), LinearError> {
    let n = a.n;
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for row in 0..n {
        for k in a.row_ptr[row]..a.row_ptr[row + 1] {
            let col = a.cols[k];
            match col as isize - row as isize {
                -1 => sub[row] = a.vals[k],
                0 => diag[row] = a.vals[k],
                1 => sup[row] = a.vals[k],
                _ => {
                    if a.vals[k] != 0.0 {
                        return Err(LinearError::NotTridiagonal);
                    }
                }
            }
        }
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let m = diag[i] - if i > 0 { sub[i] * c[i - 1] } else { 0.0 };
        if m == 0.0 || !m.is_finite() {
            return Err(LinearError::ZeroPivot(i));
        }
        c[i] = sup[i] / m;
        d[i] = (b[i] - if i > 0 { sub[i] * d[i - 1] } else { 0.0 }) / m;
    }
    for i in (0..n).rev() {
        x[i] = d[i] - if i + 1 < n { c[i] * x[i + 1] } else { 0.0 };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(grid: &Grid, shift: f64) -> CsrMatrix {
        let mut a = CsrMatrix::stencil_pattern(grid);
        for c in 0..grid.len() {
            let (i, j) = grid.coords(c);
            a.add(c, c, shift);
            let mut nb = vec![];
            if i > 0 {
                nb.push(grid.index(i - 1, j));
            }
            if i + 1 < grid.nx() {
                nb.push(grid.index(i + 1, j));
            }
            if grid.dim() == 2 {
                if j > 0 {
                    nb.push(grid.index(i, j - 1));
                }
                if j + 1 < grid.ny() {
                    nb.push(grid.index(i, j + 1));
                }
            }
            a.add(c, c, 4.0);
            for k in nb {
                a.add(c, k, -1.0);
            }
        }
        a
    }

    #[test]
    fn cg_solves_spd_system() {
        let g = Grid::unit_2d(12, 1, 1.0).unwrap();
        let a = laplacian(&g, 0.1);
        assert_eq!(a.asymmetry(), 0.0);
        let xs: Vec<f64> = (0..g.len()).map(|k| ((k * 7 % 5) as f64) - 2.0).collect();
        let mut b = vec![0.0; g.len()];
        a.mul_vec(&xs, &mut b);
        let mut x = vec![0.0; g.len()];
        let out = conjugate_gradient(&a, &b, &mut x, 1e-13, 0.0, 1000).unwrap();
        assert!(out.iterations > 0);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_indefinite_matrix() {
        let g = Grid::unit_1d(6, 1, 1.0).unwrap();
        let a = laplacian(&g, -10.0);
        let b = vec![1.0; 6];
        let mut x = vec![0.0; 6];
        assert!(matches!(
            conjugate_gradient(&a, &b, &mut x, 1e-12, 0.0, 100),
            Err(LinearError::Breakdown { .. })
        ));
    }

    #[test]
    fn thomas_matches_cg() {
        let g = Grid::unit_1d(20, 1, 1.0).unwrap();
        let a = laplacian(&g, 0.5);
        let b: Vec<f64> = (0..20).map(|k| (k as f64).sin()).collect();
        let mut x1 = vec![0.0; 20];
        let mut x2 = vec![0.0; 20];
        solve_tridiagonal(&a, &b, &mut x1).unwrap();
        conjugate_gradient(&a, &b, &mut x2, 1e-14, 0.0, 100).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
