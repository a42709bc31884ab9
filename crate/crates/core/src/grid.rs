//! Uniform cell-centred tensor grids on a box and the discrete operators built on them.
//!
//! Unknowns live at cell centres. Fluxes live on faces. Homogeneous Dirichlet data is
//! imposed through odd reflection: the ghost value behind a boundary face is the
//! negative of the interior neighbour, so the face average vanishes on `∂Ω`.
//!
//! Boundary faces carry half the weight of interior faces in the face inner product.
//! With that choice `divergence` is the exact negative adjoint of `gradient`:
//! `⟨div F, v⟩ = −⟨F, grad v⟩` holds to round-off for every cell field `v`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("need at least 4 cells per axis, got {0}")]
    TooFewCells(usize),
    #[error("domain lengths and final time must be positive")]
    NonPositiveExtent,
    #[error("need at least one time step")]
    NoTimeSteps,
    #[error("grid mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    lengths: [f64; 2],
    nt: usize,
    t_final: f64,
}

impl Grid {
    pub fn new(
        dim: usize,
        cells: [usize; 2],
        lengths: [f64; 2],
        nt: usize,
        t_final: f64,
    ) -> Result<Grid, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::Dimension(dim));
        }
        for k in 0..dim {
            if cells[k] < 4 {
                return Err(GridError::TooFewCells(cells[k]));
            }
            if !(lengths[k] > 0.0) {
                return Err(GridError::NonPositiveExtent);
            }
        }
        if !(t_final > 0.0) {
            return Err(GridError::NonPositiveExtent);
        }
        if nt == 0 {
            return Err(GridError::NoTimeSteps);
        }
        let (cells, lengths) = if dim == 1 {
            ([cells[0], 1], [lengths[0], 1.0])
        } else {
            (cells, lengths)
        };
        Ok(Grid {
            dim,
            cells,
            lengths,
            nt,
            t_final,
        })
    }

    pub fn unit_1d(nx: usize, nt: usize, t_final: f64) -> Result<Grid, GridError> {
        Grid::new(1, [nx, 1], [1.0, 1.0], nt, t_final)
    }

    pub fn unit_2d(n: usize, nt: usize, t_final: f64) -> Result<Grid, GridError> {
        Grid::new(2, [n, n], [1.0, 1.0], nt, t_final)
    }

    /// Same box and final time with a different resolution.
    pub fn with_resolution(&self, cells: [usize; 2], nt: usize) -> Result<Grid, GridError> {
        Grid::new(self.dim, cells, self.lengths, nt, self.t_final)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn lengths(&self) -> [f64; 2] {
        self.lengths
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.tau()
    }

    /// Spacing per axis. In 1D the transverse spacing is 1 (unit-width slab).
    pub fn spacing(&self) -> [f64; 2] {
        [
            self.lengths[0] / self.cells[0] as f64,
            self.lengths[1] / self.cells[1] as f64,
        ]
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1]
    }

    pub fn domain_measure(&self) -> f64 {
        self.lengths[0] * self.lengths[1]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    /// Cell-centre coordinates. In 1D the second coordinate is 0.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let h = self.spacing();
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * h[1]
        } else {
            0.0
        };
        [(i as f64 + 0.5) * h[0], y]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.cells == other.cells && self.lengths == other.lengths
    }

    pub fn check_same_shape(&self, other: &Grid) -> Result<(), GridError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(GridError::Mismatch(format!(
                "{:?} vs {:?}",
                self.cells, other.cells
            )))
        }
    }

    pub fn x_face_count(&self) -> usize {
        (self.cells[0] + 1) * self.cells[1]
    }

    pub fn y_face_count(&self) -> usize {
        if self.dim == 2 {
            self.cells[0] * (self.cells[1] + 1)
        } else {
            0
        }
    }

    /// Difference across x-face `(i, j)`, `i ∈ 0..=nx`, between cells `i-1` and `i`.
    pub fn x_difference(&self, i: usize, j: usize) -> FaceDiff {
        let nx = self.cells[0];
        let inv_h = 1.0 / self.spacing()[0];
        if i == 0 {
            FaceDiff::one(self.index(0, j), 2.0 * inv_h)
        } else if i == nx {
            FaceDiff::one(self.index(nx - 1, j), -2.0 * inv_h)
        } else {
            FaceDiff::two(self.index(i - 1, j), -inv_h, self.index(i, j), inv_h)
        }
    }

    /// Difference across y-face `(i, j)`, `j ∈ 0..=ny`, between cells `j-1` and `j`.
    pub fn y_difference(&self, i: usize, j: usize) -> FaceDiff {
        let ny = self.cells[1];
        let inv_h = 1.0 / self.spacing()[1];
        if j == 0 {
            FaceDiff::one(self.index(i, 0), 2.0 * inv_h)
        } else if j == ny {
            FaceDiff::one(self.index(i, ny - 1), -2.0 * inv_h)
        } else {
            FaceDiff::two(self.index(i, j - 1), -inv_h, self.index(i, j), inv_h)
        }
    }

    /// The staggered gradient samples seen from one cell.
    ///
    /// Each cell pairs each of its x-faces with each of its y-faces (four pairs in 2D,
    /// the two x-faces in 1D). Integrals of gradient densities are evaluated as the
    /// cell volume times the mean over these pairs. For a quadratic density this
    /// reproduces the standard face-based energy exactly.
    pub fn quadrants(&self, idx: usize) -> Quadrants {
        let (i, j) = self.coords(idx);
        let left = self.x_difference(i, j);
        let right = self.x_difference(i + 1, j);
        if self.dim == 1 {
            Quadrants {
                count: 2,
                items: [
                    [left, FaceDiff::EMPTY],
                    [right, FaceDiff::EMPTY],
                    [FaceDiff::EMPTY; 2],
                    [FaceDiff::EMPTY; 2],
                ],
            }
        } else {
            let down = self.y_difference(i, j);
            let up = self.y_difference(i, j + 1);
            Quadrants {
                count: 4,
                items: [[left, down], [left, up], [right, down], [right, up]],
            }
        }
    }

    /// Weight of x-face `i` in the face inner product.
    pub fn x_face_weight(&self, i: usize) -> f64 {
        let w = self.cell_volume();
        if i == 0 || i == self.cells[0] {
            0.5 * w
        } else {
            w
        }
    }

    pub fn y_face_weight(&self, j: usize) -> f64 {
        let w = self.cell_volume();
        if j == 0 || j == self.cells[1] {
            0.5 * w
        } else {
            w
        }
    }

    /// Value of a cell field at possibly out-of-range indices, with odd reflection
    /// across each boundary that is crossed.
    pub fn ghost_value(&self, values: &[f64], i: isize, j: isize) -> f64 {
        let (nx, ny) = (self.cells[0] as isize, self.cells[1] as isize);
        let mut sign = 1.0;
        let mut ii = i;
        let mut jj = j;
        if ii < 0 {
            ii = -ii - 1;
            sign = -sign;
        } else if ii >= nx {
            ii = 2 * nx - ii - 1;
            sign = -sign;
        }
        if self.dim == 2 {
            if jj < 0 {
                jj = -jj - 1;
                sign = -sign;
            } else if jj >= ny {
                jj = 2 * ny - jj - 1;
                sign = -sign;
            }
        } else {
            jj = 0;
        }
        sign * values[self.index(ii as usize, jj as usize)]
    }
}

/// A face-normal difference: a linear combination of at most two cell values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceDiff {
    pub cells: [usize; 2],
    pub coefs: [f64; 2],
    pub len: usize,
}

impl FaceDiff {
    pub const EMPTY: FaceDiff = FaceDiff {
        cells: [0, 0],
        coefs: [0.0, 0.0],
        len: 0,
    };

    fn one(cell: usize, coef: f64) -> FaceDiff {
        FaceDiff {
            cells: [cell, 0],
            coefs: [coef, 0.0],
            len: 1,
        }
    }

    fn two(c0: usize, k0: f64, c1: usize, k1: f64) -> FaceDiff {
        FaceDiff {
            cells: [c0, c1],
            coefs: [k0, k1],
            len: 2,
        }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        match self.len {
            0 => 0.0,
            1 => self.coefs[0] * values[self.cells[0]],
            _ => self.coefs[0] * values[self.cells[0]] + self.coefs[1] * values[self.cells[1]],
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |k| (self.cells[k], self.coefs[k]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrants {
    pub count: usize,
    pub items: [[FaceDiff; 2]; 4],
}

impl Quadrants {
    pub fn iter(&self) -> impl Iterator<Item = &[FaceDiff; 2]> {
        self.items[..self.count].iter()
    }

    /// Gradient samples `(D_x u, D_y u)` for each pair.
    pub fn gradients(&self, values: &[f64]) -> ([[f64; 2]; 4], usize) {
        let mut out = [[0.0; 2]; 4];
        for (k, pair) in self.iter().enumerate() {
            out[k] = [pair[0].apply(values), pair[1].apply(values)];
        }
        (out, self.count)
    }
}

/// Values of a scalar field at the cell centres of a grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid, time: f64) -> GridFunction {
        GridFunction {
            grid,
            time,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, time: f64, values: Vec<f64>) -> Result<GridFunction, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Mismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(GridFunction { grid, time, values })
    }

    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let values = (0..grid.len())
            .map(|c| {
                let [x, y] = grid.center(c);
                f(x, y)
            })
            .collect();
        GridFunction { grid, time, values }
    }

    /// Volume-weighted inner product.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        GridFunction {
            grid: self.grid,
            time: self.time,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            time: self.time,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// A cell field at every time level `0..=nt` of its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub slices: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: Grid, slices: Vec<Vec<f64>>) -> Result<Trajectory, GridError> {
        if slices.len() != grid.nt() + 1 || slices.iter().any(|s| s.len() != grid.len()) {
            return Err(GridError::Mismatch(format!(
                "trajectory needs {} slices of {} values",
                grid.nt() + 1,
                grid.len()
            )));
        }
        Ok(Trajectory { grid, slices })
    }

    pub fn zeros(grid: Grid) -> Trajectory {
        Trajectory {
            grid,
            slices: vec![vec![0.0; grid.len()]; grid.nt() + 1],
        }
    }

    pub fn slice(&self, level: usize) -> GridFunction {
        GridFunction {
            grid: self.grid,
            time: self.grid.time(level),
            values: self.slices[level].clone(),
        }
    }

    pub fn last(&self) -> GridFunction {
        self.slice(self.slices.len() - 1)
    }

    pub fn check_same_shape(&self, other: &Trajectory) -> Result<(), GridError> {
        self.grid.check_same_shape(&other.grid)?;
        if self.slices.len() != other.slices.len() {
            return Err(GridError::Mismatch(format!(
                "{} vs {} time levels",
                self.slices.len(),
                other.slices.len()
            )));
        }
        Ok(())
    }
}

/// Normal components on x-faces (`(nx+1)·ny`) and y-faces (`nx·(ny+1)`, empty in 1D).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> FaceField {
        FaceField {
            x: vec![0.0; grid.x_face_count()],
            y: vec![0.0; grid.y_face_count()],
        }
    }
}

pub fn x_face_index(grid: &Grid, i: usize, j: usize) -> usize {
    j * (grid.nx() + 1) + i
}

pub fn y_face_index(grid: &Grid, i: usize, j: usize) -> usize {
    j * grid.nx() + i
}

/// Two-point face differences with the Dirichlet ghost convention.
pub fn gradient(u: &GridFunction) -> FaceField {
    let g = &u.grid;
    let mut out = FaceField::zeros(g);
    for j in 0..g.ny() {
        for i in 0..=g.nx() {
            out.x[x_face_index(g, i, j)] = g.x_difference(i, j).apply(&u.values);
        }
    }
    if g.dim() == 2 {
        for j in 0..=g.ny() {
            for i in 0..g.nx() {
                out.y[y_face_index(g, i, j)] = g.y_difference(i, j).apply(&u.values);
            }
        }
    }
    out
}

pub fn divergence(grid: &Grid, flux: &FaceField) -> GridFunction {
    let h = grid.spacing();
    let mut out = GridFunction::zeros(*grid, 0.0);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let mut d = (flux.x[x_face_index(grid, i + 1, j)] - flux.x[x_face_index(grid, i, j)]) / h[0];
            if grid.dim() == 2 {
                d += (flux.y[y_face_index(grid, i, j + 1)] - flux.y[y_face_index(grid, i, j)]) / h[1];
            }
            out.values[grid.index(i, j)] = d;
        }
    }
    out
}

/// Face inner product with half weights on boundary faces.
pub fn face_inner(grid: &Grid, a: &FaceField, b: &FaceField) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.ny() {
        for i in 0..=grid.nx() {
            let k = x_face_index(grid, i, j);
            s += grid.x_face_weight(i) * a.x[k] * b.x[k];
        }
    }
    if grid.dim() == 2 {
        for j in 0..=grid.ny() {
            for i in 0..grid.nx() {
                let k = y_face_index(grid, i, j);
                s += grid.y_face_weight(j) * a.y[k] * b.y[k];
            }
        }
    }
    s
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    /// `trace(H²) = Σ_ij H_ij²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy
    }

    pub fn as_array(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }
}

/// Centred second differences at cell centres, ghost values by odd reflection.
pub fn hessian(u: &GridFunction) -> Vec<SymMat2> {
    let g = &u.grid;
    let h = g.spacing();
    let v = &u.values;
    let at = |i: isize, j: isize| g.ghost_value(v, i, j);
    (0..g.len())
        .map(|c| {
            let (i, j) = g.coords(c);
            let (i, j) = (i as isize, j as isize);
            let u0 = at(i, j);
            let xx = (at(i + 1, j) - 2.0 * u0 + at(i - 1, j)) / (h[0] * h[0]);
            if g.dim() == 1 {
                return SymMat2 { xx, xy: 0.0, yy: 0.0 };
            }
            let yy = (at(i, j + 1) - 2.0 * u0 + at(i, j - 1)) / (h[1] * h[1]);
            let xy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1))
                / (4.0 * h[0] * h[1]);
            SymMat2 { xx, xy, yy }
        })
        .collect()
}

/// Whether a cell touches the boundary (used to exclude ghost-polluted stencils).
pub fn is_boundary_cell(grid: &Grid, idx: usize) -> bool {
    let (i, j) = grid.coords(idx);
    let on_x = i == 0 || i + 1 == grid.nx();
    let on_y = grid.dim() == 2 && (j == 0 || j + 1 == grid.ny());
    on_x || on_y
}
