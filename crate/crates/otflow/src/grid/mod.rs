//! Grids and fields.
//!
//! Two domains are supported: the flat torus `[0,1)^d` for `d` in `{1, 2}`,
//! discretized by equispaced nodes, and the unit square with cell-centered
//! nodes. Fields store one `f64` per node per component, component-major,
//! row-major within a component (`idx = iy * n + ix`).
//!
//! [`project`] solves the momentum balance `K v + grad p = y`,
//! `div v = 0` for the given dissipation operator `K`, dispatching to the
//! spectral solvers on the torus and to a finite-volume Neumann solve on the
//! square.

mod advect;
mod poisson;
mod spectral;

pub use advect::{advect_scalar, advect_vector, cfl_number, check_cfl};
pub use poisson::{neumann_poisson_project, NeumannOpts};
pub use spectral::{
    divergence, grad_sq_integral, gradient, helmholtz_damp, laplacian, leray_project,
    mode_filter, stokes_project,
};

use crate::error::{Error, Result};

/// Dissipation operator `K` in the momentum balance `K v + grad p = y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipationKind {
    /// No dissipation; only admissible when inertia carries the balance.
    None,
    /// `K = I` (Darcy friction).
    Identity,
    /// `K = -Laplacian` (Stokes friction).
    NegLaplacian,
}

impl DissipationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DissipationKind::None),
            "identity" => Ok(DissipationKind::Identity),
            "neg_laplacian" => Ok(DissipationKind::NegLaplacian),
            _ => Err(Error::invalid(format!(
                "unknown dissipation kind {s:?} (expected none, identity or neg_laplacian)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DissipationKind::None => "none",
            DissipationKind::Identity => "identity",
            DissipationKind::NegLaplacian => "neg_laplacian",
        }
    }
}

/// Equispaced periodic grid on `[0,1)^d`, nodes at `i/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    /// `n` must be a power of two, at least 8, so every transform has a fast
    /// plan and coarse/fine grids nest.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(Error::invalid(format!("torus dimension must be 1 or 2, got {d}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "torus resolution must be a power of two >= 8, got {n}"
            )));
        }
        Ok(TorusGrid { d, n })
    }
}

/// Cell-centered grid on the unit square, nodes at `(i + 1/2)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxGrid {
    n: usize,
}

impl BoxGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("box resolution must be at least 2, got {n}")));
        }
        Ok(BoxGrid { n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    Torus(TorusGrid),
    Box(BoxGrid),
}

impl Grid {
    pub fn torus(d: usize, n: usize) -> Result<Grid> {
        Ok(Grid::Torus(TorusGrid::new(d, n)?))
    }

    pub fn unit_box(n: usize) -> Result<Grid> {
        Ok(Grid::Box(BoxGrid::new(n)?))
    }

    pub fn d(&self) -> usize {
        match self {
            Grid::Torus(g) => g.d,
            Grid::Box(_) => 2,
        }
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        match self {
            Grid::Torus(g) => g.n,
            Grid::Box(g) => g.n,
        }
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Total node count `n^d`.
    pub fn points(&self) -> usize {
        self.n().pow(self.d() as u32)
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Grid::Torus(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Grid::Torus(_) => "torus",
            Grid::Box(_) => "box",
        }
    }

    /// Coordinates of node `idx`; only the first `d()` entries are meaningful.
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let n = self.n();
        let h = self.h();
        let offset = match self {
            Grid::Torus(_) => 0.0,
            Grid::Box(_) => 0.5 * h,
        };
        match self.d() {
            1 => [idx as f64 * h + offset, 0.0],
            _ => {
                let ix = idx % n;
                let iy = idx / n;
                [ix as f64 * h + offset, iy as f64 * h + offset]
            }
        }
    }
}

/// One `f64` per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, data: vec![0.0; grid.points()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.d();
        let data = (0..grid.points())
            .map(|j| f(&grid.coord(j)[..d]))
            .collect();
        ScalarField { grid, data }
    }

    pub fn from_data(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.points() {
            return Err(Error::shape(format!(
                "scalar field needs {} values, got {}",
                grid.points(),
                data.len()
            )));
        }
        Ok(ScalarField { grid, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid-weighted L2 norm, `sqrt(h^d * sum f^2)`.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.h().powi(self.grid.d() as i32);
        (w * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn assert_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// `m` components per node, stored component-major.
///
/// `m` usually equals the grid dimension (velocities), but carried quantities
/// may have any `m >= 1` (a buoyancy scalar has `m = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    m: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid, m: usize) -> Self {
        VectorField { grid, m, data: vec![0.0; m * grid.points()] }
    }

    /// Build from a per-component closure `f(component, coords)`.
    pub fn from_fn(grid: Grid, m: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let np = grid.points();
        let d = grid.d();
        let mut data = Vec::with_capacity(m * np);
        for c in 0..m {
            for j in 0..np {
                data.push(f(c, &grid.coord(j)[..d]));
            }
        }
        VectorField { grid, m, data }
    }

    pub fn from_data(grid: Grid, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * grid.points() {
            return Err(Error::shape(format!(
                "vector field needs {} values, got {}",
                m * grid.points(),
                data.len()
            )));
        }
        Ok(VectorField { grid, m, data })
    }

    /// The identity map `y(x) = x` as a field.
    pub fn identity_map(grid: Grid) -> Self {
        VectorField::from_fn(grid, grid.d(), |c, x| x[c])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.m
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let np = self.grid.points();
        &self.data[c * np..(c + 1) * np]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let np = self.grid.points();
        &mut self.data[c * np..(c + 1) * np]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of all components at node `idx`; only the first `ncomp()` entries
    /// are meaningful.
    pub fn at(&self, idx: usize) -> [f64; 4] {
        let np = self.grid.points();
        let mut out = [0.0; 4];
        for c in 0..self.m {
            out[c] = self.data[c * np + idx];
        }
        out
    }

    /// Largest pointwise Euclidean norm over the grid.
    pub fn max_norm(&self) -> f64 {
        let np = self.grid.points();
        let mut worst = 0.0f64;
        for j in 0..np {
            let mut s = 0.0;
            for c in 0..self.m {
                let v = self.data[c * np + j];
                s += v * v;
            }
            worst = worst.max(s);
        }
        worst.sqrt()
    }

    /// Grid-weighted L2 norm over all components.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.h().powi(self.grid.d() as i32);
        (w * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Per-component mean.
    pub fn mean(&self) -> [f64; 4] {
        let np = self.grid.points();
        let mut out = [0.0; 4];
        for c in 0..self.m {
            out[c] = self.comp(c).iter().sum::<f64>() / np as f64;
        }
        out
    }

    /// Grid-weighted inner product `h^d * sum_j a_j . b_j`.
    pub fn dot(&self, other: &VectorField) -> Result<f64> {
        self.check_same_shape(other)?;
        let w = self.grid.h().powi(self.grid.d() as i32);
        Ok(w * self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum::<f64>())
    }

    pub fn check_same_shape(&self, other: &VectorField) -> Result<()> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::shape(format!(
                "{}^{} grid with {} components vs {}^{} grid with {} components",
                self.grid.kind_name(),
                self.grid.d(),
                self.m,
                other.grid.kind_name(),
                other.grid.d(),
                other.m
            )));
        }
        Ok(())
    }

    pub fn assert_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Result of a momentum-balance solve.
pub struct Projection {
    pub v: VectorField,
    pub p: ScalarField,
    /// Max-norm of the discrete divergence in the solver's own formulation.
    pub div_max: f64,
    /// Max-norm of the normal flux through the boundary; identically zero on
    /// the torus.
    pub flux_max: f64,
    /// Linear-solver iterations (zero for the spectral solvers).
    pub iterations: usize,
}

/// Solve `K v + grad p = y`, `div v = 0` for `(v, p)`.
///
/// On the torus this is exact per Fourier mode; on the square only
/// `K = Identity` is supported and the solve is a finite-volume Neumann
/// problem. `K = None` has no closure here and is rejected.
pub fn project(y: &VectorField, kind: DissipationKind) -> Result<Projection> {
    match (y.grid(), kind) {
        (_, DissipationKind::None) => Err(Error::invalid(
            "momentum balance with no dissipation does not determine v".to_string(),
        )),
        (Grid::Torus(_), DissipationKind::Identity) => {
            let (v, p) = leray_project(y)?;
            let div_max = divergence(&v)?.max_norm();
            Ok(Projection { v, p, div_max, flux_max: 0.0, iterations: 0 })
        }
        (Grid::Torus(_), DissipationKind::NegLaplacian) => {
            let (v, p) = stokes_project(y)?;
            let div_max = divergence(&v)?.max_norm();
            Ok(Projection { v, p, div_max, flux_max: 0.0, iterations: 0 })
        }
        (Grid::Box(_), DissipationKind::Identity) => {
            neumann_poisson_project(y, &NeumannOpts::default(), None)
        }
        (Grid::Box(_), DissipationKind::NegLaplacian) => Err(Error::invalid(
            "viscous dissipation is only implemented on the torus".to_string(),
        )),
    }
}

/// `integral of v . K v` for the given dissipation operator.
pub fn dissipation_rate(v: &VectorField, kind: DissipationKind) -> Result<f64> {
    match kind {
        DissipationKind::None => Err(Error::invalid(
            "dissipation rate undefined for kind none".to_string(),
        )),
        DissipationKind::Identity => Ok(v.l2_norm().powi(2)),
        DissipationKind::NegLaplacian => grad_sq_integral(v),
    }
}
