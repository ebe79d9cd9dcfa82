//! Semi-Lagrangian transport.
//!
//! Departure points are traced with one midpoint step of the characteristic
//! ODE and values are picked up by bilinear interpolation, which keeps the
//! scheme max-norm non-expansive. On the torus coordinates wrap; on the
//! square they clamp to the strip of cell centers, which respects the
//! no-penetration walls of the projected velocities used here.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

/// `max |v_c| dt / h`, the advective CFL number of a step.
pub fn cfl_number(v: &VectorField, dt: f64) -> f64 {
    let vmax = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    vmax * dt.abs() / v.grid().h()
}

pub fn check_cfl(v: &VectorField, dt: f64) -> Result<()> {
    let cfl = cfl_number(v, dt);
    if cfl > 1.0 {
        return Err(Error::CflExceeded { cfl });
    }
    if cfl > 0.5 {
        log::warn!("advection CFL {cfl:.3} above 0.5; accuracy degrades");
    }
    Ok(())
}

/// Interpolate one component at physical coordinates `x`.
fn sample(comp: &[f64], grid: Grid, x: [f64; 2]) -> f64 {
    let n = grid.n();
    let h = grid.h();
    let nf = n as f64;
    match grid {
        Grid::Torus(_) => {
            if grid.d() == 1 {
                let u = (x[0] / h).rem_euclid(nf);
                let i0 = u.floor() as usize % n;
                let t = u - u.floor();
                let a = comp[i0];
                let b = comp[(i0 + 1) % n];
                a + t * (b - a)
            } else {
                let u = (x[0] / h).rem_euclid(nf);
                let w = (x[1] / h).rem_euclid(nf);
                let i0 = u.floor() as usize % n;
                let j0 = w.floor() as usize % n;
                let tx = u - u.floor();
                let ty = w - w.floor();
                let i1 = (i0 + 1) % n;
                let j1 = (j0 + 1) % n;
                let f00 = comp[j0 * n + i0];
                let f10 = comp[j0 * n + i1];
                let f01 = comp[j1 * n + i0];
                let f11 = comp[j1 * n + i1];
                let a = f00 + tx * (f10 - f00);
                let b = f01 + tx * (f11 - f01);
                a + ty * (b - a)
            }
        }
        Grid::Box(_) => {
            let clamp = |c: f64| c.clamp(0.5 * h, 1.0 - 0.5 * h);
            let u = (clamp(x[0]) - 0.5 * h) / h;
            let w = (clamp(x[1]) - 0.5 * h) / h;
            let i0 = (u.floor() as usize).min(n - 2);
            let j0 = (w.floor() as usize).min(n - 2);
            let tx = (u - i0 as f64).clamp(0.0, 1.0);
            let ty = (w - j0 as f64).clamp(0.0, 1.0);
            let f00 = comp[j0 * n + i0];
            let f10 = comp[j0 * n + i0 + 1];
            let f01 = comp[(j0 + 1) * n + i0];
            let f11 = comp[(j0 + 1) * n + i0 + 1];
            let a = f00 + tx * (f10 - f00);
            let b = f01 + tx * (f11 - f01);
            a + ty * (b - a)
        }
    }
}

/// Midpoint-rule departure points for every node.
fn departure_points(v: &VectorField, dt: f64) -> Vec<[f64; 2]> {
    let grid = v.grid();
    let d = grid.d();
    let np = grid.points();
    let mut out = Vec::with_capacity(np);
    for j in 0..np {
        let x = grid.coord(j);
        let mut mid = x;
        for c in 0..d {
            mid[c] = x[c] - 0.5 * dt * v.comp(c)[j];
        }
        let mut dep = x;
        for c in 0..d {
            dep[c] = x[c] - dt * sample(v.comp(c), grid, mid);
        }
        out.push(dep);
    }
    out
}

pub fn advect_scalar(f: &ScalarField, v: &VectorField, dt: f64) -> Result<ScalarField> {
    if f.grid() != v.grid() {
        return Err(Error::shape("advected field and velocity on different grids"));
    }
    if v.ncomp() != v.grid().d() {
        return Err(Error::shape(format!(
            "velocity needs {} components, got {}",
            v.grid().d(),
            v.ncomp()
        )));
    }
    check_cfl(v, dt)?;
    let deps = departure_points(v, dt);
    let data = deps.iter().map(|&x| sample(f.data(), f.grid(), x)).collect();
    ScalarField::from_data(f.grid(), data)
}

/// Advect every component of `f` with the same velocity, so carried
/// quantities of any rank share one departure-point computation.
pub fn advect_vector(f: &VectorField, v: &VectorField, dt: f64) -> Result<VectorField> {
    if f.grid() != v.grid() {
        return Err(Error::shape("advected field and velocity on different grids"));
    }
    if v.ncomp() != v.grid().d() {
        return Err(Error::shape(format!(
            "velocity needs {} components, got {}",
            v.grid().d(),
            v.ncomp()
        )));
    }
    check_cfl(v, dt)?;
    let deps = departure_points(v, dt);
    let mut out = VectorField::zeros(f.grid(), f.ncomp());
    for c in 0..f.ncomp() {
        let src = f.comp(c);
        let dst = out.comp_mut(c);
        for (j, &x) in deps.iter().enumerate() {
            dst[j] = sample(src, f.grid(), x);
        }
    }
    Ok(out)
}
