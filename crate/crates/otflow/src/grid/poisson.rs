//! Momentum balance `v + grad p = y` on the unit square with no-penetration
//! walls, solved as a finite-volume Neumann problem.
//!
//! Cell-centered `y` is averaged onto interior faces, wall faces carry zero
//! flux, and the pressure solves a five-point homogeneous-Neumann Poisson
//! equation by conjugate gradients (matrix-free, zero-mean, warm-startable).
//! The projected face field is exactly flux-free through every wall; the
//! returned cell-centered `v` averages the two face velocities per direction.

use crate::error::{Error, Result};
use crate::grid::{Grid, Projection, ScalarField, VectorField};

#[derive(Debug, Clone, Copy)]
pub struct NeumannOpts {
    /// Stop once the cell divergence of the face field is below this in max
    /// norm.
    pub div_target: f64,
    /// Hard iteration cap; 0 picks `max(40 n, 2000)`.
    pub max_iter: usize,
}

impl Default for NeumannOpts {
    fn default() -> Self {
        NeumannOpts { div_target: 1e-9, max_iter: 0 }
    }
}

/// `out = -L p` for the five-point Neumann Laplacian (positive semidefinite).
fn apply_neg_lap(n: usize, p: &[f64], out: &mut [f64]) {
    for iy in 0..n {
        for ix in 0..n {
            let c = iy * n + ix;
            let mut acc = 0.0;
            if ix > 0 {
                acc += p[c] - p[c - 1];
            }
            if ix + 1 < n {
                acc += p[c] - p[c + 1];
            }
            if iy > 0 {
                acc += p[c] - p[c - n];
            }
            if iy + 1 < n {
                acc += p[c] - p[c + n];
            }
            out[c] = acc;
        }
    }
}

fn remove_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

/// Solve the wall-bounded momentum balance for `K = I`.
///
/// `warm_start` seeds the pressure iteration, which cuts the iteration count
/// sharply inside time loops. Fails with the achieved residual if the
/// divergence target cannot be met within the iteration cap.
pub fn neumann_poisson_project(
    y: &VectorField,
    opts: &NeumannOpts,
    warm_start: Option<&ScalarField>,
) -> Result<Projection> {
    let grid = y.grid();
    let n = match grid {
        Grid::Box(_) => grid.n(),
        Grid::Torus(_) => return Err(Error::GridKindMismatch { expected: "box" }),
    };
    if y.ncomp() != 2 {
        return Err(Error::shape(format!(
            "box projection needs 2 components, got {}",
            y.ncomp()
        )));
    }
    y.assert_finite("box projection input")?;
    let h = grid.h();
    let np = grid.points();
    let (y1, y2) = (y.comp(0), y.comp(1));

    // Interior-face velocities; walls carry none.
    let uface = |ix: usize, iy: usize| 0.5 * (y1[iy * n + ix] + y1[iy * n + ix + 1]);
    let vface = |ix: usize, iy: usize| 0.5 * (y2[iy * n + ix] + y2[(iy + 1) * n + ix]);

    // The face field is divergence-free when L p = h * (signed face flux
    // sum); with A = -L positive semidefinite the right-hand side flips sign.
    let mut b = vec![0.0; np];
    for iy in 0..n {
        for ix in 0..n {
            let mut acc = 0.0;
            if ix + 1 < n {
                acc += uface(ix, iy);
            }
            if ix > 0 {
                acc -= uface(ix - 1, iy);
            }
            if iy + 1 < n {
                acc += vface(ix, iy);
            }
            if iy > 0 {
                acc -= vface(ix, iy - 1);
            }
            b[iy * n + ix] = -h * acc;
        }
    }
    remove_mean(&mut b);

    let mut p = match warm_start {
        Some(p0) if p0.grid() == grid => p0.data().to_vec(),
        Some(_) => return Err(Error::shape("warm start pressure on a different grid")),
        None => vec![0.0; np],
    };
    remove_mean(&mut p);

    // The divergence target in terms of the raw residual of  -L p = -b.
    let r_target = opts.div_target * h * h;
    let max_iter = if opts.max_iter == 0 { (40 * n).max(2000) } else { opts.max_iter };

    let mut ap = vec![0.0; np];
    apply_neg_lap(n, &p, &mut ap);
    let mut r: Vec<f64> = (0..np).map(|c| b[c] - ap[c]).collect();
    let mut d = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut iterations = 0;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    while max_abs(&r) > r_target {
        if iterations >= max_iter {
            return Err(Error::CgStalled {
                iterations,
                residual: max_abs(&r) / (h * h),
                target: opts.div_target,
            });
        }
        apply_neg_lap(n, &d, &mut ap);
        let dad: f64 = d.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if dad <= 0.0 {
            return Err(Error::CgStalled {
                iterations,
                residual: max_abs(&r) / (h * h),
                target: opts.div_target,
            });
        }
        let alpha = rr / dad;
        for c in 0..np {
            p[c] += alpha * d[c];
            r[c] -= alpha * ap[c];
        }
        iterations += 1;
        if iterations % 64 == 0 {
            // Refresh the true residual to shed accumulated rounding.
            apply_neg_lap(n, &p, &mut ap);
            for c in 0..np {
                r[c] = b[c] - ap[c];
            }
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for c in 0..np {
            d[c] = r[c] + beta * d[c];
        }
    }
    remove_mean(&mut p);

    // Cell-centered v: average the two (projected) face velocities per
    // direction; wall faces contribute zero.
    let pg = &p;
    let ufp = |ix: usize, iy: usize| uface(ix, iy) - (pg[iy * n + ix + 1] - pg[iy * n + ix]) / h;
    let vfp = |ix: usize, iy: usize| vface(ix, iy) - (pg[(iy + 1) * n + ix] - pg[iy * n + ix]) / h;
    let mut v = VectorField::zeros(grid, 2);
    for iy in 0..n {
        for ix in 0..n {
            let c = iy * n + ix;
            let left = if ix > 0 { ufp(ix - 1, iy) } else { 0.0 };
            let right = if ix + 1 < n { ufp(ix, iy) } else { 0.0 };
            let south = if iy > 0 { vfp(ix, iy - 1) } else { 0.0 };
            let north = if iy + 1 < n { vfp(ix, iy) } else { 0.0 };
            v.comp_mut(0)[c] = 0.5 * (left + right);
            v.comp_mut(1)[c] = 0.5 * (south + north);
        }
    }

    let div_max = max_abs(&r) / (h * h);
    let p = ScalarField::from_data(grid, p)?;
    Ok(Projection { v, p, div_max, flux_max: 0.0, iterations })
}
