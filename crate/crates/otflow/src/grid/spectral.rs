//! Fourier-side operators on the torus.
//!
//! All first-derivative and projection operators drop modes that have a
//! component at the Nyquist frequency: on an `n`-point axis the `n/2` mode
//! carries no sign information, so its derivative is not representable.
//! Band-limited fields (everything the presets produce) are unaffected.
//! The Laplacian and the dissipation quadratic form keep the full symbol.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn require_torus(grid: Grid) -> Result<(usize, usize)> {
    match grid {
        Grid::Torus(_) => Ok((grid.d(), grid.n())),
        Grid::Box(_) => Err(Error::GridKindMismatch { expected: "torus" }),
    }
}

/// Unnormalized forward/inverse DFT along every axis, in place.
fn fft_nd(d: usize, n: usize, data: &mut [Complex<f64>], inverse: bool) {
    let fft = plan(n, inverse);
    if d == 1 {
        fft.process(data);
        return;
    }
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::default(); n];
    for ix in 0..n {
        for iy in 0..n {
            col[iy] = data[iy * n + ix];
        }
        fft.process(&mut col);
        for iy in 0..n {
            data[iy * n + ix] = col[iy];
        }
    }
}

fn forward(field: &[f64], d: usize, n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_nd(d, n, &mut buf, false);
    buf
}

fn inverse_real(mut buf: Vec<Complex<f64>>, d: usize, n: usize) -> Vec<f64> {
    fft_nd(d, n, &mut buf, true);
    let scale = 1.0 / buf.len() as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Signed integer frequency of flat index `j` along each axis.
fn freqs(j: usize, d: usize, n: usize) -> [f64; 2] {
    let signed = |i: usize| {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    match d {
        1 => [signed(j), 0.0],
        _ => [signed(j % n), signed(j / n)],
    }
}

fn touches_nyquist(j: usize, d: usize, n: usize) -> bool {
    let ny = n / 2;
    match d {
        1 => j == ny,
        _ => j % n == ny || j / n == ny,
    }
}

/// Spectral gradient of a scalar on the torus.
pub fn gradient(p: &ScalarField) -> Result<VectorField> {
    let (d, n) = require_torus(p.grid())?;
    let phat = forward(p.data(), d, n);
    let mut out = VectorField::zeros(p.grid(), d);
    for c in 0..d {
        let mut buf = vec![Complex::default(); phat.len()];
        for (j, &ph) in phat.iter().enumerate() {
            if touches_nyquist(j, d, n) {
                continue;
            }
            let k = freqs(j, d, n)[c];
            buf[j] = Complex::new(0.0, 2.0 * std::f64::consts::PI * k) * ph;
        }
        out.comp_mut(c).copy_from_slice(&inverse_real(buf, d, n));
    }
    Ok(out)
}

/// Spectral divergence of a `d`-component field on the torus.
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    let (d, n) = require_torus(v.grid())?;
    if v.ncomp() != d {
        return Err(Error::shape(format!(
            "divergence needs {} components, got {}",
            d,
            v.ncomp()
        )));
    }
    let mut acc = vec![Complex::default(); v.grid().points()];
    for c in 0..d {
        let vhat = forward(v.comp(c), d, n);
        for (j, &vh) in vhat.iter().enumerate() {
            if touches_nyquist(j, d, n) {
                continue;
            }
            let k = freqs(j, d, n)[c];
            acc[j] += Complex::new(0.0, 2.0 * std::f64::consts::PI * k) * vh;
        }
    }
    ScalarField::from_data(v.grid(), inverse_real(acc, d, n))
}

/// Spectral Laplacian (full symbol, including Nyquist modes).
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    let (d, n) = require_torus(f.grid())?;
    let mut fhat = forward(f.data(), d, n);
    for (j, fh) in fhat.iter_mut().enumerate() {
        let k = freqs(j, d, n);
        let k2 = k[0] * k[0] + k[1] * k[1];
        *fh *= -4.0 * std::f64::consts::PI * std::f64::consts::PI * k2;
    }
    ScalarField::from_data(f.grid(), inverse_real(fhat, d, n))
}

fn spectra(y: &VectorField, d: usize, n: usize) -> Vec<Vec<Complex<f64>>> {
    (0..y.ncomp()).map(|c| forward(y.comp(c), d, n)).collect()
}

/// Helmholtz decomposition `y = v + grad p` with `div v = 0`.
///
/// This is the momentum balance for `K = I`: the constant mode of `y` passes
/// straight into `v`, and `p` has zero mean.
pub fn leray_project(y: &VectorField) -> Result<(VectorField, ScalarField)> {
    let (d, n) = require_torus(y.grid())?;
    if y.ncomp() != d {
        return Err(Error::shape(format!(
            "projection needs {} components, got {}",
            d,
            y.ncomp()
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let yhat = spectra(y, d, n);
    let np = y.grid().points();
    let mut vhat: Vec<Vec<Complex<f64>>> = vec![vec![Complex::default(); np]; d];
    let mut phat = vec![Complex::default(); np];
    for j in 0..np {
        if touches_nyquist(j, d, n) {
            continue;
        }
        let k = freqs(j, d, n);
        let k2 = k[0] * k[0] + k[1] * k[1];
        if k2 == 0.0 {
            for c in 0..d {
                vhat[c][j] = yhat[c][j];
            }
            continue;
        }
        let mut div = Complex::default();
        for c in 0..d {
            div += Complex::new(0.0, two_pi * k[c]) * yhat[c][j];
        }
        let p = div / (-4.0 * std::f64::consts::PI * std::f64::consts::PI * k2);
        phat[j] = p;
        for c in 0..d {
            vhat[c][j] = yhat[c][j] - Complex::new(0.0, two_pi * k[c]) * p;
        }
    }
    let mut v = VectorField::zeros(y.grid(), d);
    for (c, buf) in vhat.into_iter().enumerate() {
        v.comp_mut(c).copy_from_slice(&inverse_real(buf, d, n));
    }
    let p = ScalarField::from_data(y.grid(), inverse_real(phat, d, n))?;
    Ok((v, p))
}

/// Momentum balance for `K = -Laplacian`: per mode
/// `vhat = (I - k k^T / |k|^2) yhat / (2 pi |k|)^2`, `vhat(0) = 0`.
///
/// The constant mode of `y` is absorbed by the pressure gradient's
/// incompatibility and dropped; the residual identity holds against
/// `y - mean(y)`.
pub fn stokes_project(y: &VectorField) -> Result<(VectorField, ScalarField)> {
    let (d, n) = require_torus(y.grid())?;
    if y.ncomp() != d {
        return Err(Error::shape(format!(
            "projection needs {} components, got {}",
            d,
            y.ncomp()
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let yhat = spectra(y, d, n);
    let np = y.grid().points();
    let mut vhat: Vec<Vec<Complex<f64>>> = vec![vec![Complex::default(); np]; d];
    let mut phat = vec![Complex::default(); np];
    for j in 0..np {
        if touches_nyquist(j, d, n) {
            continue;
        }
        let k = freqs(j, d, n);
        let k2 = k[0] * k[0] + k[1] * k[1];
        if k2 == 0.0 {
            continue;
        }
        let mut kdoty = Complex::default();
        for c in 0..d {
            kdoty += yhat[c][j] * k[c];
        }
        phat[j] = Complex::new(0.0, -1.0) * kdoty / (two_pi * k2);
        let lap = two_pi * two_pi * k2;
        for c in 0..d {
            vhat[c][j] = (yhat[c][j] - kdoty * k[c] / k2) / lap;
        }
    }
    let mut v = VectorField::zeros(y.grid(), d);
    for (c, buf) in vhat.into_iter().enumerate() {
        v.comp_mut(c).copy_from_slice(&inverse_real(buf, d, n));
    }
    let p = ScalarField::from_data(y.grid(), inverse_real(phat, d, n))?;
    Ok((v, p))
}

/// Solve `(I + c (-Laplacian)) u = y` per component on the torus.
///
/// The symbol `1 + c (2 pi |k|)^2` is positive for `c >= 0`, so every mode
/// divides cleanly and the constant mode passes through unchanged. This is
/// the implicit friction solve of the inertial stepper; treating the
/// Laplacian explicitly would amplify grid-scale noise by `c (pi n)^2` per
/// step.
pub fn helmholtz_damp(y: &VectorField, c: f64) -> Result<VectorField> {
    let (d, n) = require_torus(y.grid())?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("damping factor must be >= 0, got {c}")));
    }
    let mut out = VectorField::zeros(y.grid(), y.ncomp());
    for comp in 0..y.ncomp() {
        let mut buf = forward(y.comp(comp), d, n);
        for (j, bh) in buf.iter_mut().enumerate() {
            let k = freqs(j, d, n);
            let k2 = k[0] * k[0] + k[1] * k[1];
            let sym = 1.0 + c * 4.0 * std::f64::consts::PI * std::f64::consts::PI * k2;
            *bh /= sym;
        }
        out.comp_mut(comp).copy_from_slice(&inverse_real(buf, d, n));
    }
    Ok(out)
}

/// Apply a real multiplier `m(k2)` to every Fourier mode of every
/// component, where `k2` is the squared integer frequency. Used for exact
/// heat semigroups and mode-wise damping factors.
pub fn mode_filter(y: &VectorField, m: impl Fn(f64) -> f64) -> Result<VectorField> {
    let (d, n) = require_torus(y.grid())?;
    let mut out = VectorField::zeros(y.grid(), y.ncomp());
    for comp in 0..y.ncomp() {
        let mut buf = forward(y.comp(comp), d, n);
        for (j, bh) in buf.iter_mut().enumerate() {
            let k = freqs(j, d, n);
            *bh *= m(k[0] * k[0] + k[1] * k[1]);
        }
        out.comp_mut(comp).copy_from_slice(&inverse_real(buf, d, n));
    }
    Ok(out)
}

/// `integral of sum_c |grad v_c|^2` over the torus, via Parseval.
pub fn grad_sq_integral(v: &VectorField) -> Result<f64> {
    let (d, n) = require_torus(v.grid())?;
    let np = v.grid().points();
    let mut total = 0.0;
    for c in 0..v.ncomp() {
        let vhat = forward(v.comp(c), d, n);
        for (j, vh) in vhat.iter().enumerate() {
            let k = freqs(j, d, n);
            let k2 = k[0] * k[0] + k[1] * k[1];
            total += 4.0 * std::f64::consts::PI * std::f64::consts::PI * k2 * vh.norm_sqr();
        }
    }
    Ok(total / (np as f64 * np as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn smooth_multimode(grid: Grid) -> VectorField {
        // A fixed band-limited field with both solenoidal and gradient content.
        VectorField::from_fn(grid, 2, |c, x| match c {
            0 => {
                (2.0 * PI * x[1]).sin() + 0.3 * (2.0 * PI * x[0]).cos()
                    - 0.2 * (4.0 * PI * (x[0] + x[1])).sin()
            }
            _ => {
                0.7 * (4.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
                    + 0.1 * (2.0 * PI * x[1]).cos()
            }
        })
    }

    #[test]
    fn gradient_of_single_mode_is_exact() {
        let g = Grid::torus(2, 32).unwrap();
        let p = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let grad = gradient(&p).unwrap();
        for (j, &gx) in grad.comp(0).iter().enumerate() {
            let x = g.coord(j);
            assert_abs_diff_eq!(gx, 2.0 * PI * (2.0 * PI * x[0]).cos(), epsilon = 1e-11);
            assert_abs_diff_eq!(grad.comp(1)[j], 0.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn gradient_matches_centered_differences() {
        let g = Grid::torus(2, 64).unwrap();
        let f = |x: &[f64]| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos();
        let p = ScalarField::from_fn(g, f);
        let grad = gradient(&p).unwrap();
        let n = 64;
        let h = g.h();
        let mut worst = 0.0f64;
        for iy in 0..n {
            for ix in 0..n {
                let j = iy * n + ix;
                let fd =
                    (p.data()[iy * n + (ix + 1) % n] - p.data()[iy * n + (ix + n - 1) % n])
                        / (2.0 * h);
                worst = worst.max((grad.comp(0)[j] - fd).abs());
            }
        }
        // Centered differences are O(h^2); at n = 64 that is about 1e-2 here.
        assert!(worst < 0.05, "gradient vs centered differences: {worst}");
        assert!(worst > 1e-6, "difference suspiciously small: {worst}");
    }

    #[test]
    fn laplacian_of_single_mode_is_exact() {
        let g = Grid::torus(1, 32).unwrap();
        let p = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let lap = laplacian(&p).unwrap();
        for (j, &l) in lap.data().iter().enumerate() {
            let x = g.coord(j);
            assert_abs_diff_eq!(l, -4.0 * PI * PI * (2.0 * PI * x[0]).sin(), epsilon = 1e-10);
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let g = Grid::torus(2, 32).unwrap();
        let p = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin());
        let v = smooth_multimode(g);
        let grad = gradient(&p).unwrap();
        let div = divergence(&v).unwrap();
        let w = g.h() * g.h();
        let lhs: f64 = (0..g.points())
            .map(|j| w * (grad.comp(0)[j] * v.comp(0)[j] + grad.comp(1)[j] * v.comp(1)[j]))
            .sum();
        let rhs: f64 = (0..g.points()).map(|j| -w * p.data()[j] * div.data()[j]).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn leray_kills_pure_gradients() {
        let g = Grid::torus(2, 32).unwrap();
        let phi = ScalarField::from_fn(g, |x| {
            (2.0 * PI * x[0]).cos() + 0.5 * (4.0 * PI * x[1]).sin()
        });
        let y = gradient(&phi).unwrap();
        let (v, _) = leray_project(&y).unwrap();
        assert!(v.max_norm() < 1e-12, "gradient residual {}", v.max_norm());
    }

    #[test]
    fn leray_keeps_divergence_free_fields() {
        let g = Grid::torus(2, 32).unwrap();
        let y = VectorField::from_fn(g, 2, |c, x| match c {
            0 => (2.0 * PI * x[1]).sin(),
            _ => (4.0 * PI * x[0]).cos(),
        });
        let (v, p) = leray_project(&y).unwrap();
        for j in 0..g.points() {
            assert_abs_diff_eq!(v.comp(0)[j], y.comp(0)[j], epsilon = 1e-12);
            assert_abs_diff_eq!(v.comp(1)[j], y.comp(1)[j], epsilon = 1e-12);
        }
        assert!(p.max_norm() < 1e-12);
    }

    #[test]
    fn leray_decomposition_is_exact_and_orthogonal() {
        let g = Grid::torus(2, 64).unwrap();
        let y = smooth_multimode(g);
        let (v, p) = leray_project(&y).unwrap();
        let grad_p = gradient(&p).unwrap();
        for c in 0..2 {
            for j in 0..g.points() {
                assert_abs_diff_eq!(
                    y.comp(c)[j],
                    v.comp(c)[j] + grad_p.comp(c)[j],
                    epsilon = 1e-12
                );
            }
        }
        assert!(divergence(&v).unwrap().max_norm() < 1e-12);
        // v is orthogonal to every discrete gradient.
        let q = ScalarField::from_fn(g, |x| (6.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let grad_q = gradient(&q).unwrap();
        assert_abs_diff_eq!(v.dot(&grad_q).unwrap(), 0.0, epsilon = 1e-10);
        // Idempotence.
        let (v2, _) = leray_project(&v).unwrap();
        for c in 0..2 {
            for j in 0..g.points() {
                assert_abs_diff_eq!(v.comp(c)[j], v2.comp(c)[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn leray_passes_the_mean_through() {
        let g = Grid::torus(2, 16).unwrap();
        let y = VectorField::from_fn(g, 2, |c, _| if c == 0 { 0.3 } else { -0.1 });
        let (v, p) = leray_project(&y).unwrap();
        assert!(p.max_norm() < 1e-13);
        for j in 0..g.points() {
            assert_abs_diff_eq!(v.comp(0)[j], 0.3, epsilon = 1e-13);
            assert_abs_diff_eq!(v.comp(1)[j], -0.1, epsilon = 1e-13);
        }
    }

    #[test]
    fn stokes_eigenfunction_scaling() {
        let g = Grid::torus(2, 32).unwrap();
        let y = VectorField::from_fn(g, 2, |c, x| if c == 0 { (2.0 * PI * x[1]).sin() } else { 0.0 });
        let (v, p) = stokes_project(&y).unwrap();
        for j in 0..g.points() {
            assert_abs_diff_eq!(v.comp(0)[j], y.comp(0)[j] / (4.0 * PI * PI), epsilon = 1e-12);
            assert_abs_diff_eq!(v.comp(1)[j], 0.0, epsilon = 1e-12);
        }
        assert!(p.max_norm() < 1e-12);
    }

    #[test]
    fn stokes_residual_vanishes() {
        let g = Grid::torus(2, 64).unwrap();
        let y = smooth_multimode(g);
        let (v, p) = stokes_project(&y).unwrap();
        assert!(divergence(&v).unwrap().max_norm() < 1e-12);
        let grad_p = gradient(&p).unwrap();
        let ybar = y.mean();
        let mut worst = 0.0f64;
        for c in 0..2 {
            let lap_vc = laplacian(&ScalarField::from_data(g, v.comp(c).to_vec()).unwrap()).unwrap();
            for j in 0..g.points() {
                let resid = -lap_vc.data()[j] + grad_p.comp(c)[j] - (y.comp(c)[j] - ybar[c]);
                worst = worst.max(resid.abs());
            }
        }
        assert!(worst < 1e-10, "momentum residual {worst}");
    }

    #[test]
    fn helmholtz_damp_rescales_modes_and_passes_constants() {
        let g = Grid::torus(2, 32).unwrap();
        let c = 0.07;
        let y = VectorField::from_fn(g, 2, |comp, x| {
            if comp == 0 { (2.0 * PI * x[1]).sin() } else { 0.25 }
        });
        let u = helmholtz_damp(&y, c).unwrap();
        let factor = 1.0 + c * 4.0 * PI * PI;
        for j in 0..g.points() {
            assert_abs_diff_eq!(u.comp(0)[j], y.comp(0)[j] / factor, epsilon = 1e-12);
            assert_abs_diff_eq!(u.comp(1)[j], 0.25, epsilon = 1e-13);
        }
        // c = 0 is the identity.
        let id = helmholtz_damp(&y, 0.0).unwrap();
        for j in 0..g.points() {
            assert_abs_diff_eq!(id.comp(0)[j], y.comp(0)[j], epsilon = 1e-13);
        }
        assert!(helmholtz_damp(&y, -1.0).is_err());
    }

    #[test]
    fn grad_sq_integral_of_single_mode() {
        let g = Grid::torus(2, 32).unwrap();
        let v = VectorField::from_fn(g, 2, |c, x| if c == 0 { (2.0 * PI * x[0]).sin() } else { 0.0 });
        // integral |grad sin(2 pi x)|^2 = (2 pi)^2 / 2.
        assert_abs_diff_eq!(grad_sq_integral(&v).unwrap(), 2.0 * PI * PI, epsilon = 1e-10);
    }

    #[test]
    fn torus_ops_reject_box_fields() {
        let b = Grid::unit_box(8).unwrap();
        let f = ScalarField::zeros(b);
        assert!(gradient(&f).is_err());
        let v = VectorField::zeros(b, 2);
        assert!(leray_project(&v).is_err());
    }
}
