//! Convex-rearrangement time stepping.
//!
//! The scheme advances a value cloud by explicit Euler on a forcing
//! `G(a, y)` and immediately rearranges, `Y_{n+1} = [Y_n + h G(a, Y_n)]*`,
//! so every iterate has a convex potential. Because rearranging only permutes
//! the values, the L2 norm obeys `|Y_{n+1}| <= hc + (1 + hc)|Y_n|` exactly,
//! with `c` the growth constant of the forcing, and the weak equation
//! `d/dt int f(Y) = int grad f(Y) . G(a, Y)` holds up to `O(h)` for smooth
//! test functions. The trajectory is understood as linear in `t` between
//! steps; [`lerp_values`] samples it (the monotone class is a convex cone,
//! so interpolants stay inside).

use crate::error::{Error, Result};
use crate::rearrange::{
    convex_rearrange_with, cyclical_monotonicity_check, AssignSolver, LagrangianCloud,
    Permutation,
};

/// Right-hand side `G(a, y)` of the value update.
///
/// All presets satisfy `|G(a, y)| <= c (1 + |y|)` on the unit box with
/// `c = kappa (1 + sqrt(d))`; custom forcings are sampled against the same
/// bound at construction.
#[derive(Debug, Clone, Copy)]
pub enum GhbForcing {
    Zero,
    /// `G = kappa (a - y)`: values drift onto their atoms.
    Contract { kappa: f64 },
    /// `G = kappa (y - a)`: values flee their atoms.
    Expand { kappa: f64 },
    /// `G = kappa J (y - a)` with `J` the quarter turn; plane only.
    Rotate { kappa: f64 },
    Custom {
        kappa: f64,
        g: fn(&[f64], &[f64], &mut [f64]),
    },
}

impl GhbForcing {
    pub fn parse(name: &str, kappa: f64, d: usize) -> Result<Self> {
        if name != "zero" && !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!(
                "forcing rate must be positive, got {kappa}"
            )));
        }
        match name {
            "zero" => Ok(GhbForcing::Zero),
            "contract" => Ok(GhbForcing::Contract { kappa }),
            "expand" => Ok(GhbForcing::Expand { kappa }),
            "rotate" => {
                if d != 2 {
                    return Err(Error::invalid(format!(
                        "rotate forcing needs d = 2, got d = {d}"
                    )));
                }
                Ok(GhbForcing::Rotate { kappa })
            }
            other => Err(Error::invalid(format!(
                "unknown forcing '{other}' (expected zero|contract|expand|rotate)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GhbForcing::Zero => "zero",
            GhbForcing::Contract { .. } => "contract",
            GhbForcing::Expand { .. } => "expand",
            GhbForcing::Rotate { .. } => "rotate",
            GhbForcing::Custom { .. } => "custom",
        }
    }

    pub fn eval(&self, a: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            GhbForcing::Zero => out.fill(0.0),
            GhbForcing::Contract { kappa } => {
                for c in 0..y.len() {
                    out[c] = kappa * (a[c] - y[c]);
                }
            }
            GhbForcing::Expand { kappa } => {
                for c in 0..y.len() {
                    out[c] = kappa * (y[c] - a[c]);
                }
            }
            GhbForcing::Rotate { kappa } => {
                out[0] = -kappa * (y[1] - a[1]);
                out[1] = kappa * (y[0] - a[0]);
            }
            GhbForcing::Custom { g, .. } => g(a, y, out),
        }
    }

    /// `c` with `|G(a, y)| <= c (1 + |y|)` for atoms in the unit box.
    pub fn growth_constant(&self, d: usize) -> f64 {
        let kappa = match self {
            GhbForcing::Zero => return 0.0,
            GhbForcing::Contract { kappa }
            | GhbForcing::Expand { kappa }
            | GhbForcing::Rotate { kappa }
            | GhbForcing::Custom { kappa, .. } => *kappa,
        };
        kappa * (1.0 + (d as f64).sqrt())
    }

    /// Worst sampled `|G| - c (1 + |y|)` over atom/value pairs reaching out
    /// to `reach` in value space; at most rounding above zero for a forcing
    /// that honours its growth constant.
    pub fn growth_margin(&self, cloud: &LagrangianCloud, reach: f64, seed: u64) -> f64 {
        let d = cloud.d();
        let c = self.growth_constant(d);
        let mut rng = crate::presets::Lcg64::new(seed);
        let mut g = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..256 {
            let i = (rng.next_u64() as usize) % cloud.n_atoms();
            for yc in y.iter_mut() {
                *yc = reach * rng.next_symmetric();
            }
            self.eval(cloud.atom(i), &y, &mut g);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(gn - c * (1.0 + yn));
        }
        worst
    }
}

/// A cloud kept cyclically monotone by rearranging after every Euler update.
///
/// `pre` and `sigma` record the last update before its rearrangement, so the
/// pushforward certificate can tie each pre-image value to its matched atom.
#[derive(Debug, Clone)]
pub struct CrState {
    pub cloud: LagrangianCloud,
    pub forcing: GhbForcing,
    pub h: f64,
    pub t: f64,
    pub step_count: usize,
    pub solver: AssignSolver,
    pre: LagrangianCloud,
    sigma: Permutation,
}

/// Per-step diagnostics; `bound_margin` is `hc + (1 + hc)|Y_n| - |Y_{n+1}|`.
#[derive(Debug, Clone, Copy)]
pub struct CrStepReport {
    pub l2_norm: f64,
    pub bound_margin: f64,
    pub monotonicity_worst: f64,
}

pub const MONO_TOL: f64 = 1e-10;
const MONO_TRIALS: usize = 64;
const MONO_MAX_LEN: usize = 8;

impl CrState {
    /// Rearranges the initial cloud, so the state starts inside the monotone
    /// class. Custom forcings are sampled against their growth bound.
    pub fn new(
        cloud: LagrangianCloud,
        forcing: GhbForcing,
        h: f64,
        solver: AssignSolver,
    ) -> Result<Self> {
        cloud.require_transport()?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {h}")));
        }
        if matches!(forcing, GhbForcing::Rotate { .. }) && cloud.d() != 2 {
            return Err(Error::invalid("rotate forcing needs d = 2".to_string()));
        }
        if matches!(forcing, GhbForcing::Custom { .. }) {
            let reach = 2.0 * (1.0 + cloud.value_max());
            let margin = forcing.growth_margin(&cloud, reach, 0x9e37);
            if margin > 1e-9 {
                return Err(Error::InvariantViolated {
                    what: "forcing growth |G| <= c(1+|y|)".to_string(),
                    value: margin,
                    limit: 0.0,
                });
            }
        }
        let (rearranged, assignment) = convex_rearrange_with(&cloud, &solver)?;
        let state = CrState {
            cloud: rearranged,
            forcing,
            h,
            t: 0.0,
            step_count: 0,
            solver,
            pre: cloud,
            sigma: assignment.sigma,
        };
        state.check_monotone(0)?;
        Ok(state)
    }

    fn check_monotone(&self, step: usize) -> Result<f64> {
        let report = cyclical_monotonicity_check(
            &self.cloud,
            MONO_TRIALS,
            MONO_MAX_LEN,
            0x5bd1 ^ step as u64,
        )?;
        if report.worst_violation > MONO_TOL {
            return Err(Error::InvariantViolated {
                what: format!("cyclic monotonicity after step {step}"),
                value: report.worst_violation,
                limit: MONO_TOL,
            });
        }
        Ok(report.worst_violation)
    }
}

/// `Y_{n+1} = [Y_n + h G(a, Y_n)]*`, with the L2 bound and the monotonicity
/// certificate checked on the way out.
pub fn cr_step(state: &mut CrState) -> Result<CrStepReport> {
    let n = state.cloud.n_atoms();
    let d = state.cloud.d();
    let h = state.h;
    let norm_before = state.cloud.value_l2();
    let mut vals = state.cloud.values().to_vec();
    let mut g = vec![0.0; d];
    for i in 0..n {
        state.forcing.eval(state.cloud.atom(i), state.cloud.value(i), &mut g);
        for c in 0..d {
            vals[i * d + c] += h * g[c];
        }
    }
    let euler = state.cloud.with_values(vals)?;
    let (rearranged, assignment) = convex_rearrange_with(&euler, &state.solver)?;
    let l2_norm = rearranged.value_l2();
    let c = state.forcing.growth_constant(d);
    let limit = h * c + (1.0 + h * c) * norm_before;
    if l2_norm > limit * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::InvariantViolated {
            what: format!("L2 growth bound at t={}", state.t),
            value: l2_norm,
            limit,
        });
    }
    state.cloud = rearranged;
    state.pre = euler;
    state.sigma = assignment.sigma;
    state.t += h;
    state.step_count += 1;
    let monotonicity_worst = state.check_monotone(state.step_count)?;
    Ok(CrStepReport {
        l2_norm,
        bound_margin: limit - l2_norm,
        monotonicity_worst,
    })
}

/// Values `(1 - theta) a + theta b`: the trajectory between two steps.
pub fn lerp_values(
    a: &LagrangianCloud,
    b: &LagrangianCloud,
    theta: f64,
) -> Result<LagrangianCloud> {
    if a.values().len() != b.values().len() || a.d() != b.d() {
        return Err(Error::shape("interpolating clouds of different shapes".to_string()));
    }
    let vals = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (1.0 - theta) * x + theta * y)
        .collect();
    a.with_values(vals)
}

/// Tensor bump `prod_c exp(1 - 1/(1 - u_c^2))`, `u_c = (y_c - center_c) /
/// radius_c`, cut off at `|u| = 1`.
#[derive(Debug, Clone)]
pub struct TestFn {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

fn bump_deriv(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - u * u;
        bump(u) * (-2.0 * u / (s * s))
    }
}

impl TestFn {
    pub fn eval(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.center)
            .zip(&self.radius)
            .map(|((v, c), r)| bump((v - c) / r))
            .product()
    }

    pub fn grad(&self, y: &[f64], out: &mut [f64]) {
        let d = y.len();
        for c in 0..d {
            let mut acc = 1.0;
            for k in 0..d {
                let u = (y[k] - self.center[k]) / self.radius[k];
                acc *= if k == c {
                    bump_deriv(u) / self.radius[k]
                } else {
                    bump(u)
                };
            }
            out[c] = acc;
        }
    }
}

/// Six bumps of varied centers and widths over the unit box and its
/// surroundings.
pub fn standard_battery(d: usize) -> Vec<TestFn> {
    let specs: [(f64, f64, f64); 6] = [
        (0.5, 0.5, 0.8),
        (0.3, 0.35, 0.5),
        (0.7, 0.4, 0.55),
        (0.25, 0.75, 0.45),
        (0.5, 0.5, 1.6),
        (0.8, 0.7, 0.6),
    ];
    specs
        .iter()
        .map(|&(c1, c2, r)| TestFn {
            center: if d == 1 { vec![c1] } else { vec![c1, c2] },
            radius: vec![r; d],
        })
        .collect()
}

/// `|(int f(after) - int f(before)) / (2h) - int grad f(center) . G|` per
/// test function: the centered-in-time residual of the weak equation.
pub fn weak_equation_residual(
    before: &LagrangianCloud,
    center: &LagrangianCloud,
    after: &LagrangianCloud,
    forcing: &GhbForcing,
    h: f64,
    battery: &[TestFn],
) -> Result<Vec<f64>> {
    let n = center.n_atoms();
    let d = center.d();
    if before.values().len() != center.values().len()
        || after.values().len() != center.values().len()
    {
        return Err(Error::shape("residual needs three equal clouds".to_string()));
    }
    let mut g = vec![0.0; d];
    let mut gradf = vec![0.0; d];
    let mut out = Vec::with_capacity(battery.len());
    for f in battery {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..n {
            lhs += f.eval(after.value(i)) - f.eval(before.value(i));
            forcing.eval(center.atom(i), center.value(i), &mut g);
            f.grad(center.value(i), &mut gradf);
            rhs += gradf.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        out.push((lhs / (2.0 * h) - rhs).abs() / n as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct CrRunConfig {
    pub t_end: f64,
    /// Dump stride in steps; 0 disables snapshots except the final one.
    pub snapshot_stride: usize,
}

impl Default for CrRunConfig {
    fn default() -> Self {
        CrRunConfig { t_end: 1.0, snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CrRow {
    pub t: f64,
    pub l2_norm: f64,
    pub bound_margin: f64,
    pub monotonicity_worst: f64,
    pub weak_residual_max: f64,
}

pub const CR_CSV_HEADER: &str = "t,l2_norm,bound_margin,monotonicity_worst,weak_residual_max";

impl CrRow {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.t,
            self.l2_norm,
            self.bound_margin,
            self.monotonicity_worst,
            self.weak_residual_max,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CrSeries {
    pub rows: Vec<CrRow>,
    pub worst_bound_margin: f64,
    pub worst_monotonicity: f64,
    pub worst_weak_residual: f64,
}

/// Run to `t_end`, one row per step. The weak residual on each row is
/// centered at that step; the last row falls back to the one-sided
/// difference. `snap` receives the state at every stride and at the end.
pub fn cr_run(
    state: &mut CrState,
    cfg: &CrRunConfig,
    battery: &[TestFn],
    mut snap: impl FnMut(usize, &CrState) -> Result<()>,
) -> Result<CrSeries> {
    if !(cfg.t_end > 0.0) {
        return Err(Error::invalid(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    let h = state.h;
    let steps = (cfg.t_end / h).round().max(1.0) as usize;
    let mut clouds = Vec::with_capacity(steps + 1);
    clouds.push(state.cloud.clone());
    let mut reports = Vec::with_capacity(steps);
    if cfg.snapshot_stride > 0 {
        snap(0, state)?;
    }
    for k in 1..=steps {
        reports.push(cr_step(state)?);
        clouds.push(state.cloud.clone());
        if (cfg.snapshot_stride > 0 && k % cfg.snapshot_stride == 0) || k == steps {
            snap(k, state)?;
        }
    }
    let mut rows = Vec::with_capacity(steps);
    let mut worst_bound = f64::INFINITY;
    let mut worst_mono = 0.0f64;
    let mut worst_weak = 0.0f64;
    for k in 1..=steps {
        let residuals = if k < steps {
            weak_equation_residual(
                &clouds[k - 1],
                &clouds[k],
                &clouds[k + 1],
                &state.forcing,
                h,
                battery,
            )?
        } else {
            // One-sided: difference over [t-h, t] against the quadrature at
            // the left end, which is the forward form of the same identity.
            weak_equation_residual(
                &clouds[k - 1],
                &clouds[k - 1],
                &clouds[k],
                &state.forcing,
                h / 2.0,
                battery,
            )?
        };
        let weak_residual_max = residuals.iter().fold(0.0f64, |a, &b| a.max(b));
        let rep = &reports[k - 1];
        worst_bound = worst_bound.min(rep.bound_margin);
        worst_mono = worst_mono.max(rep.monotonicity_worst);
        worst_weak = worst_weak.max(weak_residual_max);
        rows.push(CrRow {
            t: k as f64 * h,
            l2_norm: rep.l2_norm,
            bound_margin: rep.bound_margin,
            monotonicity_worst: rep.monotonicity_worst,
            weak_residual_max,
        });
    }
    Ok(CrSeries {
        rows,
        worst_bound_margin: worst_bound,
        worst_monotonicity: worst_mono,
        worst_weak_residual: worst_weak,
    })
}

/// Histogram of the cloud's values over their bounding box; mass one,
/// optionally smoothed by a truncated Gaussian of the recorded bandwidth (in
/// bins).
#[derive(Debug, Clone)]
pub struct DensityField {
    pub bins: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Row-major `bins^d` cell masses.
    pub mass: Vec<f64>,
    pub bandwidth: Option<f64>,
}

pub fn density_estimate(
    cloud: &LagrangianCloud,
    bins: usize,
    bandwidth: Option<f64>,
) -> Result<DensityField> {
    cloud.require_transport()?;
    if bins == 0 {
        return Err(Error::invalid("density needs at least one bin".to_string()));
    }
    let n = cloud.n_atoms();
    let d = cloud.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (c, v) in cloud.value(i).iter().enumerate() {
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
    }
    for c in 0..d {
        if hi[c] - lo[c] < 1e-12 {
            lo[c] -= 0.5;
            hi[c] += 0.5;
        }
    }
    let cells = bins.pow(d as u32);
    let mut mass = vec![0.0; cells];
    let w = 1.0 / n as f64;
    for i in 0..n {
        let mut idx = 0;
        for c in (0..d).rev() {
            let v = cloud.value(i)[c];
            let rel = (v - lo[c]) / (hi[c] - lo[c]);
            let b = ((rel * bins as f64) as usize).min(bins - 1);
            idx = idx * bins + b;
        }
        mass[idx] += w;
    }
    if let Some(bw) = bandwidth {
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bw}")));
        }
        let reach = (3.0 * bw).ceil() as isize;
        let kernel: Vec<f64> = (-reach..=reach)
            .map(|k| (-0.5 * (k as f64 / bw).powi(2)).exp())
            .collect();
        let ksum: f64 = kernel.iter().sum();
        let mut smoothed = mass.clone();
        for axis in 0..d {
            let stride = bins.pow(axis as u32);
            let mut next = vec![0.0; cells];
            for (idx, acc) in next.iter_mut().enumerate() {
                let b = (idx / stride) % bins;
                for (ki, kv) in kernel.iter().enumerate() {
                    let off = ki as isize - reach;
                    let bb = b as isize + off;
                    if bb >= 0 && (bb as usize) < bins {
                        let src = idx.wrapping_add_signed(off * stride as isize);
                        *acc += smoothed[src] * kv / ksum;
                    }
                }
            }
            smoothed = next;
        }
        let total: f64 = smoothed.iter().sum();
        for m in smoothed.iter_mut() {
            *m /= total;
        }
        mass = smoothed;
    }
    Ok(DensityField { bins, lo, hi, mass, bandwidth })
}

/// Pushforward and convexity certificate of the last rearrangement.
#[derive(Debug, Clone, Copy)]
pub struct MaReport {
    /// Worst over the battery of `|avg f(matched atoms) - avg f(atoms)|`;
    /// the matched atoms traverse every atom once, so this is summation
    /// noise only.
    pub pushforward_residual: f64,
    pub monotonicity_worst: f64,
    /// Repeated values make the assignment non-unique.
    pub degenerate: bool,
}

/// Checks that the stored assignment still produces the current cloud, that
/// each pre-image value's matched atom sweeps the atom set exactly once in
/// the weak sense, and that the cloud is cyclically monotone.
pub fn weak_ma_certificate(state: &CrState, battery: &[TestFn]) -> Result<MaReport> {
    let n = state.cloud.n_atoms();
    let permuted = state.pre.permuted(&state.sigma)?;
    if permuted.values() != state.cloud.values() {
        return Err(Error::StaleAssignment(
            "stored permutation does not reproduce the current cloud".to_string(),
        ));
    }
    let inv = state.sigma.inverse();
    let mut worst = 0.0f64;
    for f in battery {
        let mut matched = 0.0;
        let mut direct = 0.0;
        for j in 0..n {
            matched += f.eval(state.cloud.atom(inv.apply(j)));
            direct += f.eval(state.cloud.atom(j));
        }
        worst = worst.max((matched - direct).abs() / n as f64);
    }
    let mono = cyclical_monotonicity_check(&state.cloud, MONO_TRIALS, MONO_MAX_LEN, 0x2545)?;
    Ok(MaReport {
        pushforward_residual: worst,
        monotonicity_worst: mono.worst_violation,
        degenerate: state.cloud.has_repeated_values(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::rearrange::convex_rearrange;
    use approx::assert_abs_diff_eq;

    fn random_cloud(d: usize, n_side: usize, seed: u64) -> LagrangianCloud {
        presets::cloud_preset("random", d, n_side, seed, 1.0).unwrap()
    }

    #[test]
    fn zero_forcing_freezes_after_the_initial_rearrangement() {
        let cloud = random_cloud(2, 4, 11);
        let once = convex_rearrange(&cloud).unwrap();
        let mut state =
            CrState::new(cloud, GhbForcing::Zero, 0.1, AssignSolver::Auto).unwrap();
        assert_eq!(state.cloud.values(), once.values());
        for _ in 0..5 {
            let rep = cr_step(&mut state).unwrap();
            assert_eq!(state.cloud.values(), once.values());
            assert!(rep.bound_margin >= 0.0);
        }
    }

    #[test]
    fn pure_decay_in_1d_is_a_scaled_sort() {
        fn decay(_a: &[f64], y: &[f64], out: &mut [f64]) {
            out[0] = -y[0];
        }
        let cloud = random_cloud(1, 16, 3);
        let sorted = convex_rearrange(&cloud).unwrap();
        let h = 0.1;
        let mut state = CrState::new(
            cloud,
            GhbForcing::Custom { kappa: 2.0, g: decay },
            h,
            AssignSolver::Auto,
        )
        .unwrap();
        for n in 1..=20 {
            cr_step(&mut state).unwrap();
            let scale = (1.0 - h).powi(n);
            for i in 0..state.cloud.n_atoms() {
                assert_abs_diff_eq!(
                    state.cloud.value(i)[0],
                    scale * sorted.value(i)[0],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn rotate_step_matches_brute_force_assignment() {
        // Redo one step by hand from the same starting point: euler update
        // on the rearranged initial cloud, then the exhaustive optimal
        // pairing over all permutations.
        let cloud = random_cloud(2, 3, 17);
        let kappa = 0.7;
        let h = 0.2;
        let forcing = GhbForcing::Rotate { kappa };
        let n = cloud.n_atoms();
        let initial = convex_rearrange(&cloud).unwrap();
        let mut euler_vals = initial.values().to_vec();
        let mut g = [0.0; 2];
        for i in 0..n {
            forcing.eval(initial.atom(i), initial.value(i), &mut g);
            euler_vals[i * 2] += h * g[0];
            euler_vals[i * 2 + 1] += h * g[1];
        }
        let euler = initial.with_values(euler_vals).unwrap();
        let (best_perm, best_cost, second) = brute_force(&euler);
        assert!(second - best_cost > 1e-12, "degenerate instance");
        let manual = euler.permuted(&best_perm).unwrap();
        let mut state = CrState::new(cloud, forcing, h, AssignSolver::Auto).unwrap();
        cr_step(&mut state).unwrap();
        assert_eq!(state.cloud.values(), manual.values());
    }

    fn brute_force(cloud: &LagrangianCloud) -> (Permutation, f64, f64) {
        let n = cloud.n_atoms();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut second = f64::INFINITY;
        loop {
            let cost: f64 = (0..n)
                .map(|i| {
                    cloud
                        .atom(i)
                        .iter()
                        .zip(cloud.value(perm[i]))
                        .map(|(a, y)| (a - y) * (a - y))
                        .sum::<f64>()
                })
                .sum();
            match &best {
                Some((_, c)) if cost >= *c => second = second.min(cost),
                _ => {
                    if let Some((_, c)) = &best {
                        second = *c;
                    }
                    best = Some((perm.clone(), cost));
                }
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        let (map, cost) = best.unwrap();
        (Permutation::new(map).unwrap(), cost, second)
    }

    fn next_permutation(p: &mut [usize]) -> bool {
        let n = p.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && p[i - 1] >= p[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while p[j] <= p[i - 1] {
            j -= 1;
        }
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    #[test]
    fn contraction_pulls_values_onto_atoms() {
        let cloud = random_cloud(2, 4, 5);
        let kappa = 1.0;
        let h = 0.1;
        let mut state = CrState::new(
            cloud,
            GhbForcing::Contract { kappa },
            h,
            AssignSolver::Auto,
        )
        .unwrap();
        let dist = |s: &CrState| -> f64 {
            let n = s.cloud.n_atoms();
            ((0..n)
                .map(|i| {
                    s.cloud
                        .atom(i)
                        .iter()
                        .zip(s.cloud.value(i))
                        .map(|(a, y)| (a - y) * (a - y))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64)
                .sqrt()
        };
        let mut prev = dist(&state);
        let d0 = prev;
        for _ in 0..50 {
            cr_step(&mut state).unwrap();
            let cur = dist(&state);
            // Rearranging can only lower the distance the euler update left.
            assert!(cur <= (1.0 - h * kappa) * prev + 1e-15);
            prev = cur;
        }
        assert!(prev < 6e-3 * d0, "distance {prev} from {d0}");
    }

    #[test]
    fn rotate_trajectories_self_converge_under_refinement() {
        let run = |h: f64| -> Vec<LagrangianCloud> {
            let cloud = random_cloud(2, 8, 23);
            let mut state = CrState::new(
                cloud,
                GhbForcing::Rotate { kappa: 1.0 },
                h,
                AssignSolver::Auto,
            )
            .unwrap();
            let steps = (1.0 / h).round() as usize;
            let mut snaps = vec![state.cloud.clone()];
            for _ in 0..steps {
                cr_step(&mut state).unwrap();
                snaps.push(state.cloud.clone());
            }
            snaps
        };
        let sup_l2 = |coarse: &[LagrangianCloud], fine: &[LagrangianCloud]| -> f64 {
            coarse
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let f = &fine[2 * k];
                    let n = c.n_atoms() as f64;
                    (c.values()
                        .iter()
                        .zip(f.values())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / n)
                        .sqrt()
                })
                .fold(0.0f64, f64::max)
        };
        let a = run(0.1);
        let b = run(0.05);
        let c = run(0.025);
        let e_ab = sup_l2(&a, &b);
        let e_bc = sup_l2(&b, &c);
        assert!(e_bc < e_ab, "self-convergence stalled: {e_ab} then {e_bc}");
    }

    #[test]
    fn weak_residual_vanishes_without_forcing_and_shrinks_with_h() {
        let battery = standard_battery(2);
        let cloud = random_cloud(2, 6, 29);
        let mut state =
            CrState::new(cloud.clone(), GhbForcing::Zero, 0.1, AssignSolver::Auto).unwrap();
        let series = cr_run(
            &mut state,
            &CrRunConfig { t_end: 0.5, snapshot_stride: 0 },
            &battery,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!(series.worst_weak_residual == 0.0);

        let worst_for = |h: f64| -> f64 {
            let mut state = CrState::new(
                cloud.clone(),
                GhbForcing::Rotate { kappa: 1.0 },
                h,
                AssignSolver::Auto,
            )
            .unwrap();
            let series = cr_run(
                &mut state,
                &CrRunConfig { t_end: 1.0, snapshot_stride: 0 },
                &battery,
                |_, _| Ok(()),
            )
            .unwrap();
            series.worst_weak_residual
        };
        let r1 = worst_for(0.04);
        let r2 = worst_for(0.02);
        let r3 = worst_for(0.01);
        for (h, r) in [(0.04, r1), (0.02, r2), (0.01, r3)] {
            assert!(r <= 8.0 * h, "residual {r} not O(h) at h={h}");
        }
        assert!(r3 < r1, "residuals {r1} -> {r3} should shrink");
    }

    #[test]
    fn constant_test_function_gives_zero_residual() {
        let battery = vec![TestFn { center: vec![0.5, 0.5], radius: vec![1e9, 1e9] }];
        let cloud = random_cloud(2, 4, 7);
        let mut state = CrState::new(
            cloud,
            GhbForcing::Rotate { kappa: 1.0 },
            0.1,
            AssignSolver::Auto,
        )
        .unwrap();
        let before = state.cloud.clone();
        cr_step(&mut state).unwrap();
        let center = state.cloud.clone();
        cr_step(&mut state).unwrap();
        let res =
            weak_equation_residual(&before, &center, &state.cloud, &state.forcing, 0.1, &battery)
                .unwrap();
        assert!(res[0] < 1e-12, "constant f residual {}", res[0]);
    }

    #[test]
    fn density_histogram_concentrates_and_spreads_as_expected() {
        let n_side = 16;
        let flat = vec![0.25; n_side];
        let cloud = LagrangianCloud::uniform(1, n_side, 1, flat).unwrap();
        let field = density_estimate(&cloud, 8, None).unwrap();
        let occupied: Vec<&f64> = field.mass.iter().filter(|m| **m > 0.0).collect();
        assert_eq!(occupied.len(), 1);
        assert_abs_diff_eq!(*occupied[0], 1.0, epsilon = 1e-15);

        let idcloud = LagrangianCloud::identity(1, n_side).unwrap();
        let field = density_estimate(&idcloud, n_side, None).unwrap();
        for m in &field.mass {
            assert_abs_diff_eq!(*m, 1.0 / n_side as f64, epsilon = 1e-15);
        }
        let total: f64 = field.mass.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);

        let smoothed = density_estimate(&idcloud, n_side, Some(1.5)).unwrap();
        let total: f64 = smoothed.mass.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(smoothed.mass.iter().all(|m| *m >= 0.0));
        assert_eq!(smoothed.bandwidth, Some(1.5));
    }

    #[test]
    fn ma_certificate_passes_after_steps_and_detects_tampering() {
        let battery = standard_battery(2);
        let cloud = random_cloud(2, 4, 13);
        let mut state = CrState::new(
            cloud,
            GhbForcing::Rotate { kappa: 0.8 },
            0.05,
            AssignSolver::Auto,
        )
        .unwrap();
        for _ in 0..3 {
            cr_step(&mut state).unwrap();
        }
        let report = weak_ma_certificate(&state, &battery).unwrap();
        assert!(report.pushforward_residual < 1e-13);
        assert!(report.monotonicity_worst <= MONO_TOL);
        assert!(!report.degenerate);

        let mut tampered = state.clone();
        let v = tampered.cloud.values_mut();
        v[0] += 0.5;
        let err = weak_ma_certificate(&tampered, &battery).unwrap_err();
        assert!(matches!(err, Error::StaleAssignment(_)));
    }

    #[test]
    fn certificate_rejects_a_hand_built_non_monotone_map() {
        // Decreasing values in 1D: every adjacent transposition is a
        // violated two-cycle.
        let n = 8;
        let values: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
        let cloud = LagrangianCloud::uniform(1, n, 1, values).unwrap();
        let report = cyclical_monotonicity_check(&cloud, 64, 4, 1).unwrap();
        assert!(report.worst_violation > MONO_TOL);
    }

    #[test]
    fn matched_atoms_agree_with_brute_force_on_small_instances() {
        let cloud = random_cloud(1, 8, 41);
        let state =
            CrState::new(cloud.clone(), GhbForcing::Zero, 0.1, AssignSolver::Auto).unwrap();
        let (best_perm, best_cost, second) = brute_force(&cloud);
        assert!(second - best_cost > 1e-12, "degenerate instance");
        assert_eq!(state.sigma.as_slice(), best_perm.as_slice());
    }

    #[test]
    fn one_d_runs_depend_continuously_on_data() {
        let kappa = 0.5;
        let h = 0.05;
        for seed in [1u64, 2, 3, 4, 5] {
            let y0 = random_cloud(1, 32, seed);
            let z0 = random_cloud(1, 32, seed + 100);
            let diff0 = {
                let n = y0.n_atoms() as f64;
                (y0.values()
                    .iter()
                    .zip(z0.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n)
                    .sqrt()
            };
            let mut ys = CrState::new(
                y0,
                GhbForcing::Expand { kappa },
                h,
                AssignSolver::Auto,
            )
            .unwrap();
            let mut zs = CrState::new(
                z0,
                GhbForcing::Expand { kappa },
                h,
                AssignSolver::Auto,
            )
            .unwrap();
            for _ in 0..20 {
                cr_step(&mut ys).unwrap();
                cr_step(&mut zs).unwrap();
                let n = ys.cloud.n_atoms() as f64;
                let diff = (ys
                    .cloud
                    .values()
                    .iter()
                    .zip(zs.cloud.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n)
                    .sqrt();
                let bound = (kappa * ys.t).exp() * diff0;
                assert!(
                    diff <= bound * (1.0 + 1e-12),
                    "seed {seed}: gap {diff} above e^kt bound {bound} at t={}",
                    ys.t
                );
            }
        }
    }

    #[test]
    fn growth_margin_flags_a_forcing_that_lies_about_kappa() {
        fn too_big(_a: &[f64], y: &[f64], out: &mut [f64]) {
            for c in 0..y.len() {
                out[c] = 100.0 * y[c] + 50.0;
            }
        }
        let cloud = random_cloud(2, 4, 3);
        let err = CrState::new(
            cloud,
            GhbForcing::Custom { kappa: 1.0, g: too_big },
            0.1,
            AssignSolver::Auto,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvariantViolated { .. }));
    }

    #[test]
    fn forcing_parse_round_trips_and_rejects_bad_input() {
        for name in ["zero", "contract", "expand", "rotate"] {
            let f = GhbForcing::parse(name, 1.0, 2).unwrap();
            assert_eq!(f.name(), name);
        }
        assert!(GhbForcing::parse("rotate", 1.0, 1).is_err());
        assert!(GhbForcing::parse("contract", -1.0, 2).is_err());
        assert!(GhbForcing::parse("spin", 1.0, 2).is_err());
    }
}
