//! Transport of a map by its own projected velocity: `K v + grad p = y`,
//! `div v = 0`, `d_t y + (v . grad) y = 0`, with the transport cost
//! `int |y - x|^2 / 2` as Lyapunov functional, plus the proximal
//! (minimizing-movement) discretization of the same flow on a Lagrangian
//! cloud.

use crate::diag::spearman;
use crate::error::{Error, Result};
use crate::grid::{
    advect_vector, check_cfl, dissipation_rate, project, DissipationKind, Projection, ScalarField,
    VectorField,
};
use crate::rearrange::{polar_factorize_with, AssignSolver, LagrangianCloud, Permutation};

/// Time coupling between projection and advection. `Euler` freezes the
/// velocity at the start of the step; `Midpoint` re-projects at the half
/// step and advects with that velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    Euler,
    Midpoint,
}

impl TimeScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(TimeScheme::Euler),
            "midpoint" => Ok(TimeScheme::Midpoint),
            _ => Err(Error::invalid(format!(
                "unknown scheme {s:?} (expected euler or midpoint)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimeScheme::Euler => "euler",
            TimeScheme::Midpoint => "midpoint",
        }
    }
}

/// `int |y - x|^2 / 2` over the grid, identity anchored at the cell
/// coordinates in `[0,1)^d`. Uses the first `d` components of `y`, so
/// augmented states can reuse it for their map part.
pub fn transport_cost(y: &VectorField) -> Result<f64> {
    let g = y.grid();
    let d = g.d();
    if y.ncomp() < d {
        return Err(Error::shape(format!(
            "transport cost needs at least {d} components, field has {}",
            y.ncomp()
        )));
    }
    let hd = g.h().powi(d as i32);
    let mut acc = 0.0;
    for j in 0..g.points() {
        let x = g.coord(j);
        for c in 0..d {
            let diff = y.comp(c)[j] - x[c];
            acc += diff * diff;
        }
    }
    Ok(0.5 * hd * acc)
}

/// Rank correlation between height (negated) and the horizontal mean of the
/// buoyancy scalar `theta = -y_d`; +1 means a profile that decreases with
/// height, the stably stratified ordering.
pub fn strat_score(y: &VectorField) -> Result<f64> {
    let g = y.grid();
    let d = g.d();
    let n = g.n();
    let theta = y.comp(d - 1);
    let (heights, profile): (Vec<f64>, Vec<f64>) = if d == 1 {
        ((0..n).map(|i| -(i as f64)).collect(), theta.iter().map(|v| -v).collect())
    } else {
        let mut profile = Vec::with_capacity(n);
        for iy in 0..n {
            let row = &theta[iy * n..(iy + 1) * n];
            profile.push(-row.iter().sum::<f64>() / n as f64);
        }
        ((0..n).map(|i| -(i as f64)).collect(), profile)
    };
    spearman(&heights, &profile)
}

/// Eulerian state: the map `y`, its projected velocity and pressure, and the
/// reference quantities the invariant checks compare against.
#[derive(Debug, Clone)]
pub struct AhtState {
    pub y: VectorField,
    pub v: VectorField,
    pub p: ScalarField,
    pub t: f64,
    pub kind: DissipationKind,
    pub div_max: f64,
    max_y0: f64,
    mom1_0: [f64; 2],
    mom2_0: f64,
}

impl AhtState {
    pub fn new(y0: VectorField, kind: DissipationKind) -> Result<Self> {
        let g = y0.grid();
        if y0.ncomp() != g.d() {
            return Err(Error::shape(format!(
                "map must have d={} components, got {}",
                g.d(),
                y0.ncomp()
            )));
        }
        y0.assert_finite("initial map")?;
        let Projection { v, p, div_max, .. } = project(&y0, kind)?;
        let max_y0 = y0.max_norm();
        let (mom1_0, mom2_0) = moments(&y0);
        Ok(AhtState {
            y: y0,
            v,
            p,
            t: 0.0,
            kind,
            div_max,
            max_y0,
            mom1_0,
            mom2_0,
        })
    }

    /// Recompute `(v, p)` from the current map.
    pub fn refresh(&mut self) -> Result<()> {
        let proj = project(&self.y, self.kind)?;
        self.v = proj.v;
        self.p = proj.p;
        self.div_max = proj.div_max;
        Ok(())
    }

    /// One step: project, advect the map, advance time.
    pub fn step(&mut self, dt: f64, scheme: TimeScheme) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        self.refresh()?;
        let v_used = match scheme {
            TimeScheme::Euler => self.v.clone(),
            TimeScheme::Midpoint => {
                let y_half = advect_vector(&self.y, &self.v, 0.5 * dt)?;
                project(&y_half, self.kind)?.v
            }
        };
        check_cfl(&v_used, dt)?;
        self.y = advect_vector(&self.y, &v_used, dt)?;
        self.y.assert_finite("advected map")?;
        self.t += dt;
        Ok(())
    }

    /// Semi-Lagrangian interpolation averages node values, so the pointwise
    /// max can only shrink; a breach beyond rounding is a scheme bug.
    pub fn check_max_norm(&self) -> Result<()> {
        let m = self.y.max_norm();
        let limit = self.max_y0 * (1.0 + 1e-12) + 1e-15;
        if m > limit {
            return Err(Error::InvariantViolated {
                what: "max-norm non-expansiveness".into(),
                value: m,
                limit,
            });
        }
        Ok(())
    }

    /// Euclidean drift of the mean of `y` from its initial value.
    pub fn mom1_drift(&self) -> f64 {
        let (m1, _) = moments(&self.y);
        let dx = m1[0] - self.mom1_0[0];
        let dy = m1[1] - self.mom1_0[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Drift of the mean of `|y|^2` from its initial value.
    pub fn mom2_drift(&self) -> f64 {
        let (_, m2) = moments(&self.y);
        (m2 - self.mom2_0).abs()
    }
}

fn moments(y: &VectorField) -> ([f64; 2], f64) {
    let g = y.grid();
    let hd = g.h().powi(g.d() as i32);
    let mut m1 = [0.0; 2];
    let mut m2 = 0.0;
    for c in 0..y.ncomp() {
        let mut s = 0.0;
        for &v in y.comp(c) {
            s += v;
            m2 += v * v;
        }
        m1[c] = s * hd;
    }
    (m1, m2 * hd)
}

pub const AHT_CSV_HEADER: &str =
    "t,transport_cost,dissipation,max_y,v_l2,mom1_drift,mom2_drift,strat_score";

#[derive(Debug, Clone, Copy)]
pub struct AhtRow {
    pub t: f64,
    pub transport_cost: f64,
    pub dissipation: f64,
    pub max_y: f64,
    pub v_l2: f64,
    pub mom1_drift: f64,
    pub mom2_drift: f64,
    pub strat_score: f64,
}

impl AhtRow {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.t,
            self.transport_cost,
            self.dissipation,
            self.max_y,
            self.v_l2,
            self.mom1_drift,
            self.mom2_drift,
            self.strat_score,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct AhtRunConfig {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    /// `C` in the scheme tolerances. Per step the cost may rise by at most
    /// `C (h^2 + dt^2) (1 + cost_0)`; the balance rate
    /// `dcost/dt + dissipation` may exceed zero by at most
    /// `C (h^2 + dt^2 + 2 h |v|) (1 + cost_0)` — the `h |v|` term is the
    /// energy defect bilinear interpolation feeds back per unit time.
    pub balance_coeff: f64,
    /// Call the snapshot hook every this many steps; 0 disables it (the
    /// final state is always offered).
    pub snapshot_stride: usize,
}

impl Default for AhtRunConfig {
    fn default() -> Self {
        AhtRunConfig {
            t_end: 1.0,
            dt: 1e-2,
            scheme: TimeScheme::Midpoint,
            balance_coeff: 10.0,
            snapshot_stride: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AhtSeries {
    pub rows: Vec<AhtRow>,
    /// Worst per-step value of `(cost_next - cost)/dt + dissipation`
    /// (trapezoidal in the dissipation); positive means created energy.
    pub max_excess: f64,
    pub balance_tol: f64,
}

impl AhtSeries {
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(AhtRow::to_vec).collect()
    }
}

fn make_row(state: &AhtState) -> Result<AhtRow> {
    Ok(AhtRow {
        t: state.t,
        transport_cost: transport_cost(&state.y)?,
        dissipation: dissipation_rate(&state.v, state.kind)?,
        max_y: state.y.max_norm(),
        v_l2: state.v.l2_norm(),
        mom1_drift: state.mom1_drift(),
        mom2_drift: state.mom2_drift(),
        strat_score: strat_score(&state.y)?,
    })
}

/// March to `t_end`, one diagnostics row per step boundary, checking the
/// energy balance and the max-norm invariant along the way. `snap` is called
/// with the step index and the refreshed state at the configured stride and
/// after the final step.
pub fn aht_run<F>(state: &mut AhtState, cfg: &AhtRunConfig, mut snap: F) -> Result<AhtSeries>
where
    F: FnMut(usize, &AhtState) -> Result<()>,
{
    if !(cfg.t_end > 0.0) || !(cfg.dt > 0.0) {
        return Err(Error::invalid("t_end and dt must be positive"));
    }
    let h = state.y.grid().h();
    state.refresh()?;
    let cost0 = transport_cost(&state.y)?;
    let scale = 1.0 + cost0;
    let mut rows = vec![make_row(state)?];
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_tol = 0.0f64;
    if cfg.snapshot_stride > 0 {
        snap(0, state)?;
    }
    let mut step_idx = 0usize;
    while state.t < cfg.t_end - 1e-12 {
        let dt = cfg.dt.min(cfg.t_end - state.t);
        state.step(dt, cfg.scheme)?;
        state.refresh()?;
        step_idx += 1;
        let row = make_row(state)?;
        let prev = rows.last().unwrap();
        let step_tol = cfg.balance_coeff * (h * h + dt * dt) * scale;
        let rise = row.transport_cost - prev.transport_cost;
        if rise > step_tol {
            return Err(Error::InvariantViolated {
                what: format!("per-step cost monotonicity at t={}", state.t),
                value: rise,
                limit: step_tol,
            });
        }
        let excess = rise / dt + 0.5 * (row.dissipation + prev.dissipation);
        let tol = cfg.balance_coeff
            * (h * h + dt * dt + 2.0 * h * row.v_l2.max(prev.v_l2))
            * scale;
        max_excess = max_excess.max(excess);
        worst_tol = worst_tol.max(tol);
        if excess > tol {
            return Err(Error::InvariantViolated {
                what: format!("energy balance at t={}", state.t),
                value: excess,
                limit: tol,
            });
        }
        state.check_max_norm()?;
        rows.push(row);
        if cfg.snapshot_stride > 0 && step_idx % cfg.snapshot_stride == 0 {
            snap(step_idx, state)?;
        }
    }
    snap(step_idx, state)?;
    Ok(AhtSeries {
        rows,
        max_excess,
        balance_tol: worst_tol,
    })
}

/// Proximal state: the measure-preserving permutation `X`, the target values
/// `y0`, and the proximal step `h`.
#[derive(Debug, Clone)]
pub struct JkoState {
    pub y0: LagrangianCloud,
    pub x: Permutation,
    pub h: f64,
}

impl JkoState {
    pub fn new(y0: LagrangianCloud, h: f64) -> Result<Self> {
        y0.require_transport()?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("proximal step must be positive, got {h}")));
        }
        let x = Permutation::identity(y0.n_atoms());
        Ok(JkoState { y0, x, h })
    }

    /// `(1/2N) sum |a_X(i) - y0_i|^2`, the energy the flow descends.
    pub fn energy(&self) -> f64 {
        energy_of(&self.y0, &self.x)
    }

    /// Mean squared movement `(1/N) sum |a_X(i) - a_Xprev(i)|^2` between two
    /// permutations.
    pub fn movement(&self, prev: &Permutation) -> f64 {
        let n = self.y0.n_atoms();
        let d = self.y0.d();
        let mut acc = 0.0;
        for i in 0..n {
            let a_new = self.y0.atom(self.x.apply(i));
            let a_old = self.y0.atom(prev.apply(i));
            for c in 0..d {
                let diff = a_new[c] - a_old[c];
                acc += diff * diff;
            }
        }
        acc / n as f64
    }
}

fn energy_of(y0: &LagrangianCloud, x: &Permutation) -> f64 {
    let n = y0.n_atoms();
    let d = y0.d();
    let mut acc = 0.0;
    for i in 0..n {
        let a = y0.atom(x.apply(i));
        let v = y0.value(i);
        for c in 0..d {
            let diff = a[c] - v[c];
            acc += diff * diff;
        }
    }
    acc / (2.0 * n as f64)
}

/// Proximal objective `(1/N) sum [ |a_X(i) - a_Xprev(i)|^2 / 2h
/// + |a_X(i) - y0_i|^2 / 2 ]`.
pub fn jko_objective(y0: &LagrangianCloud, prev: &Permutation, x: &Permutation, h: f64) -> f64 {
    let n = y0.n_atoms();
    let d = y0.d();
    let mut acc = 0.0;
    for i in 0..n {
        let a = y0.atom(x.apply(i));
        let a_prev = y0.atom(prev.apply(i));
        let v = y0.value(i);
        for c in 0..d {
            let move_c = a[c] - a_prev[c];
            let err_c = a[c] - v[c];
            acc += move_c * move_c / (2.0 * h) + 0.5 * err_c * err_c;
        }
    }
    acc / n as f64
}

#[derive(Debug, Clone, Copy)]
pub struct JkoStepReport {
    pub objective: f64,
    /// The objective evaluated at the previous permutation (equals its
    /// energy); descent means `objective <= previous_objective`.
    pub previous_objective: f64,
    pub energy: f64,
    pub movement: f64,
    /// True when the approximate solver's candidate did not improve on
    /// staying put and the previous permutation was kept.
    pub kept_previous: bool,
}

/// One proximal step: assign the atoms to the targets
/// `z_i = (a_Xprev(i) + h y0_i) / (1 + h)` and keep the better of the
/// resulting permutation and the previous one, so the objective never
/// increases even with an approximate solver.
pub fn jko_aht_step(state: &mut JkoState, solver: &AssignSolver) -> Result<JkoStepReport> {
    let n = state.y0.n_atoms();
    let d = state.y0.d();
    let h = state.h;
    let mut z = Vec::with_capacity(n * d);
    for i in 0..n {
        let a_prev = state.y0.atom(state.x.apply(i));
        let v = state.y0.value(i);
        for c in 0..d {
            z.push((a_prev[c] + h * v[c]) / (1.0 + h));
        }
    }
    let z_cloud = state.y0.with_values(z)?;
    let polar = polar_factorize_with(&z_cloud, solver)?;
    let candidate = polar.x;
    let prev = state.x.clone();
    let f_prev = jko_objective(&state.y0, &prev, &prev, h);
    let f_cand = jko_objective(&state.y0, &prev, &candidate, h);
    let kept_previous = f_cand > f_prev;
    if !kept_previous {
        state.x = candidate;
    }
    let objective = if kept_previous { f_prev } else { f_cand };
    Ok(JkoStepReport {
        objective,
        previous_objective: f_prev,
        energy: state.energy(),
        movement: state.movement(&prev),
        kept_previous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::presets;
    use crate::rearrange::polar_factorize;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn no_snap(_: usize, _: &AhtState) -> Result<()> {
        Ok(())
    }

    #[test]
    fn transport_cost_of_zero_map_matches_quadrature() {
        // Torus nodes sit at i/n: the quadrature of x^2 per axis is
        // 1/3 - 1/(2n) + 1/(6n^2). Box nodes are cell centers, giving the
        // midpoint value 1/3 - 1/(12 n^2).
        let n = 16;
        let nf = n as f64;
        let gt = Grid::torus(2, n).unwrap();
        let torus_exact = 1.0 / 3.0 - 1.0 / (2.0 * nf) + 1.0 / (6.0 * nf * nf);
        assert_relative_eq!(
            transport_cost(&VectorField::zeros(gt, 2)).unwrap(),
            torus_exact,
            epsilon = 1e-14
        );
        let gb = Grid::unit_box(n).unwrap();
        let box_exact = 1.0 / 3.0 - 1.0 / (12.0 * nf * nf);
        assert_relative_eq!(
            transport_cost(&VectorField::zeros(gb, 2)).unwrap(),
            box_exact,
            epsilon = 1e-14
        );
        let id = VectorField::identity_map(gt);
        assert_eq!(transport_cost(&id).unwrap(), 0.0);
    }

    #[test]
    fn stationary_gradient_preset_keeps_constant_diagnostics() {
        let g = Grid::torus(2, 16).unwrap();
        let y0 = presets::torus_field(g, "gradient", 0, 0.8).unwrap();
        let mut state = AhtState::new(y0, DissipationKind::Identity).unwrap();
        let cfg = AhtRunConfig {
            t_end: 0.1,
            dt: 0.01,
            ..AhtRunConfig::default()
        };
        let series = aht_run(&mut state, &cfg, no_snap).unwrap();
        let c0 = series.rows[0].transport_cost;
        for row in &series.rows {
            assert_abs_diff_eq!(row.transport_cost, c0, epsilon = 1e-12);
            assert!(row.v_l2 < 1e-11, "velocity {} should vanish", row.v_l2);
            assert!(row.dissipation < 1e-20);
        }
    }

    #[test]
    fn darcy_torus_cost_decays_and_max_norm_holds() {
        let g = Grid::torus(2, 32).unwrap();
        let y0 = presets::torus_field(g, "smooth_random", 5, 0.5).unwrap();
        let max0 = y0.max_norm();
        let mut state = AhtState::new(y0, DissipationKind::Identity).unwrap();
        let cfg = AhtRunConfig {
            t_end: 0.3,
            dt: 0.01,
            ..AhtRunConfig::default()
        };
        let series = aht_run(&mut state, &cfg, no_snap).unwrap();
        let first = series.rows.first().unwrap().transport_cost;
        let last = series.rows.last().unwrap().transport_cost;
        assert!(last < first, "cost should decay: {first} -> {last}");
        assert!(state.y.max_norm() <= max0 * (1.0 + 1e-12));
        // Dissipation actually fires: the decay is not just interpolation.
        assert!(series.rows[0].dissipation > 1e-4);
    }

    #[test]
    fn stokes_torus_cost_is_monotone_per_step() {
        let g = Grid::torus(2, 32).unwrap();
        let y0 = presets::torus_field(g, "smooth_random", 8, 0.5).unwrap();
        let mut state = AhtState::new(y0, DissipationKind::NegLaplacian).unwrap();
        let cfg = AhtRunConfig {
            t_end: 0.2,
            dt: 0.01,
            ..AhtRunConfig::default()
        };
        let series = aht_run(&mut state, &cfg, no_snap).unwrap();
        for pair in series.rows.windows(2) {
            let rel = (pair[1].transport_cost - pair[0].transport_cost)
                / pair[0].transport_cost.max(1e-300);
            assert!(rel <= 1e-8, "relative increase {rel}");
        }
    }

    #[test]
    fn box_top_heavy_settles_toward_stratification() {
        // The overturning first pumps the velocity up by ~4x before the
        // stable profile forms; by t=30 the flow is mostly spun down.
        let g = Grid::unit_box(16).unwrap();
        let y0 = presets::box_top_heavy(g, 1.0).unwrap();
        let mut state = AhtState::new(y0, DissipationKind::Identity).unwrap();
        let s0 = strat_score(&state.y).unwrap();
        assert!(s0 < -0.9, "top-heavy data starts anti-stratified, got {s0}");
        let cfg = AhtRunConfig {
            t_end: 30.0,
            dt: 0.02,
            ..AhtRunConfig::default()
        };
        let series = aht_run(&mut state, &cfg, no_snap).unwrap();
        let v_first = series.rows.first().unwrap().v_l2;
        let v_last = series.rows.last().unwrap().v_l2;
        assert!(v_last < 0.15 * v_first, "velocity {v_first} -> {v_last}");
        let s1 = series.rows.last().unwrap().strat_score;
        assert!(s1 > 0.95, "stratification {s0} -> {s1}");
        let c0 = series.rows.first().unwrap().transport_cost;
        let c1 = series.rows.last().unwrap().transport_cost;
        assert!(c1 < c0, "cost should decay: {c0} -> {c1}");
    }

    #[test]
    fn moments_drift_stays_small_over_unit_time() {
        // Conservation under advection alone; steps applied directly.
        let g = Grid::torus(2, 128).unwrap();
        let y0 = presets::torus_field(g, "smooth_random", 2, 0.5).unwrap();
        let mut state = AhtState::new(y0, DissipationKind::NegLaplacian).unwrap();
        for _ in 0..1000 {
            state.step(1e-3, TimeScheme::Euler).unwrap();
        }
        assert!(state.mom1_drift() < 1e-3, "mean drift {}", state.mom1_drift());
        assert!(state.mom2_drift() < 1e-3, "second-moment drift {}", state.mom2_drift());
        state.check_max_norm().unwrap();
    }

    #[test]
    fn eigenmode_velocity_reaches_the_advection_exactly() {
        // A single divergence-free mode is an eigenfunction of the Stokes
        // solve, so the step must advect y by exactly y/(4 pi^2). (The mode
        // is also steady under its own flow, so the field itself must not
        // change either.)
        let g = Grid::torus(2, 32).unwrap();
        let y0 = presets::torus_field(g, "single_mode", 0, 0.3).unwrap();
        let mut a = AhtState::new(y0.clone(), DissipationKind::NegLaplacian).unwrap();
        a.step(0.1, TimeScheme::Euler).unwrap();
        let v = VectorField::from_data(
            g,
            2,
            y0.data()
                .iter()
                .map(|v| v / (4.0 * std::f64::consts::PI.powi(2)))
                .collect(),
        )
        .unwrap();
        let manual = advect_vector(&y0, &v, 0.1).unwrap();
        for c in 0..2 {
            for ((x, y), z) in a.y.comp(c).iter().zip(manual.comp(c)).zip(y0.comp(c)) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-13);
                assert_abs_diff_eq!(x, z, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn euler_and_midpoint_differ_at_first_order_in_dt() {
        // The paths share the spatial error; their difference isolates the
        // velocity-freezing error of euler, which is O(dt) globally.
        let g = Grid::torus(2, 16).unwrap();
        let y0 = presets::torus_field(g, "smooth_random", 3, 0.4).unwrap();
        let diff = |dt: f64| -> f64 {
            let steps = (0.2 / dt).round() as usize;
            let mut e = AhtState::new(y0.clone(), DissipationKind::Identity).unwrap();
            let mut m = AhtState::new(y0.clone(), DissipationKind::Identity).unwrap();
            for _ in 0..steps {
                e.step(dt, TimeScheme::Euler).unwrap();
                m.step(dt, TimeScheme::Midpoint).unwrap();
            }
            let mut worst = 0.0f64;
            for c in 0..2 {
                for (x, y) in e.y.comp(c).iter().zip(m.y.comp(c)) {
                    worst = worst.max((x - y).abs());
                }
            }
            worst
        };
        let d1 = diff(0.02);
        let d2 = diff(0.01);
        assert!(d1 > 1e-8, "difference too small to measure: {d1}");
        let ratio = d1 / d2;
        assert!(
            (1.4..3.0).contains(&ratio),
            "euler-midpoint gap should halve with dt, got ratio {ratio}"
        );
    }

    #[test]
    fn jko_identity_data_is_a_fixed_point() {
        let cloud = presets::cloud_preset("identity", 2, 4, 0, 1.0).unwrap();
        let mut state = JkoState::new(cloud, 0.5).unwrap();
        for _ in 0..3 {
            let rep = jko_aht_step(&mut state, &AssignSolver::Auto).unwrap();
            assert_eq!(rep.energy, 0.0);
            assert_eq!(rep.movement, 0.0);
        }
        assert!(state.x.is_identity());
    }

    #[test]
    fn jko_step_matches_brute_force_on_eight_atoms() {
        let cloud = presets::cloud_preset("random", 1, 8, 17, 1.0).unwrap();
        let mut state = JkoState::new(cloud, 0.3).unwrap();
        for _ in 0..3 {
            let prev = state.x.clone();
            jko_aht_step(&mut state, &AssignSolver::Exact).unwrap();
            // Exhaustive minimum of the proximal objective over all 8!
            // permutations.
            let n = state.y0.n_atoms();
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut second = f64::INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                let p = Permutation::new(perm.clone()).unwrap();
                let f = jko_objective(&state.y0, &prev, &p, state.h);
                match &mut best {
                    Some((fb, pb)) => {
                        if f < *fb {
                            second = *fb;
                            *fb = f;
                            *pb = perm.clone();
                        } else if f < second {
                            second = f;
                        }
                    }
                    None => best = Some((f, perm.clone())),
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            let (f_best, p_best) = best.unwrap();
            assert!(second > f_best + 1e-12, "instance must have a unique minimizer");
            assert_eq!(state.x.as_slice(), p_best.as_slice());
            assert_abs_diff_eq!(
                jko_objective(&state.y0, &prev, &state.x, state.h),
                f_best,
                epsilon = 1e-14
            );
        }
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
    fn jko_with_large_step_reaches_the_polar_fixed_point() {
        let raw = presets::cloud_preset("random", 2, 4, 23, 1.0).unwrap();
        let y0 = crate::rearrange::convex_rearrange(&raw).unwrap();
        let x_opt = polar_factorize(&y0).unwrap().x;
        let mut state = JkoState::new(y0, 50.0).unwrap();
        for _ in 0..5 {
            jko_aht_step(&mut state, &AssignSolver::Auto).unwrap();
        }
        assert_eq!(state.x.as_slice(), x_opt.as_slice());
        assert_abs_diff_eq!(state.energy(), energy_of(&state.y0, &x_opt), epsilon = 1e-15);
    }

    #[test]
    fn jko_objective_descends_even_with_the_auction_solver() {
        // Movement between atoms is quantized by the grid spacing, so the
        // flow pins in place unless h clears the threshold where a swap's
        // penalty drops below its energy gain; h = 5 does for this cloud.
        let cloud = presets::cloud_preset("two_clusters", 2, 5, 31, 1.0).unwrap();
        let mut state = JkoState::new(cloud, 5.0).unwrap();
        let solver = AssignSolver::Auction(Default::default());
        let initial = state.energy();
        let mut prev_energy = initial;
        for _ in 0..10 {
            let rep = jko_aht_step(&mut state, &solver).unwrap();
            assert!(rep.objective <= rep.previous_objective);
            assert!(rep.energy <= prev_energy + 1e-15);
            prev_energy = rep.energy;
        }
        assert!(
            prev_energy < initial - 1e-6,
            "energy {initial} -> {prev_energy} should strictly decrease"
        );
    }
}
