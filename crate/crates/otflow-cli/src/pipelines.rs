//! One pipeline per subcommand: a `parse_*` stage that turns a resolved
//! config into a fully validated plan without touching the filesystem, and
//! an `execute` stage that runs the plan into an output directory. The
//! split lets `validate` stop after planning and lets tests check key
//! coverage without running solvers.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use otflow::aht::{
    aht_run, jko_aht_step, AhtRunConfig, AhtState, JkoState, TimeScheme, AHT_CSV_HEADER,
};
use otflow::cross_burgers::{
    cb_run, CbRunConfig, CbScheme, CrossBurgersState, SpecialSolutionState, CB_CSV_HEADER,
};
use otflow::diag::{loglog_slope, write_csv};
use otflow::dump::{write_cloud, write_field};
use otflow::ghb::{
    cr_run, density_estimate, standard_battery, weak_ma_certificate, CrRunConfig, CrState,
    GhbForcing, CR_CSV_HEADER, MONO_TOL,
};
use otflow::gnsb::{
    forcing_fields, gnsb_run, sqrt_eps_experiment, zero_inertia_step, CarrierVelocity, DensityLaw,
    ForcingSpec, GNSBState, GnsbRunConfig, Spring, SqrtEpsConfig, GNSB_CSV_HEADER,
};
use otflow::grid::{DissipationKind, Grid, VectorField};
use otflow::presets::{box_top_heavy, cloud_preset, torus_field, Lcg64};
use otflow::rearrange::{
    cyclical_monotonicity_check, polar_factorize_with, AssignSolver, AuctionSchedule,
    LagrangianCloud, Permutation,
};
use otflow::{Error, Result};

use crate::config::Resolved;
use crate::manifest::{sha256_file, write_manifest, CheckResult, Manifest};

/// Environment variable capping the number of concurrent sweep workers.
pub const WORKERS_ENV: &str = "OTFLOW_WORKERS";

const HF_CSV_HEADER: &str = "t,total_energy,dissipation,balance_residual";

pub struct RearrangePlan {
    cloud: LagrangianCloud,
    solver: AssignSolver,
}

pub struct AhtPlan {
    y0: VectorField,
    kind: DissipationKind,
    cfg: AhtRunConfig,
}

pub struct JkoPlan {
    cloud: LagrangianCloud,
    h: f64,
    steps: usize,
    solver: AssignSolver,
    stride: usize,
}

pub struct GnsbPlan {
    y0: VectorField,
    kind: DissipationKind,
    eps: f64,
    spec: ForcingSpec,
    cfg: GnsbRunConfig,
    excess_coeff: f64,
    div_tol: f64,
}

pub struct HfPlan {
    y0: VectorField,
    kind: DissipationKind,
    spec: ForcingSpec,
    t_end: f64,
    dt: f64,
    stride: usize,
    balance_tol: f64,
    div_tol: f64,
}

pub struct GhbPlan {
    cloud: LagrangianCloud,
    forcing: GhbForcing,
    h: f64,
    solver: AssignSolver,
    cfg: CrRunConfig,
    weak_coeff: f64,
    bins: usize,
    bandwidth: Option<f64>,
}

pub struct CbPlan {
    state: CrossBurgersState,
    reference: Option<SpecialSolutionState>,
    cfg: CbRunConfig,
    decay_tol: f64,
    family_tol: f64,
}

pub struct SweepPlan {
    y0: VectorField,
    kind: DissipationKind,
    spec: ForcingSpec,
    eps_list: Vec<f64>,
    t_end: f64,
    dt: f64,
    excess_coeff: f64,
    seed: u64,
    /// Echoed into each per-eps child manifest.
    child_config: Vec<(String, String)>,
}

pub enum Plan {
    Rearrange(RearrangePlan),
    Aht(Box<AhtPlan>),
    Jko(JkoPlan),
    Gnsb(Box<GnsbPlan>),
    Hf(Box<HfPlan>),
    Ghb(GhbPlan),
    CrossBurgers(CbPlan),
    Sweep(Box<SweepPlan>),
}

/// What a finished pipeline hands back for the manifest.
pub struct RunOutcome {
    pub checks: Vec<CheckResult>,
    pub metrics: Vec<(String, f64)>,
    /// File names relative to the output directory, in write order.
    pub artifacts: Vec<String>,
}

fn parse_solver(name: &str) -> AssignSolver {
    match name {
        "exact" => AssignSolver::Exact,
        "auction" => AssignSolver::Auction(AuctionSchedule::default()),
        _ => AssignSolver::Auto,
    }
}

fn parse_cloud(res: &Resolved) -> Result<LagrangianCloud> {
    cloud_preset(
        res.str("preset"),
        res.usize("d"),
        res.usize("n_side"),
        res.u64("seed"),
        res.f64("scale"),
    )
}

fn parse_grid(res: &Resolved) -> Result<Grid> {
    let d = res.usize("d");
    let n = res.usize("n");
    match res.str("domain") {
        "box" => {
            if d != 2 {
                return Err(Error::invalid(format!("the box domain is 2D, got d = {d}")));
            }
            Grid::unit_box(n)
        }
        _ => Grid::torus(d, n),
    }
}

fn parse_initial_field(res: &Resolved, grid: Grid) -> Result<VectorField> {
    let name = res.str("y0");
    let seed = res.u64("seed");
    let amplitude = res.f64("amplitude");
    if grid.is_torus() {
        if name == "top_heavy" {
            return Err(Error::invalid(
                "y0 = top_heavy lives on the box; set domain = box".to_string(),
            ));
        }
        torus_field(grid, name, seed, amplitude)
    } else {
        if name != "top_heavy" {
            return Err(Error::invalid(format!(
                "the box domain only has the top_heavy preset, got y0 = {name}"
            )));
        }
        box_top_heavy(grid, amplitude)
    }
}

/// Append anchor components to a `d`-component value field, making the
/// `m = 2d` state the two-block forcing models expect.
fn stack_anchor(base: &VectorField, anchor0: &str) -> Result<VectorField> {
    let grid = base.grid();
    let d = grid.d();
    let nodes = base.comp(0).len();
    let mut data = Vec::with_capacity(2 * d * nodes);
    data.extend_from_slice(base.data());
    for c in 0..d {
        for i in 0..nodes {
            data.push(if anchor0 == "position" { grid.coord(i)[c] } else { 0.0 });
        }
    }
    VectorField::from_data(grid, 2 * d, data)
}

/// Forcing preset plus the initial field, shared by gnsb, hf and sweep.
/// All carrier keys are read regardless of the preset so coverage holds.
fn parse_forced_problem(res: &Resolved) -> Result<(VectorField, ForcingSpec, DissipationKind)> {
    let grid = parse_grid(res)?;
    let kind = DissipationKind::parse(res.str("kind"))?;
    if matches!(kind, DissipationKind::NegLaplacian) && !grid.is_torus() {
        return Err(Error::invalid(
            "kind = neg_laplacian needs domain = torus".to_string(),
        ));
    }
    let base = parse_initial_field(res, grid)?;
    let d = grid.d();
    let spring = Spring::new(res.f64("kappa"), d)?;
    let (drift_x, drift_y) = (res.f64("drift_x"), res.f64("drift_y"));
    let omega = res.f64("omega");
    let carrier = match res.str("carrier") {
        "drift" => CarrierVelocity::Drift(drift_x, drift_y),
        "swirl" => CarrierVelocity::Swirl(omega),
        _ => CarrierVelocity::Zero,
    };
    let spec = match res.str("forcing") {
        "model1" => ForcingSpec::Model1 { spring, lambda: DensityLaw::Uniform, w: carrier },
        "model2" => {
            ForcingSpec::Model2 { spring, lambda: DensityLaw::Uniform, mu: DensityLaw::Uniform }
        }
        "model3" => {
            ForcingSpec::Model3 { spring, lambda: DensityLaw::Uniform, mu: DensityLaw::Uniform }
        }
        _ => ForcingSpec::Hookean { spring },
    };
    let anchor0 = res.str("anchor0");
    let y0 = if spec.expected_m(d, d) == 2 * d { stack_anchor(&base, anchor0)? } else { base };
    spec.validate(d, y0.ncomp())?;
    Ok((y0, spec, kind))
}

/// Validate a resolved section into an executable plan. Reads every
/// declared key; cross-field constraints are checked here so `validate`
/// catches them without running anything.
pub fn parse_plan(res: &mut Resolved) -> Result<(PathBuf, Plan)> {
    let out = PathBuf::from(res.str("out"));
    let plan = match res.subcommand() {
        "rearrange" => Plan::Rearrange(RearrangePlan {
            cloud: parse_cloud(res)?,
            solver: parse_solver(res.str("solver")),
        }),
        "aht" => {
            let grid = parse_grid(res)?;
            let kind = DissipationKind::parse(res.str("kind"))?;
            if matches!(kind, DissipationKind::NegLaplacian) && !grid.is_torus() {
                return Err(Error::invalid(
                    "kind = neg_laplacian needs domain = torus".to_string(),
                ));
            }
            let y0 = parse_initial_field(res, grid)?;
            Plan::Aht(Box::new(AhtPlan {
                y0,
                kind,
                cfg: AhtRunConfig {
                    t_end: res.f64("t_end"),
                    dt: res.f64("dt"),
                    scheme: TimeScheme::parse(res.str("scheme"))?,
                    balance_coeff: res.f64("balance_coeff"),
                    snapshot_stride: res.usize("stride"),
                },
            }))
        }
        "jko" => Plan::Jko(JkoPlan {
            cloud: parse_cloud(res)?,
            h: res.f64("h"),
            steps: res.usize("steps"),
            solver: parse_solver(res.str("solver")),
            stride: res.usize("stride"),
        }),
        "gnsb" => {
            let (y0, spec, kind) = parse_forced_problem(res)?;
            Plan::Gnsb(Box::new(GnsbPlan {
                y0,
                kind,
                eps: res.f64("eps"),
                spec,
                cfg: GnsbRunConfig {
                    t_end: res.f64("t_end"),
                    dt: res.f64("dt"),
                    strang: res.bool("strang"),
                    snapshot_stride: res.usize("stride"),
                },
                excess_coeff: res.f64("excess_coeff"),
                div_tol: res.f64("div_tol"),
            }))
        }
        "hf" => {
            let (y0, spec, kind) = parse_forced_problem(res)?;
            // The spectral torus solve balances to rounding; the box solve is
            // a finite-volume scheme whose grad/div pair is adjoint only up to
            // discretization, so its residual floor scales like h^2.
            let grid = y0.grid();
            let balance_auto =
                if grid.is_torus() { 1e-6 } else { 0.1 * grid.h() * grid.h() };
            Plan::Hf(Box::new(HfPlan {
                y0,
                kind,
                spec,
                t_end: res.f64("t_end"),
                dt: res.f64("dt"),
                stride: res.usize("stride"),
                balance_tol: res.auto_f64("balance_tol", balance_auto),
                div_tol: res.f64("div_tol"),
            }))
        }
        "ghb" => {
            let cloud = parse_cloud(res)?;
            let forcing = GhbForcing::parse(res.str("forcing"), res.f64("kappa"), cloud.d())?;
            let bandwidth = res.f64("bandwidth");
            Plan::Ghb(GhbPlan {
                cloud,
                forcing,
                h: res.f64("h"),
                solver: parse_solver(res.str("solver")),
                cfg: CrRunConfig {
                    t_end: res.f64("t_end"),
                    snapshot_stride: res.usize("stride"),
                },
                weak_coeff: res.f64("weak_coeff"),
                bins: res.usize("bins"),
                bandwidth: (bandwidth > 0.0).then_some(bandwidth),
            })
        }
        "crossburgers" => {
            let n_s = res.usize("n_s");
            let viscous = res.bool("viscous");
            let (alpha0, beta0) = (res.f64("alpha0"), res.f64("beta0"));
            let mode_k = res.usize("mode_k");
            let (seed, amplitude) = (res.u64("seed"), res.f64("amplitude"));
            let (state, reference) = match res.str("profile") {
                "mode" => {
                    let k = mode_k as f64;
                    let state = CrossBurgersState::from_profile(n_s, viscous, move |s| {
                        [0.0, 0.0, (k * s).cos()]
                    })?;
                    (state, None)
                }
                "random" => (random_string_profile(n_s, viscous, seed, amplitude)?, None),
                _ => {
                    let reference = SpecialSolutionState::new(alpha0, beta0)?;
                    let state = CrossBurgersState::new(reference.profile(n_s)?, viscous)?;
                    (state, Some(reference))
                }
            };
            let dt = res.f64("dt");
            let scheme = match res.str("scheme") {
                "explicit" => CbScheme::ExplicitRk2,
                _ => CbScheme::ImexRk2,
            };
            let decay_tol = res.auto_f64("decay_tol", 100.0 * dt * dt);
            Plan::CrossBurgers(CbPlan {
                state,
                reference,
                cfg: CbRunConfig {
                    t_end: res.f64("t_end"),
                    dt,
                    scheme,
                    snapshot_stride: res.usize("stride"),
                },
                decay_tol,
                family_tol: res.f64("family_tol"),
            })
        }
        "sweep" => {
            let (y0, spec, kind) = parse_forced_problem(res)?;
            Plan::Sweep(Box::new(SweepPlan {
                y0,
                kind,
                spec,
                eps_list: res.f64_list("eps_list"),
                t_end: res.f64("t_end"),
                dt: res.f64("dt"),
                excess_coeff: res.f64("excess_coeff"),
                seed: res.u64("seed"),
                child_config: Vec::new(),
            }))
        }
        other => return Err(Error::invalid(format!("unknown subcommand {other:?}"))),
    };
    let plan = match plan {
        Plan::Sweep(mut sweep) => {
            sweep.child_config = res.echo();
            Plan::Sweep(sweep)
        }
        p => p,
    };
    Ok((out, plan))
}

fn random_string_profile(
    n_s: usize,
    viscous: bool,
    seed: u64,
    amplitude: f64,
) -> Result<CrossBurgersState> {
    let mut rng = Lcg64::new(seed);
    let mut coef = [[(0.0, 0.0); 3]; 3];
    for row in coef.iter_mut() {
        for (k, c) in row.iter_mut().enumerate() {
            let w = amplitude / (1.0 + ((k + 1) * (k + 1)) as f64);
            *c = (w * rng.next_symmetric(), w * rng.next_symmetric());
        }
    }
    CrossBurgersState::from_profile(n_s, viscous, move |s| {
        let mut b = [0.0; 3];
        for (c, row) in coef.iter().enumerate() {
            for (k, &(a, bb)) in row.iter().enumerate() {
                let ks = (k + 1) as f64 * s;
                b[c] += a * ks.cos() + bb * ks.sin();
            }
        }
        b
    })
}

/// Writes artifacts under the run directory and remembers their names.
struct Sink<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Self {
        Sink { dir, names: Vec::new() }
    }

    fn field(&mut self, name: String, f: &VectorField, t: f64) -> Result<()> {
        write_field(&self.dir.join(&name), f, t)?;
        self.names.push(name);
        Ok(())
    }

    fn cloud(
        &mut self,
        name: String,
        cloud: &LagrangianCloud,
        sigma: Option<&Permutation>,
    ) -> Result<()> {
        write_cloud(&self.dir.join(&name), cloud, sigma)?;
        self.names.push(name);
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
        write_csv(&self.dir.join(name), header, rows)?;
        self.names.push(name.to_string());
        Ok(())
    }
}

pub fn execute(plan: Plan, out: &Path) -> Result<RunOutcome> {
    match plan {
        Plan::Rearrange(p) => execute_rearrange(p, out),
        Plan::Aht(p) => execute_aht(*p, out),
        Plan::Jko(p) => execute_jko(p, out),
        Plan::Gnsb(p) => execute_gnsb(*p, out),
        Plan::Hf(p) => execute_hf(*p, out),
        Plan::Ghb(p) => execute_ghb(p, out),
        Plan::CrossBurgers(p) => execute_crossburgers(p, out),
        Plan::Sweep(p) => execute_sweep(*p, out),
    }
}

fn execute_rearrange(plan: RearrangePlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let polar = polar_factorize_with(&plan.cloud, &plan.solver)?;
    let cert = polar.assignment.certify(&plan.cloud)?;
    let mono = cyclical_monotonicity_check(&polar.rearranged, 200, 8, 0x7a11)?;
    sink.cloud("input.cloud".to_string(), &plan.cloud, None)?;
    sink.cloud("rearranged.cloud".to_string(), &polar.rearranged, Some(&polar.x))?;
    sink.csv(
        "rearrange.csv",
        "cost,eps,dual_feasibility,dual_slack,monotonicity_worst",
        &[vec![
            polar.assignment.cost,
            polar.assignment.eps,
            cert.feasibility,
            cert.slack,
            mono.worst_violation,
        ]],
    )?;
    let scale = 1.0 + plan.cloud.value_max().powi(2);
    let checks = vec![
        CheckResult::bound("dual_feasibility", cert.feasibility, 1e-9 * scale),
        CheckResult::bound("dual_slack", cert.slack, polar.assignment.eps + 1e-9 * scale),
        CheckResult::bound("monotonicity", mono.worst_violation, 1e-10 * scale),
    ];
    Ok(RunOutcome {
        checks,
        metrics: vec![("cost".to_string(), polar.assignment.cost)],
        artifacts: sink.names,
    })
}

fn execute_aht(plan: AhtPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let mut state = AhtState::new(plan.y0, plan.kind)?;
    let series = aht_run(&mut state, &plan.cfg, |k, s| {
        sink.field(format!("y_{k:06}.field"), &s.y, s.t)
    })?;
    sink.csv("aht.csv", AHT_CSV_HEADER, &series.to_rows())?;
    let last = series.rows.last().unwrap();
    let checks = vec![CheckResult::bound("energy_balance", series.max_excess, series.balance_tol)];
    Ok(RunOutcome {
        checks,
        metrics: vec![
            ("final_cost".to_string(), last.transport_cost),
            ("final_strat_score".to_string(), last.strat_score),
            ("div_max".to_string(), state.div_max),
        ],
        artifacts: sink.names,
    })
}

fn positions_cloud(state: &JkoState) -> Result<LagrangianCloud> {
    let n = state.y0.n_atoms();
    let d = state.y0.d();
    let mut vals = Vec::with_capacity(n * d);
    for i in 0..n {
        vals.extend_from_slice(&state.y0.atom(state.x.apply(i))[..d]);
    }
    state.y0.with_values(vals)
}

fn execute_jko(plan: JkoPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let mut state = JkoState::new(plan.cloud, plan.h)?;
    let mut rows = Vec::with_capacity(plan.steps);
    let mut worst_ascent = f64::NEG_INFINITY;
    if plan.stride > 0 {
        sink.cloud("x_000000.cloud".to_string(), &positions_cloud(&state)?, None)?;
    }
    for k in 1..=plan.steps {
        let report = jko_aht_step(&mut state, &plan.solver)?;
        worst_ascent = worst_ascent.max(report.objective - report.previous_objective);
        rows.push(vec![
            k as f64,
            report.objective,
            report.previous_objective,
            report.energy,
            report.movement,
            report.kept_previous as u8 as f64,
        ]);
        if (plan.stride > 0 && k % plan.stride == 0) || k == plan.steps {
            sink.cloud(format!("x_{k:06}.cloud"), &positions_cloud(&state)?, None)?;
        }
    }
    sink.csv(
        "jko.csv",
        "step,objective,previous_objective,energy,movement,kept_previous",
        &rows,
    )?;
    let checks = vec![CheckResult::bound("descent_defect", worst_ascent, 0.0)];
    Ok(RunOutcome {
        checks,
        metrics: vec![("final_energy".to_string(), state.energy())],
        artifacts: sink.names,
    })
}

fn execute_gnsb(plan: GnsbPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let mut state = GNSBState::new(plan.y0, None, plan.eps, plan.kind)?;
    let e0 = state.total_energy();
    let mut div_worst = 0.0f64;
    let series = gnsb_run(&mut state, &plan.spec, &plan.cfg, |k, s| {
        div_worst = div_worst.max(s.div_max);
        sink.field(format!("y_{k:06}.field"), &s.y, s.t)
    })?;
    div_worst = div_worst.max(state.div_max);
    let rows: Vec<Vec<f64>> = series.rows.iter().map(|r| r.to_vec()).collect();
    sink.csv("gnsb.csv", GNSB_CSV_HEADER, &rows)?;
    let excess_tol = plan.excess_coeff * plan.cfg.dt * (1.0 + e0);
    let checks = vec![
        CheckResult::bound("energy_excess", series.max_excess, excess_tol),
        CheckResult::bound("div_max", div_worst, plan.div_tol),
    ];
    Ok(RunOutcome {
        checks,
        metrics: vec![("final_energy".to_string(), state.total_energy())],
        artifacts: sink.names,
    })
}

fn execute_hf(plan: HfPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let mut state = GNSBState::new(plan.y0, None, 0.0, plan.kind)?;
    let mut rows = Vec::new();
    let mut worst_residual = 0.0f64;
    let mut div_worst = 0.0f64;
    let mut step = 0usize;
    while state.t < plan.t_end - 1e-12 {
        let dt = plan.dt.min(plan.t_end - state.t);
        // The velocity the step is about to solve balances the forcing at
        // the current values, so evaluate it before stepping.
        let (f, _) = forcing_fields(&plan.spec, &state.y)?;
        zero_inertia_step(&mut state, &plan.spec, dt)?;
        step += 1;
        let diss = state.dissipation()?;
        let power = state.v.dot(&f)?;
        let residual = (diss - power).abs() / (1.0 + diss.abs());
        worst_residual = worst_residual.max(residual);
        div_worst = div_worst.max(state.div_max);
        rows.push(vec![state.t, state.total_energy(), diss, residual]);
        if plan.stride > 0 && step % plan.stride == 0 {
            sink.field(format!("y_{step:06}.field"), &state.y, state.t)?;
        }
    }
    if plan.stride == 0 || step % plan.stride != 0 {
        sink.field(format!("y_{step:06}.field"), &state.y, state.t)?;
    }
    sink.csv("hf.csv", HF_CSV_HEADER, &rows)?;
    let checks = vec![
        CheckResult::bound("force_balance", worst_residual, plan.balance_tol),
        CheckResult::bound("div_max", div_worst, plan.div_tol),
    ];
    Ok(RunOutcome {
        checks,
        metrics: vec![("final_energy".to_string(), state.total_energy())],
        artifacts: sink.names,
    })
}

fn execute_ghb(plan: GhbPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let battery = standard_battery(plan.cloud.d());
    let mut state = CrState::new(plan.cloud, plan.forcing, plan.h, plan.solver)?;
    let series = cr_run(&mut state, &plan.cfg, &battery, |k, s| {
        sink.cloud(format!("y_{k:06}.cloud"), &s.cloud, None)
    })?;
    let rows: Vec<Vec<f64>> = series.rows.iter().map(|r| r.to_vec()).collect();
    sink.csv("cr.csv", CR_CSV_HEADER, &rows)?;
    let ma = weak_ma_certificate(&state, &battery)?;
    if plan.bins > 0 {
        let density = density_estimate(&state.cloud, plan.bins, plan.bandwidth)?;
        let d = state.cloud.d();
        let mut rows = Vec::with_capacity(density.mass.len());
        for (idx, mass) in density.mass.iter().enumerate() {
            let mut row = Vec::with_capacity(d + 1);
            let mut rest = idx;
            for c in 0..d {
                let b = rest % density.bins;
                rest /= density.bins;
                let w = (density.hi[c] - density.lo[c]) / density.bins as f64;
                row.push(density.lo[c] + (b as f64 + 0.5) * w);
            }
            row.push(*mass);
            rows.push(row);
        }
        let header = match d {
            1 => "y0,mass",
            2 => "y0,y1,mass",
            _ => "y0,y1,y2,mass",
        };
        sink.csv("density.csv", header, &rows)?;
    }
    let checks = vec![
        CheckResult::bound("monotonicity", series.worst_monotonicity, MONO_TOL),
        CheckResult::bound("growth_bound_defect", -series.worst_bound_margin, 1e-12),
        CheckResult::bound("weak_residual", series.worst_weak_residual, plan.weak_coeff * plan.h),
        CheckResult::bound("pushforward", ma.pushforward_residual, 1e-10),
    ];
    Ok(RunOutcome {
        checks,
        metrics: vec![("final_l2".to_string(), state.cloud.value_l2())],
        artifacts: sink.names,
    })
}

fn execute_crossburgers(plan: CbPlan, out: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::new(out);
    let mut state = plan.state;
    let mut reference = plan.reference;
    let viscous = state.viscous;
    let series = cb_run(&mut state, &plan.cfg, reference.as_mut(), |k, s| {
        sink.field(format!("b_{k:06}.field"), &s.b, s.t)
    })?;
    let rows: Vec<Vec<f64>> = series.rows.iter().map(|r| r.to_vec()).collect();
    sink.csv("cb.csv", CB_CSV_HEADER, &rows)?;
    let mut checks = Vec::new();
    if viscous {
        checks.push(CheckResult::bound(
            "decay_residual",
            series.worst_decay_residual,
            plan.decay_tol,
        ));
    }
    if reference.is_some() {
        checks.push(CheckResult::bound("family_err", series.worst_family_err, plan.family_tol));
    }
    Ok(RunOutcome {
        checks,
        metrics: vec![("final_l2".to_string(), state.l2())],
        artifacts: sink.names,
    })
}

fn worker_cap(n: usize) -> usize {
    let from_env = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let cap = from_env.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    });
    cap.clamp(1, n.max(1))
}

struct EpsOutcome {
    eps: f64,
    sup_y_err: f64,
    int_v_err: f64,
    check: CheckResult,
    artifact: String,
}

fn run_one_eps(plan: &SweepPlan, i: usize, out: &Path) -> Result<EpsOutcome> {
    let start = Instant::now();
    let eps = plan.eps_list[i];
    let cfg = SqrtEpsConfig {
        eps_list: vec![eps],
        t_end: plan.t_end,
        dt: plan.dt,
    };
    let report = sqrt_eps_experiment(&plan.y0, &plan.spec, plan.kind, &cfg)?;
    let series = &report.series[0];
    let dir = out.join(format!("eps_{i:02}"));
    std::fs::create_dir_all(&dir)?;
    let rows: Vec<Vec<f64>> = series.rows.iter().map(|r| r.to_vec()).collect();
    write_csv(&dir.join("gnsb.csv"), GNSB_CSV_HEADER, &rows)?;
    let dt_e = plan.dt.min(eps / 2.0);
    let e0 = series.rows.first().map(|r| r.total_energy).unwrap_or(0.0);
    let check =
        CheckResult::bound("energy_excess", series.max_excess, plan.excess_coeff * dt_e * (1.0 + e0));
    let mut config = plan.child_config.clone();
    config.push(("eps".to_string(), format!("{eps:e}")));
    let artifact_rel = format!("eps_{i:02}/gnsb.csv");
    let child = Manifest {
        subcommand: "sweep".to_string(),
        version: otflow::VERSION.to_string(),
        seed: plan.seed,
        wall_ms: start.elapsed().as_millis(),
        checks: vec![check.clone()],
        metrics: vec![
            ("sup_y_err".to_string(), report.sup_y_err[0]),
            ("int_v_err".to_string(), report.int_v_err[0]),
        ],
        config,
        artifacts: vec![("gnsb.csv".to_string(), sha256_file(&dir.join("gnsb.csv"))?)],
    };
    write_manifest(&dir.join("manifest.txt"), &child)?;
    Ok(EpsOutcome {
        eps,
        sup_y_err: report.sup_y_err[0],
        int_v_err: report.int_v_err[0],
        check,
        artifact: artifact_rel,
    })
}

/// Run every eps concurrently up to the worker cap, one output directory
/// and manifest per eps, then aggregate the error curves into a rate
/// summary with guarded log-log slopes.
fn execute_sweep(plan: SweepPlan, out: &Path) -> Result<RunOutcome> {
    let n_eps = plan.eps_list.len();
    let workers = worker_cap(n_eps);
    let results: Vec<Mutex<Option<Result<EpsOutcome>>>> =
        (0..n_eps).map(|_| Mutex::new(None)).collect();
    let counter = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = counter.fetch_add(1, Ordering::Relaxed);
                if i >= n_eps {
                    break;
                }
                let outcome = run_one_eps(&plan, i, out);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let mut outcomes = Vec::with_capacity(n_eps);
    for slot in results {
        outcomes.push(slot.into_inner().unwrap().expect("worker finished")?);
    }
    let mut sink = Sink::new(out);
    let rows: Vec<Vec<f64>> =
        outcomes.iter().map(|o| vec![o.eps, o.sup_y_err, o.int_v_err]).collect();
    sink.csv("rate_summary.csv", "eps,sup_y_err,int_v_err", &rows)?;
    for o in &outcomes {
        sink.names.push(o.artifact.clone());
    }
    let eps: Vec<f64> = outcomes.iter().map(|o| o.eps).collect();
    let sup_y: Vec<f64> = outcomes.iter().map(|o| o.sup_y_err).collect();
    let int_v: Vec<f64> = outcomes.iter().map(|o| o.int_v_err).collect();
    let y_slope = if n_eps < 2 || sup_y.iter().any(|e| *e <= 1e-10) {
        f64::NAN
    } else {
        loglog_slope(&eps, &sup_y)?
    };
    let v_slope = if n_eps < 2 || int_v.iter().any(|e| *e <= 1e-12) {
        f64::NAN
    } else {
        loglog_slope(&eps, &int_v)?
    };
    let failed = outcomes.iter().filter(|o| !o.check.pass).count();
    let checks = vec![CheckResult::bound("per_eps_invariants", failed as f64, 0.0)];
    Ok(RunOutcome {
        checks,
        metrics: vec![("y_slope".to_string(), y_slope), ("v_slope".to_string(), v_slope)],
        artifacts: sink.names,
    })
}
