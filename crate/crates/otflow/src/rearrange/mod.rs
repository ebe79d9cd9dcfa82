//! Rearrangement of value clouds over a fixed uniform atom grid.
//!
//! A [`LagrangianCloud`] carries one value vector per atom of the uniform
//! cell-centered lattice of `[0,1]^d`, each atom weighted `1/N`. Rearranging
//! the values by the quadratic-cost optimal assignment produces the unique
//! (for generic data) cloud whose pairing with the atoms is cyclically
//! monotone; in one dimension this is plain sorting. [`polar_factorize`]
//! splits a cloud into that rearrangement composed with a measure-preserving
//! permutation of the atoms.
//!
//! Two assignment solvers are provided: an exact Hungarian solver for small
//! instances and a scalable auction solver with geometric epsilon scaling.
//! Both break ties by lowest index.

mod auction;
mod hungarian;

pub use auction::AuctionSchedule;

use crate::error::{Error, Result};

/// Largest instance the exact solver accepts.
pub const EXACT_CAP: usize = 512;

/// A bijection of `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(Error::invalid(format!(
                    "not a permutation of 0..{n}: target {j} repeated or out of range"
                )));
            }
            seen[j] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { map: inv }
    }
}

/// Values attached to the uniform atom grid of `[0,1]^d`.
///
/// Atoms are the cell centers `(i + 1/2) / n` per axis, fixed at
/// construction; only the values evolve. Values live in `R^m`; transport
/// operations additionally require `m = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianCloud {
    d: usize,
    m: usize,
    n_side: usize,
    atoms: Vec<f64>,
    values: Vec<f64>,
}

impl LagrangianCloud {
    /// Cloud over the `n_side^d` cell-centered atoms with the given values,
    /// `m` components per atom in atom-major order.
    pub fn uniform(d: usize, n_side: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(Error::invalid(format!("cloud dimension must be 1 or 2, got {d}")));
        }
        if n_side == 0 {
            return Err(Error::invalid("cloud needs at least one atom per axis".to_string()));
        }
        if m == 0 {
            return Err(Error::invalid("cloud values need at least one component".to_string()));
        }
        let n_atoms = n_side.pow(d as u32);
        if values.len() != n_atoms * m {
            return Err(Error::shape(format!(
                "cloud needs {} values for {} atoms with {} components, got {}",
                n_atoms * m,
                n_atoms,
                m,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cloud values"));
        }
        let h = 1.0 / n_side as f64;
        let mut atoms = Vec::with_capacity(n_atoms * d);
        for i in 0..n_atoms {
            match d {
                1 => atoms.push((i as f64 + 0.5) * h),
                _ => {
                    atoms.push(((i % n_side) as f64 + 0.5) * h);
                    atoms.push(((i / n_side) as f64 + 0.5) * h);
                }
            }
        }
        Ok(LagrangianCloud { d, m, n_side, atoms, values })
    }

    /// Cloud whose values copy the atoms themselves (`m = d`).
    pub fn identity(d: usize, n_side: usize) -> Result<Self> {
        let n_atoms = n_side.pow(d as u32) as usize;
        let h = 1.0 / n_side as f64;
        let mut values = Vec::with_capacity(n_atoms * d);
        for i in 0..n_atoms {
            match d {
                1 => values.push((i as f64 + 0.5) * h),
                _ => {
                    values.push(((i % n_side) as f64 + 0.5) * h);
                    values.push(((i / n_side) as f64 + 0.5) * h);
                }
            }
        }
        LagrangianCloud::uniform(d, n_side, d, values)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn n_atoms(&self) -> usize {
        self.n_side.pow(self.d as u32)
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.d..(i + 1) * self.d]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replace the values, keeping atoms and shape.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        LagrangianCloud::uniform(self.d, self.n_side, self.m, values)
    }

    /// New cloud whose value at atom `i` is the old value `sigma(i)`.
    pub fn permuted(&self, sigma: &Permutation) -> Result<Self> {
        if sigma.len() != self.n_atoms() {
            return Err(Error::shape(format!(
                "permutation of {} elements applied to {} atoms",
                sigma.len(),
                self.n_atoms()
            )));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_atoms() {
            values.extend_from_slice(self.value(sigma.apply(i)));
        }
        self.with_values(values)
    }

    /// `L2` norm of the values under the uniform atom measure,
    /// `sqrt(sum |Y_i|^2 / N)`.
    pub fn value_l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.n_atoms() as f64).sqrt()
    }

    /// Largest pointwise value norm.
    pub fn value_max(&self) -> f64 {
        (0..self.n_atoms())
            .map(|i| self.value(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0f64, f64::max)
            .sqrt()
    }

    /// True if two atoms carry identical value vectors, which makes the
    /// optimal assignment non-unique.
    pub fn has_repeated_values(&self) -> bool {
        let n = self.n_atoms();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            self.value(i)
                .iter()
                .zip(self.value(j))
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order.windows(2).any(|w| self.value(w[0]) == self.value(w[1]))
    }

    /// Squared distance between atom `i` and value `j` (`m = d` contexts).
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.atom(i)
            .iter()
            .zip(self.value(j))
            .map(|(a, y)| (a - y) * (a - y))
            .sum()
    }

    fn dense_costs(&self) -> Vec<f64> {
        let n = self.n_atoms();
        let mut c = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                c.push(self.cost(i, j));
            }
        }
        c
    }

    /// Errors unless values live in the same space as the atoms (`m = d`).
    pub fn require_transport(&self) -> Result<()> {
        if self.m != self.d {
            return Err(Error::invalid(format!(
                "transport needs values in R^{}, cloud has m = {}",
                self.d, self.m
            )));
        }
        Ok(())
    }
}

/// An assignment `sigma` (atom `i` takes value `sigma(i)`) with its cost and
/// a dual certificate.
///
/// The duals satisfy `u_i + w_j <= c_ij` for all pairs and
/// `c_{i,sigma(i)} - u_i - w_{sigma(i)} <= eps` on the chosen edges, so the
/// cost is within `N * eps` of optimal; the exact solver certifies with
/// `eps = 0` up to rounding.
#[derive(Debug, Clone)]
pub struct TransportAssignment {
    pub sigma: Permutation,
    /// Unweighted cost `sum_i |a_i - y_{sigma(i)}|^2`.
    pub cost: f64,
    /// Dual on atoms.
    pub u: Vec<f64>,
    /// Dual prices on values.
    pub w: Vec<f64>,
    /// Complementary-slackness tolerance the duals certify.
    pub eps: f64,
}

/// Worst constraint violations of an assignment's dual certificate.
#[derive(Debug, Clone, Copy)]
pub struct DualCertificate {
    /// `max_ij (u_i + w_j - c_ij)`; at most rounding above zero.
    pub feasibility: f64,
    /// `max_i (c_{i,sigma(i)} - u_i - w_{sigma(i)})`; at most `eps` plus
    /// rounding.
    pub slack: f64,
}

impl TransportAssignment {
    pub fn certify(&self, cloud: &LagrangianCloud) -> Result<DualCertificate> {
        cloud.require_transport()?;
        let n = cloud.n_atoms();
        let mut feasibility = f64::NEG_INFINITY;
        let mut slack = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                feasibility = feasibility.max(self.u[i] + self.w[j] - cloud.cost(i, j));
            }
            let j = self.sigma.apply(i);
            slack = slack.max(cloud.cost(i, j) - self.u[i] - self.w[j]);
        }
        Ok(DualCertificate { feasibility, slack })
    }
}

/// Increasing rearrangement of scalar values: the 1D convex rearrangement.
pub fn sort_rearrange_1d(values: &[f64]) -> Result<Vec<f64>> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("values to sort"));
    }
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Optimal assignment by the Hungarian algorithm; exact, `N <= 512`.
pub fn assign_exact(cloud: &LagrangianCloud) -> Result<TransportAssignment> {
    cloud.require_transport()?;
    let n = cloud.n_atoms();
    if n > EXACT_CAP {
        return Err(Error::ExactCapExceeded { n, cap: EXACT_CAP });
    }
    let costs = cloud.dense_costs();
    let (sigma, u, w) = hungarian::solve_dense(n, &costs);
    let cost = (0..n).map(|i| costs[i * n + sigma[i]]).sum();
    Ok(TransportAssignment {
        sigma: Permutation::new(sigma)?,
        cost,
        u,
        w,
        eps: 0.0,
    })
}

/// Optimal assignment by forward auction with geometric epsilon scaling.
///
/// Matches the exact cost within `N * eps_final`. The default schedule
/// targets that cost bound, not the argmin; rounds are logarithmic in the
/// epsilon ratio, so tightening `eps_final` (say `1e-9` on unit-scale data)
/// is cheap when the permutation itself matters.
pub fn assign_auction(
    cloud: &LagrangianCloud,
    schedule: &AuctionSchedule,
) -> Result<TransportAssignment> {
    cloud.require_transport()?;
    auction::solve(cloud, schedule)
}

/// Solver selection for the rearrangement entry points.
#[derive(Debug, Clone, Default)]
pub enum AssignSolver {
    /// Exact up to [`EXACT_CAP`], auction with the default schedule above.
    #[default]
    Auto,
    Exact,
    Auction(AuctionSchedule),
}

pub fn assign(cloud: &LagrangianCloud, solver: &AssignSolver) -> Result<TransportAssignment> {
    match solver {
        AssignSolver::Auto => {
            if cloud.n_atoms() <= EXACT_CAP {
                assign_exact(cloud)
            } else {
                assign_auction(cloud, &AuctionSchedule::default())
            }
        }
        AssignSolver::Exact => assign_exact(cloud),
        AssignSolver::Auction(s) => assign_auction(cloud, s),
    }
}

/// The rearranged cloud: values reordered so the pairing with the atoms is
/// the quadratic-cost optimum, i.e. the gradient of a convex potential in
/// the discrete sense.
pub fn convex_rearrange(cloud: &LagrangianCloud) -> Result<LagrangianCloud> {
    Ok(convex_rearrange_with(cloud, &AssignSolver::Auto)?.0)
}

pub fn convex_rearrange_with(
    cloud: &LagrangianCloud,
    solver: &AssignSolver,
) -> Result<(LagrangianCloud, TransportAssignment)> {
    let assignment = assign(cloud, solver)?;
    let rearranged = cloud.permuted(&assignment.sigma)?;
    Ok((rearranged, assignment))
}

/// A cloud split as rearrangement composed with an atom permutation:
/// `Y_i = rearranged[x(i)]`.
#[derive(Debug, Clone)]
pub struct PolarFactorization {
    pub rearranged: LagrangianCloud,
    /// Measure-preserving part: `x = sigma^{-1}`.
    pub x: Permutation,
    pub assignment: TransportAssignment,
}

/// Factor `Y` into its convex rearrangement and the measure-preserving
/// permutation closest to `Y` in the mean-square sense.
pub fn polar_factorize(cloud: &LagrangianCloud) -> Result<PolarFactorization> {
    polar_factorize_with(cloud, &AssignSolver::Auto)
}

pub fn polar_factorize_with(
    cloud: &LagrangianCloud,
    solver: &AssignSolver,
) -> Result<PolarFactorization> {
    let (rearranged, assignment) = convex_rearrange_with(cloud, solver)?;
    let x = assignment.sigma.inverse();
    Ok(PolarFactorization { rearranged, x, assignment })
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicityReport {
    /// Largest negative cycle sum found, reported as a magnitude (zero when
    /// every sampled cycle is fine).
    pub worst_violation: f64,
    pub cycles_checked: usize,
}

/// Sample random index cycles and check the cyclic-monotonicity inequality
/// `sum_k <Y_{i_k}, a_{i_k} - a_{i_{k+1}}> >= 0` of an optimally paired
/// cloud. Deterministic in `seed`.
pub fn cyclical_monotonicity_check(
    cloud: &LagrangianCloud,
    trials: usize,
    max_cycle_len: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    cloud.require_transport()?;
    if max_cycle_len < 2 {
        return Err(Error::invalid("cycles need at least two atoms".to_string()));
    }
    let n = cloud.n_atoms();
    if n < 2 {
        return Ok(MonotonicityReport { worst_violation: 0.0, cycles_checked: 0 });
    }
    let mut rng = crate::presets::Lcg64::new(seed);
    let mut worst = 0.0f64;
    let mut idx = Vec::new();
    for _ in 0..trials {
        let len = 2 + (rng.next_u64() as usize) % (max_cycle_len - 1).min(n - 1);
        idx.clear();
        while idx.len() < len {
            let cand = (rng.next_u64() as usize) % n;
            if !idx.contains(&cand) {
                idx.push(cand);
            }
        }
        let mut sum = 0.0;
        for k in 0..len {
            let i = idx[k];
            let inext = idx[(k + 1) % len];
            for c in 0..cloud.d {
                sum += cloud.value(i)[c] * (cloud.atom(i)[c] - cloud.atom(inext)[c]);
            }
        }
        if -sum > worst {
            worst = -sum;
        }
    }
    Ok(MonotonicityReport { worst_violation: worst, cycles_checked: trials })
}
