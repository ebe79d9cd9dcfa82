//! Forward auction with geometric epsilon scaling.
//!
//! Unassigned atoms bid for their cheapest value slot at a price premium of
//! the current epsilon; each scaling round reuses the previous prices, so
//! late rounds converge in few bids. The final assignment satisfies
//! epsilon-complementary slackness, which bounds the cost gap to the optimum
//! by `N * eps_final`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::rearrange::{LagrangianCloud, Permutation, TransportAssignment};

#[derive(Debug, Clone)]
pub struct AuctionSchedule {
    /// First-round epsilon; `None` picks (cost spread)/8.
    pub eps_start: Option<f64>,
    /// Geometric shrink factor per round, in (0, 1).
    pub scale: f64,
    /// Terminal epsilon; `None` picks spread/(2 N^2), bounding the cost
    /// error by spread/(2N). Near-degenerate instances need a tighter
    /// caller-supplied value before the permutation itself is pinned.
    pub eps_final: Option<f64>,
    /// Bid cap per round; 0 picks `50 N^2 + 1000`.
    pub max_bids: usize,
}

impl Default for AuctionSchedule {
    fn default() -> Self {
        AuctionSchedule { eps_start: None, scale: 0.25, eps_final: None, max_bids: 0 }
    }
}

pub(crate) fn solve(
    cloud: &LagrangianCloud,
    schedule: &AuctionSchedule,
) -> Result<TransportAssignment> {
    if !(schedule.scale > 0.0 && schedule.scale < 1.0) {
        return Err(Error::invalid(format!(
            "auction scale factor must be in (0,1), got {}",
            schedule.scale
        )));
    }
    let n = cloud.n_atoms();
    let cost = |i: usize, j: usize| -> f64 {
        cloud
            .atom(i)
            .iter()
            .zip(cloud.value(j))
            .map(|(a, y)| (a - y) * (a - y))
            .sum()
    };

    let mut spread_lo = f64::INFINITY;
    let mut spread_hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            let c = cost(i, j);
            spread_lo = spread_lo.min(c);
            spread_hi = spread_hi.max(c);
        }
    }
    let spread = spread_hi - spread_lo;
    if n == 1 || spread <= f64::MIN_POSITIVE {
        // Every assignment is optimal; certify the identity.
        return Ok(TransportAssignment {
            sigma: Permutation::identity(n),
            cost: (0..n).map(|i| cost(i, i)).sum(),
            u: (0..n).map(|i| cost(i, i)).collect(),
            w: vec![0.0; n],
            eps: 0.0,
        });
    }

    let eps_final = schedule.eps_final.unwrap_or(spread / (2.0 * (n * n) as f64));
    let mut eps = schedule.eps_start.unwrap_or(spread / 8.0).max(eps_final);
    let max_bids = if schedule.max_bids == 0 { 50 * n * n + 1000 } else { schedule.max_bids };

    let mut price = vec![0.0f64; n];
    let mut sigma = vec![usize::MAX; n];
    loop {
        let mut owner = vec![usize::MAX; n];
        let mut assigned = vec![usize::MAX; n];
        let mut queue: VecDeque<usize> = (0..n).collect();
        let mut bids = 0usize;
        while let Some(i) = queue.pop_front() {
            if assigned[i] != usize::MAX {
                continue;
            }
            if bids >= max_bids {
                let unassigned = assigned.iter().filter(|&&j| j == usize::MAX).count();
                return Err(Error::AuctionStalled { eps, unassigned, bids });
            }
            bids += 1;
            // Cheapest and second-cheapest slot at current prices; strict
            // comparisons keep the lowest index on ties.
            let mut best_j = 0;
            let mut best = f64::INFINITY;
            let mut second = f64::INFINITY;
            for j in 0..n {
                let c = cost(i, j) + price[j];
                if c < best {
                    second = best;
                    best = c;
                    best_j = j;
                } else if c < second {
                    second = c;
                }
            }
            let raise = if second.is_finite() { second - best + eps } else { eps };
            price[best_j] += raise;
            if owner[best_j] != usize::MAX {
                let evicted = owner[best_j];
                assigned[evicted] = usize::MAX;
                queue.push_back(evicted);
            }
            owner[best_j] = i;
            assigned[i] = best_j;
        }
        sigma = assigned;
        if eps <= eps_final {
            break;
        }
        eps = (eps * schedule.scale).max(eps_final);
    }

    // Duals in minimization form: w_j = -price_j and u_i the exact row
    // minimum, which makes feasibility hold by construction and leaves at
    // most eps of slack on the chosen edges.
    let w: Vec<f64> = price.iter().map(|p| -p).collect();
    let u: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| cost(i, j) - w[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let total = (0..n).map(|i| cost(i, sigma[i])).sum();
    Ok(TransportAssignment {
        sigma: Permutation::new(sigma)?,
        cost: total,
        u,
        w,
        eps,
    })
}
