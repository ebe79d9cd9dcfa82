//! Exact assignment by shortest augmenting paths with potentials
//! (Jonker-Volgenant style, O(n^3)).

/// Minimize `sum_i cost[i * n + sigma(i)]` over permutations.
///
/// Returns `(sigma, u, v)` where `u`, `v` are dual potentials with
/// `cost[i][j] - u[i] - v[j] >= 0` (up to rounding) and equality on the
/// chosen edges. Ties fall to the lowest column index because every
/// improvement test is a strict inequality scanned in index order.
pub(crate) fn solve_dense(n: usize, cost: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    assert_eq!(cost.len(), n * n);
    const FREE: usize = usize::MAX;
    let virt = n; // virtual column holding the row being inserted
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut owner = vec![FREE; n + 1]; // owner[j] = row matched to column j

    for i in 0..n {
        owner[virt] = i;
        let mut j0 = virt;
        let mut minv = vec![f64::INFINITY; n];
        let mut way = vec![virt; n];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = FREE;
            for j in 0..n {
                if !used[j] {
                    let cur = cost[i0 * n + j] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            debug_assert!(j1 != FREE, "augmenting search ran out of columns");
            for j in 0..n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            u[owner[virt]] += delta;
            j0 = j1;
            if owner[j0] == FREE {
                break;
            }
        }
        // Flip the alternating path back to the virtual column.
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == virt {
                break;
            }
        }
    }

    let mut sigma = vec![0; n];
    for j in 0..n {
        sigma[owner[j]] = j;
    }
    (sigma, u, v)
}
