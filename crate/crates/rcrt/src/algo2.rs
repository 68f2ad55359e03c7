//! Iterative two-step MAP over permutations and common residues: cyclic-shift
//! matching per sampler alternated with weighted circular means.

use rand::Rng;

use crate::core_arith::circ;
use crate::error::{invalid, Result};
use crate::model::{ModuliSet, ResidueView};

/// State of the block-coordinate search.
#[derive(Debug, Clone)]
pub struct IterState {
    /// Current common-residue estimates, one per cluster, in `[0, gamma)`.
    pub mu_hat: Vec<f64>,
    /// `k_hat[l][i]` = observation index of sampler `l` assigned to cluster `i`.
    pub k_hat: Vec<Vec<usize>>,
    /// `sum_i sum_l w_l d_gamma^2(mu_hat_i, r)` for the current state.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each completed iteration; non-increasing.
    pub trace: Vec<f64>,
    /// True when the permutations stabilized before `max_iter`.
    pub converged: bool,
}

/// Optimal pairing of cluster estimates to one sampler's residues.
///
/// Both sequences are sorted on the circle and only the `N` cyclic shifts of
/// the sorted pairing are scored; the minimum-cost shift is optimal. Ties
/// prefer the smaller shift. Returns `perm` with `perm[i]` = observation index
/// paired to cluster `i`, plus the attained cost.
pub fn match_sampler(mu_hat: &[f64], r_col: &[f64], gamma: f64, w: f64) -> (Vec<usize>, f64) {
    let n = mu_hat.len();
    debug_assert_eq!(n, r_col.len());
    let mut mu_order: Vec<usize> = (0..n).collect();
    mu_order.sort_by(|&a, &b| mu_hat[a].total_cmp(&mu_hat[b]).then(a.cmp(&b)));
    let mut r_order: Vec<usize> = (0..n).collect();
    r_order.sort_by(|&a, &b| r_col[a].total_cmp(&r_col[b]).then(a.cmp(&b)));

    let mut best_shift = 0;
    let mut best_cost = f64::INFINITY;
    for shift in 0..n {
        let mut cost = 0.0;
        for i in 0..n {
            let d = circ(mu_hat[mu_order[i]], r_col[r_order[(i + shift) % n]], gamma);
            cost += w * d * d;
        }
        if cost < best_cost {
            best_cost = cost;
            best_shift = shift;
        }
    }
    let mut perm = vec![0usize; n];
    for i in 0..n {
        perm[mu_order[i]] = r_order[(i + best_shift) % n];
    }
    (perm, best_cost)
}

/// Minimizer of `sum_l w_l d_gamma^2(x, v_l)` over the circle.
///
/// After sorting the values, the minimizer is the weighted mean under one of
/// the `L` monotone lift patterns (lift the `j` smallest values by `gamma`);
/// each candidate mean is scored and the best kept.
pub fn circular_weighted_mean(values: &[f64], weights: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(invalid("values and weights must be non-empty and equal length"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| (values[i], weights[i])).collect();

    let w_sum: f64 = sorted.iter().map(|(_, w)| w).sum();
    let base: f64 = sorted.iter().map(|(v, w)| v * w).sum();

    let mut best = (f64::INFINITY, 0.0);
    let mut lifted_w = 0.0;
    for j in 0..sorted.len() {
        let cand = crate::core_arith::wrap((base + gamma * lifted_w) / w_sum, gamma);
        let cost: f64 = sorted
            .iter()
            .map(|(v, w)| {
                let d = circ(cand, *v, gamma);
                w * d * d
            })
            .sum();
        if cost < best.0 {
            best = (cost, cand);
        }
        lifted_w += sorted[j].1;
    }
    Ok(best.1)
}

/// Runs the two-step iteration to a permutation fixed point (or `max_iter`).
///
/// Initialization draws one sampler uniformly and takes its common residues
/// as the starting estimates.
pub fn algo2_iterate(
    obs: &ResidueView,
    ms: &ModuliSet,
    max_iter: usize,
    rng: &mut impl Rng,
) -> Result<IterState> {
    if max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    let n = obs.common.len();
    let l = ms.len();
    if n == 0 || l == 0 {
        return Err(invalid("empty observation set"));
    }
    let init_col = rng.gen_range(0..l);
    let mu0: Vec<f64> = (0..n).map(|i| obs.common[i][init_col]).collect();
    algo2_from(obs, ms, mu0, max_iter)
}

/// Same iteration from an explicit starting estimate.
pub fn algo2_from(
    obs: &ResidueView,
    ms: &ModuliSet,
    mut mu_hat: Vec<f64>,
    max_iter: usize,
) -> Result<IterState> {
    let n = obs.common.len();
    let l = ms.len();
    let gamma = obs.gamma;
    let weights = ms.weights();

    let mut k_hat: Vec<Vec<usize>> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // Step one: per-sampler optimal matching against current estimates.
        let mut next_k = Vec::with_capacity(l);
        for li in 0..l {
            let col: Vec<f64> = (0..n).map(|i| obs.common[i][li]).collect();
            let (perm, _) = match_sampler(&mu_hat, &col, gamma, weights[li]);
            next_k.push(perm);
        }
        let stable = next_k == k_hat;
        k_hat = next_k;

        // Step two: per-cluster weighted circular mean.
        let mut objective = 0.0;
        for i in 0..n {
            let members: Vec<f64> = (0..l).map(|li| obs.common[k_hat[li][i]][li]).collect();
            let mu = circular_weighted_mean(&members, weights, gamma)?;
            mu_hat[i] = mu;
            objective += members
                .iter()
                .zip(weights)
                .map(|(v, w)| {
                    let d = circ(mu, *v, gamma);
                    w * d * d
                })
                .sum::<f64>();
        }
        trace.push(objective);

        if stable {
            converged = true;
            break;
        }
    }

    let objective = *trace.last().expect("at least one iteration");
    Ok(IterState {
        mu_hat,
        k_hat,
        objective,
        iterations,
        trace,
        converged,
    })
}
