//! Moduli-subset grouping, quotient-frequency voting, and the closed-form
//! span-probability and Chernoff calculators.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::core_arith::{wrap, wrap_signed};
use crate::error::{invalid, Result};
use crate::model::ModuliSet;
use crate::reconstruct::Reconstruction;

/// How moduli are regrouped into estimation subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupPolicy {
    /// Every valid pair of samplers.
    AllPairs,
    /// Every valid subset of the configured size.
    AllSubsets,
    /// Consecutive disjoint chunks of the configured size.
    DisjointGroups,
    /// `kappa` valid subsets of the configured size, drawn uniformly without
    /// replacement.
    RandomK,
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    pub policy: GroupPolicy,
    /// Subset size `S` (forced to 2 for [`GroupPolicy::AllPairs`]).
    pub subset_size: usize,
    /// Group count for [`GroupPolicy::RandomK`]; `None` derives `C(L, 2)`.
    pub kappa: Option<usize>,
    pub ec: bool,
}

impl EnsembleConfig {
    pub fn all_pairs() -> Self {
        Self {
            policy: GroupPolicy::AllPairs,
            subset_size: 2,
            kappa: None,
            ec: false,
        }
    }

    pub fn all_subsets(subset_size: usize) -> Self {
        Self {
            policy: GroupPolicy::AllSubsets,
            subset_size,
            kappa: None,
            ec: false,
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: usize = 1;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Splits the sampler indices into estimation groups per the policy. A subset
/// is valid when the product of its factors still covers the quotient range,
/// i.e. `gamma * prod M >= D`.
pub fn group_moduli(
    ms: &ModuliSet,
    cfg: &EnsembleConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    let l = ms.len();
    let size = match cfg.policy {
        GroupPolicy::AllPairs => 2,
        _ => cfg.subset_size,
    };
    if size == 0 || size > l {
        return Err(invalid("subset size must be in [1, L]"));
    }
    let valid = |idx: &[usize]| -> bool {
        let prod: u128 = idx.iter().map(|&i| ms.factors()[i] as u128).product();
        prod >= ms.quotient_range()
    };
    let groups: Vec<Vec<usize>> = match cfg.policy {
        GroupPolicy::AllPairs | GroupPolicy::AllSubsets => (0..l)
            .combinations(size)
            .filter(|g| valid(g))
            .collect(),
        GroupPolicy::DisjointGroups => (0..l)
            .collect::<Vec<usize>>()
            .chunks(size)
            .filter(|g| g.len() == size && valid(g))
            .map(<[usize]>::to_vec)
            .collect(),
        GroupPolicy::RandomK => {
            let kappa = cfg.kappa.unwrap_or_else(|| binomial(l, 2));
            let mut all: Vec<Vec<usize>> =
                (0..l).combinations(size).filter(|g| valid(g)).collect();
            if all.len() < kappa {
                return Err(invalid(format!(
                    "only {} valid subsets of size {size}, need {kappa}",
                    all.len()
                )));
            }
            all.shuffle(rng);
            all.truncate(kappa);
            all
        }
    };
    if groups.is_empty() {
        return Err(invalid(format!("no valid moduli subset of size {size}")));
    }
    Ok(groups)
}

/// One frequency bucket of the vote: all reconstructions whose estimate lifts
/// to the same quotient.
#[derive(Debug, Clone)]
pub struct VoteBucket {
    /// Canonical quotient `round(y_hat / gamma) mod q_range`.
    pub key: u128,
    pub count: usize,
    /// Summed consistency of members, the first tie-breaker.
    pub consistency: usize,
    /// Circular-mean refinement of the members' estimates, in `[0, D)`.
    pub y_hat: f64,
}

/// The voting result: the `N` most frequent buckets (padded cyclically when
/// fewer than `N` distinct quotients appeared).
#[derive(Debug, Clone)]
pub struct VoteOutcome {
    pub estimates: Vec<f64>,
    pub buckets: Vec<VoteBucket>,
    pub degenerate: bool,
}

/// Majority vote over `kappa` per-group reconstruction lists.
///
/// Buckets are keyed by the quotient of the estimate itself, so the boundary
/// lifts `(Q, mu)` and `(Q+1, mu - gamma)` of one number land in one bucket.
/// Buckets are ranked by frequency, then summed consistency, then smaller
/// quotient; each winner's estimate is refined to the circular mean of its
/// members.
pub fn vote_estimates(
    per_group: &[Vec<Reconstruction>],
    n: usize,
    gamma: f64,
    q_range: u128,
) -> Result<VoteOutcome> {
    if per_group.is_empty() {
        return Err(invalid("at least one group required"));
    }
    if per_group.iter().any(|g| g.len() != n) {
        return Err(invalid("every group must contribute N reconstructions"));
    }
    let d = gamma * q_range as f64;
    let key_of = |y: f64| -> u128 {
        let k = (y / gamma).round() as i128;
        k.rem_euclid(q_range as i128) as u128
    };

    let mut buckets: Vec<(u128, Vec<&Reconstruction>)> = Vec::new();
    for rec in per_group.iter().flatten() {
        let key = key_of(rec.y_hat);
        match buckets.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(rec),
            None => buckets.push((key, vec![rec])),
        }
    }

    let mut scored: Vec<VoteBucket> = buckets
        .into_iter()
        .map(|(key, members)| {
            let anchor = key as f64 * gamma;
            let mean_dev = members
                .iter()
                .map(|r| wrap_signed(r.y_hat - anchor, d))
                .sum::<f64>()
                / members.len() as f64;
            VoteBucket {
                key,
                count: members.len(),
                consistency: members.iter().map(|r| r.ec_consistency).sum(),
                y_hat: wrap(anchor + mean_dev, d),
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(b.consistency.cmp(&a.consistency))
            .then(a.key.cmp(&b.key))
    });

    let degenerate = scored.len() < n;
    let estimates = (0..n).map(|i| scored[i % scored.len()].y_hat).collect();
    Ok(VoteOutcome {
        estimates,
        buckets: scored,
        degenerate,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Per-offset product estimate `(Phi(d/s) - Phi(-d/s))^(N(L-1))`: every noise
/// offset independently lands in `[-delta, delta)`. Since that event implies
/// every cluster span below `2 delta`, this is a conservative (lower) figure
/// compared to [`exact_span_prob`].
pub fn bound_span_prob(sigma: f64, delta: f64, n: usize, l: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if !(delta >= 0.0) {
        return Err(invalid("delta must be non-negative"));
    }
    let phi = std_normal();
    let per = phi.cdf(delta / sigma) - phi.cdf(-delta / sigma);
    Ok(per.powi((n * (l.saturating_sub(1))) as i32))
}

/// Probability that one cluster's `L` i.i.d. Gaussian offsets span less than
/// `2 delta`, raised to the `N`-th power. Integrates the joint density of the
/// minimum: `L phi(x) Pr(others in [x, x + 2 delta))^(L-1)`.
pub fn exact_span_prob(sigma: f64, delta: f64, n: usize, l: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if !(delta >= 0.0) {
        return Err(invalid("delta must be non-negative"));
    }
    if l <= 1 {
        return Ok(1.0);
    }
    let phi = std_normal();
    let f = |x: f64| {
        let z = x / sigma;
        let density = l as f64 * (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
        let event = phi.cdf((x + 2.0 * delta) / sigma) - phi.cdf(z);
        density * event.powi((l - 1) as i32)
    };
    let lo = -9.0 * sigma;
    let hi = 9.0 * sigma;
    let per = adaptive_simpson(&f, lo, hi, 1e-10, 40).clamp(0.0, 1.0);
    Ok(per.powi(n as i32))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = (a + b) / 2.0;
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, lm, flm, left, eps / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, rm, frm, right, eps / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, eps, depth)
}

/// Lemma-4 lower bound on the majority-vote success probability over `kappa`
/// independent groups each succeeding with probability `p > 1/2`:
/// `1 - exp(-kappa (p - 1/2)^2 / (2p))`.
pub fn chernoff_success(p: f64, kappa: usize) -> Result<f64> {
    if kappa == 0 {
        return Ok(0.0);
    }
    if !(p > 0.5 && p <= 1.0) {
        return Err(invalid("p must lie in (1/2, 1]"));
    }
    let half = p - 0.5;
    Ok(1.0 - (-(kappa as f64) * half * half / (2.0 * p)).exp())
}
