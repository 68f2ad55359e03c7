//! Conditional MAP estimation of the residue classification by cutting-point
//! enumeration.
//!
//! Every candidate cut linearizes the circle; rank pairing inside the cut is
//! optimal by the rearrangement inequality, so the search space collapses to
//! the `N*L` observed residues as cut candidates.

use crate::core_arith::wrap;
use crate::error::{invalid, Result};

/// How a candidate classification is scored across cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveMode {
    /// The complete closed-form log-posterior term
    /// `sum_i [(sum_l w r~)^2 / sum_l w - sum_l w r~^2]`, maximized.
    #[default]
    FullPosterior,
    /// The literal criterion `sum_i (sum_l w r~)^2`, minimized.
    Theorem1Literal,
}

/// Shifted residues for one cut candidate.
#[derive(Debug, Clone)]
pub struct CutState {
    pub tau: f64,
    pub gamma: f64,
    /// `shifted[j][l]` in `(-gamma, gamma)`, reduced by `gamma` when the
    /// common residue exceeds `tau`.
    pub shifted: Vec<Vec<f64>>,
}

impl CutState {
    pub fn new(common: &[Vec<f64>], tau: f64, gamma: f64) -> Result<Self> {
        if !(0.0..gamma).contains(&tau) {
            return Err(invalid("tau must lie in [0, gamma)"));
        }
        Ok(Self {
            tau,
            gamma,
            shifted: shift_residues(common, tau, gamma),
        })
    }
}

/// Applies the cut rule: entries strictly above `tau` are reduced by `gamma`.
pub fn shift_residues(common: &[Vec<f64>], tau: f64, gamma: f64) -> Vec<Vec<f64>> {
    common
        .iter()
        .map(|row| {
            row.iter()
                .map(|&r| if r > tau { r - gamma } else { r })
                .collect()
        })
        .collect()
}

/// A directed arc on the circle, from `start` clockwise over `len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircArc {
    pub start: f64,
    pub len: f64,
}

impl CircArc {
    pub fn contains(&self, x: f64, gamma: f64) -> bool {
        wrap(x - self.start, gamma) <= self.len
    }
}

/// One candidate classification: per-sampler bijections from cluster index to
/// observation index, plus the properness verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// `k[l][i]` = observation index of sampler `l` assigned to cluster `i`.
    pub k: Vec<Vec<usize>>,
    pub proper: bool,
    /// Per-cluster noise arc, when one of length below `gamma/2` exists.
    pub intervals: Vec<Option<CircArc>>,
}

impl ClusterAssignment {
    /// The residues of cluster `i`, one per sampler.
    pub fn cluster_row<'a>(&self, values: &'a [Vec<f64>], i: usize) -> Vec<f64> {
        self.k.iter().enumerate().map(|(l, kl)| values[kl[i]][l]).collect()
    }
}

/// Pairs the i-th smallest shifted residue of every sampler into cluster i.
/// Duplicates break ties by observation index, so the output is deterministic.
pub fn rank_pairing(cs: &CutState) -> ClusterAssignment {
    let n = cs.shifted.len();
    let l = cs.shifted.first().map_or(0, Vec::len);
    let mut k = Vec::with_capacity(l);
    for li in 0..l {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            cs.shifted[a][li]
                .total_cmp(&cs.shifted[b][li])
                .then(a.cmp(&b))
        });
        k.push(order);
    }
    ClusterAssignment {
        k,
        proper: false,
        intervals: Vec::new(),
    }
}

/// Scores a rank-paired assignment under the chosen objective.
pub fn cut_objective(
    cs: &CutState,
    assignment: &ClusterAssignment,
    weights: &[f64],
    mode: ObjectiveMode,
) -> f64 {
    score_assignment(&cs.shifted, &assignment.k, weights, mode)
}

pub(crate) fn score_assignment(
    shifted: &[Vec<f64>],
    k: &[Vec<usize>],
    weights: &[f64],
    mode: ObjectiveMode,
) -> f64 {
    let n = shifted.len();
    let w_sum: f64 = weights.iter().sum();
    let mut total = 0.0;
    for i in 0..n {
        let mut lin = 0.0;
        let mut quad = 0.0;
        for (l, kl) in k.iter().enumerate() {
            let x = shifted[kl[i]][l];
            lin += weights[l] * x;
            quad += weights[l] * x * x;
        }
        total += match mode {
            ObjectiveMode::FullPosterior => lin * lin / w_sum - quad,
            ObjectiveMode::Theorem1Literal => lin * lin,
        };
    }
    total
}

/// Finds, per cluster, the unique arc of length below `gamma/2` covering all
/// members, and checks that some cut point avoids every arc.
pub fn properness_check(
    k: &[Vec<usize>],
    common: &[Vec<f64>],
    gamma: f64,
) -> (bool, Vec<Option<CircArc>>) {
    let n = common.len();
    let mut intervals = Vec::with_capacity(n);
    let mut all_exist = true;
    for i in 0..n {
        let members: Vec<f64> = k.iter().enumerate().map(|(l, kl)| common[kl[i]][l]).collect();
        let arc = cluster_arc(&members, gamma);
        all_exist &= arc.is_some();
        intervals.push(arc);
    }
    let proper = all_exist && {
        let arcs: Vec<CircArc> = intervals.iter().map(|a| a.unwrap()).collect();
        free_point(&arcs, gamma).is_some()
    };
    (proper, intervals)
}

/// The shortest arc containing all points, if it is shorter than `gamma/2`.
/// The shortest covering arc is the complement of the largest cyclic gap.
pub(crate) fn cluster_arc(points: &[f64], gamma: f64) -> Option<CircArc> {
    debug_assert!(!points.is_empty());
    let mut sorted: Vec<f64> = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut best_gap = gamma - sorted[m - 1] + sorted[0];
    let mut start = sorted[0];
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            start = w[1];
        }
    }
    let len = gamma - best_gap;
    (len < gamma / 2.0).then_some(CircArc { start, len })
}

/// A point covered by none of the arcs, if the arcs do not cover the circle.
pub(crate) fn free_point(arcs: &[CircArc], gamma: f64) -> Option<f64> {
    if arcs.is_empty() {
        return Some(0.0);
    }
    let mut sorted: Vec<CircArc> = arcs
        .iter()
        .map(|a| CircArc {
            start: wrap(a.start, gamma),
            len: a.len,
        })
        .collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut cur_end = sorted[0].start + sorted[0].len;
    for a in &sorted[1..] {
        if a.start > cur_end {
            return Some(wrap((cur_end + a.start) / 2.0, gamma));
        }
        cur_end = cur_end.max(a.start + a.len);
    }
    let wrap_start = sorted[0].start + gamma;
    (wrap_start > cur_end).then(|| wrap((cur_end + wrap_start) / 2.0, gamma))
}

/// Enumerates every observed residue as a cut candidate, rank-pairs inside
/// each cut, and returns the best-scoring proper classification (falling back
/// to the best overall when no candidate is proper). Ties prefer the smaller
/// cut point.
pub fn algo1_cluster(
    common: &[Vec<f64>],
    weights: &[f64],
    gamma: f64,
    mode: ObjectiveMode,
) -> Result<(ClusterAssignment, f64)> {
    if common.is_empty() || common[0].is_empty() {
        return Err(invalid("need at least one residue"));
    }
    let mut taus: Vec<f64> = common.iter().flatten().copied().collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let better = |cand: f64, best: f64| match mode {
        ObjectiveMode::FullPosterior => cand > best,
        ObjectiveMode::Theorem1Literal => cand < best,
    };

    let mut best_proper: Option<(ClusterAssignment, f64, f64)> = None;
    let mut best_any: Option<(ClusterAssignment, f64, f64)> = None;
    for &tau in &taus {
        let cs = CutState::new(common, tau, gamma)?;
        let mut assignment = rank_pairing(&cs);
        let score = cut_objective(&cs, &assignment, weights, mode);
        let (proper, intervals) = properness_check(&assignment.k, common, gamma);
        assignment.proper = proper;
        assignment.intervals = intervals;
        if best_any.as_ref().map_or(true, |b| better(score, b.1)) {
            best_any = Some((assignment.clone(), score, tau));
        }
        if proper && best_proper.as_ref().map_or(true, |b| better(score, b.1)) {
            best_proper = Some((assignment, score, tau));
        }
    }
    let (assignment, _, tau) = best_proper.or(best_any).expect("nonempty candidates");
    Ok((assignment, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_moduli, observe, sample_instance, NoiseSpec};
    use itertools::Itertools;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn col_matrix(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        // build an N x L matrix from per-sampler columns
        let n = cols[0].len();
        (0..n)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }

    #[test]
    fn shift_rule_examples() {
        let r = vec![vec![10.0], vec![95.0]];
        assert_eq!(shift_residues(&r, 10.0, 100.0), vec![vec![10.0], vec![-5.0]]);
        assert_eq!(shift_residues(&r, 95.0, 100.0), vec![vec![10.0], vec![95.0]]);
    }

    #[test]
    fn rank_pairing_sorts_columns() {
        let common = col_matrix(&[vec![40.0, 95.0], vec![45.0, 2.0]]);
        let cs = CutState::new(&common, 50.0, 100.0).unwrap();
        // shifted: sampler 1 -> {40, -5}, sampler 2 -> {45, 2}
        let a = rank_pairing(&cs);
        let c0: Vec<f64> = a.cluster_row(&cs.shifted, 0);
        let c1: Vec<f64> = a.cluster_row(&cs.shifted, 1);
        assert_eq!(c0, vec![-5.0, 2.0]);
        assert_eq!(c1, vec![40.0, 45.0]);
    }

    #[test]
    fn literal_objective_single_point() {
        let common = vec![vec![7.0]];
        let cs = CutState::new(&common, 7.0, 100.0).unwrap();
        let a = rank_pairing(&cs);
        let s = cut_objective(&cs, &a, &[1.0], ObjectiveMode::Theorem1Literal);
        assert!((s - 49.0).abs() < 1e-12);
    }

    #[test]
    fn full_posterior_vanishes_on_equal_residues() {
        let common = col_matrix(&[vec![30.0, 30.0], vec![30.0, 30.0], vec![30.0, 30.0]]);
        let cs = CutState::new(&common, 30.0, 100.0).unwrap();
        let a = rank_pairing(&cs);
        let s = cut_objective(&cs, &a, &[2.0, 2.0, 2.0], ObjectiveMode::FullPosterior);
        assert!(s.abs() < 1e-9);
    }

    /// The full-posterior score must agree with the numerically integrated
    /// closed-form posterior up to the additive constant N/2 ln(pi / sum w).
    #[test]
    fn full_posterior_matches_quadrature() {
        let common = col_matrix(&[vec![12.0, 61.0], vec![14.5, 58.0]]);
        let weights = [0.7, 0.4];
        let cs = CutState::new(&common, 90.0, 100.0).unwrap();
        let a = rank_pairing(&cs);
        let score = cut_objective(&cs, &a, &weights, ObjectiveMode::FullPosterior);

        let w_sum: f64 = weights.iter().sum();
        let mut log_integral = 0.0;
        for i in 0..2 {
            let row = a.cluster_row(&cs.shifted, i);
            // trapezoid quadrature of int exp(-sum w (x - r)^2) dx
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min) - 40.0;
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 40.0;
            let steps = 400_000;
            let h = (hi - lo) / steps as f64;
            let f = |x: f64| {
                (-row
                    .iter()
                    .zip(&weights)
                    .map(|(r, w)| w * (x - r) * (x - r))
                    .sum::<f64>())
                .exp()
            };
            let mut acc = (f(lo) + f(hi)) / 2.0;
            for s in 1..steps {
                acc += f(lo + s as f64 * h);
            }
            log_integral += (acc * h).ln();
        }
        let expected = score + 2.0 * 0.5 * (std::f64::consts::PI / w_sum).ln();
        assert!(
            (log_integral - expected).abs() < 1e-6,
            "quadrature {log_integral} vs closed form {expected}"
        );
    }

    #[test]
    fn rank_pairing_beats_random_pairings() {
        let mut rng = StdRng::seed_from_u64(31);
        let common = col_matrix(&[
            vec![10.0, 55.0, 80.0],
            vec![12.0, 53.0, 79.0],
            vec![8.0, 57.0, 82.0],
        ]);
        let weights = [1.0, 0.5, 2.0];
        let cs = CutState::new(&common, 95.0, 100.0).unwrap();
        let a = rank_pairing(&cs);
        let best = cut_objective(&cs, &a, &weights, ObjectiveMode::FullPosterior);
        for _ in 0..1000 {
            let mut k = a.k.clone();
            for kl in &mut k {
                use rand::seq::SliceRandom;
                kl.shuffle(&mut rng);
            }
            let s = score_assignment(&cs.shifted, &k, &weights, ObjectiveMode::FullPosterior);
            assert!(s <= best + 1e-9);
        }
    }

    #[test]
    fn cluster_arc_examples() {
        let a = cluster_arc(&[10.0, 20.0, 30.0], 100.0).unwrap();
        assert_eq!((a.start, a.len), (10.0, 20.0));

        let a = cluster_arc(&[95.0, 5.0], 100.0).unwrap();
        assert_eq!((a.start, a.len), (95.0, 10.0));

        // gaps 40/20/40: every covering arc has length 60 >= gamma/2
        assert!(cluster_arc(&[0.0, 40.0, 60.0], 100.0).is_none());
    }

    #[test]
    fn properness_requires_a_free_cut() {
        // two arcs jointly covering the circle leave no cut point
        let arcs = [
            CircArc { start: 0.0, len: 49.0 },
            CircArc { start: 48.0, len: 49.0 },
            CircArc { start: 96.0, len: 45.0 },
        ];
        assert!(free_point(&arcs, 100.0).is_none());
        let arcs = [
            CircArc { start: 0.0, len: 30.0 },
            CircArc { start: 50.0, len: 30.0 },
        ];
        let p = free_point(&arcs, 100.0).unwrap();
        assert!(arcs.iter().all(|a| !a.contains(p, 100.0)));
    }

    #[test]
    fn noiseless_clustering_recovers_truth() {
        let mut rng = StdRng::seed_from_u64(77);
        for n in [2usize, 3, 4] {
            let ms = build_moduli(n, 100.0).unwrap().with_prefix_range(2).unwrap();
            let gt = sample_instance(&ms, n, &mut rng);
            let obs = observe(&gt, &ms, &NoiseSpec::noiseless(), &mut rng);
            let (a, _) = algo1_cluster(
                obs.view().common,
                ms.weights(),
                100.0,
                ObjectiveMode::FullPosterior,
            )
            .unwrap();
            // every cluster must collect observations of a single source
            for i in 0..n {
                let sources: Vec<usize> = a
                    .k
                    .iter()
                    .enumerate()
                    .map(|(l, kl)| {
                        obs.true_perm()[l]
                            .iter()
                            .position(|&j| j == kl[i])
                            .unwrap()
                    })
                    .collect();
                assert!(sources.iter().all(|&s| s == sources[0]));
            }
        }
    }

    #[test]
    fn degenerate_identical_residues_still_bijective() {
        let common = col_matrix(&[vec![40.0, 40.0], vec![40.0, 40.0]]);
        let (a, _) =
            algo1_cluster(&common, &[1.0, 1.0], 100.0, ObjectiveMode::FullPosterior).unwrap();
        for kl in &a.k {
            let mut seen = kl.clone();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1]);
        }
    }

    /// Shift invariance: any cut outside every noise arc selects the same
    /// classification.
    #[test]
    fn cut_choice_outside_arcs_is_immaterial() {
        let mut rng = StdRng::seed_from_u64(5);
        let ms = build_moduli(2, 100.0).unwrap().with_prefix_range(2).unwrap();
        let noise = NoiseSpec::from_snr_db(0.0);
        for _ in 0..50 {
            let gt = sample_instance(&ms, 2, &mut rng);
            let obs = observe(&gt, &ms, &noise, &mut rng);
            let common = obs.view().common;
            let (a, _) =
                algo1_cluster(common, ms.weights(), 100.0, ObjectiveMode::FullPosterior).unwrap();
            if !a.proper {
                continue;
            }
            let arcs: Vec<CircArc> = a.intervals.iter().map(|x| x.unwrap()).collect();
            // re-run the pairing from several cuts that avoid every arc
            for _ in 0..10 {
                let tau = rng.gen::<f64>() * 100.0;
                if arcs.iter().any(|arc| arc.contains(tau, 100.0)) {
                    continue;
                }
                let cs = CutState::new(common, tau, 100.0).unwrap();
                let b = rank_pairing(&cs);
                let same = (0..2).all(|i| {
                    let ra: Vec<f64> = a.cluster_row(common, i);
                    (0..2).any(|j| {
                        let rb: Vec<f64> = b.cluster_row(common, j);
                        ra == rb
                    })
                });
                assert!(same);
            }
        }
    }

    /// Exhaustive check on tiny instances: the selected classification's
    /// posterior equals the maximum over all proper classifications.
    #[test]
    fn small_instances_match_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(13);
        let gamma = 100.0;
        for _ in 0..30 {
            let n = 3;
            let mut cols = Vec::new();
            for _ in 0..2 {
                cols.push((0..n).map(|_| rng.gen::<f64>() * gamma).collect::<Vec<_>>());
            }
            let common = col_matrix(&cols);
            let weights = vec![1.3, 0.8];
            let (a, _) =
                algo1_cluster(&common, &weights, gamma, ObjectiveMode::FullPosterior).unwrap();
            if !a.proper {
                continue;
            }
            let got = proper_score(&a.k, &common, &weights, gamma).unwrap();

            let mut best = f64::NEG_INFINITY;
            for perms in (0..2).map(|_| (0..n).permutations(n)).multi_cartesian_product() {
                if let Some(s) = proper_score(&perms, &common, &weights, gamma) {
                    best = best.max(s);
                }
            }
            assert!(
                (got - best).abs() <= 1e-9 * best.abs().max(1.0),
                "algo1 {got} vs exhaustive {best}"
            );
        }
    }

    fn proper_score(
        k: &[Vec<usize>],
        common: &[Vec<f64>],
        weights: &[f64],
        gamma: f64,
    ) -> Option<f64> {
        let (proper, intervals) = properness_check(k, common, gamma);
        if !proper {
            return None;
        }
        let arcs: Vec<CircArc> = intervals.iter().map(|a| a.unwrap()).collect();
        let tau = free_point(&arcs, gamma)?;
        let shifted = shift_residues(common, tau, gamma);
        Some(score_assignment(&shifted, k, weights, ObjectiveMode::FullPosterior))
    }
}
