//! Experiment engine: seeded trial execution, pipeline dispatch, success
//! scoring, metric aggregation, CSV emission, and the exhaustive test oracle.

use std::time::Instant;

use itertools::Itertools;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algo1::{
    algo1_cluster, free_point, properness_check, score_assignment, shift_residues, CircArc,
    ObjectiveMode,
};
use crate::algo2::algo2_iterate;
use crate::ensemble::{group_moduli, vote_estimates, EnsembleConfig, VoteOutcome};
use crate::error::{invalid, Error, Result};
use crate::model::{observe, primes_from, sample_instance, ModuliSet, NoiseSpec, ObservationSet};
use crate::reconstruct::{reconstruct_cluster, single_rcrt, Reconstruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    Algo1,
    #[default]
    Algo2,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Algo1 => "algo1",
            Algorithm::Algo2 => "algo2",
        }
    }
}

/// Estimator choices shared by single-shot and per-group runs.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub algorithm: Algorithm,
    pub objective: ObjectiveMode,
    pub ec: bool,
    pub max_iter: usize,
    pub restarts: usize,
}

/// Full experiment description; every run is a pure function of this.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n: usize,
    pub gamma: f64,
    /// Sampler count, `2N` by default; ignored when `moduli` is given.
    pub l: usize,
    /// Explicit coprime factors overriding the default prime sequence.
    pub moduli: Option<Vec<u64>>,
    pub snr_grid: Vec<f64>,
    pub trials: u64,
    pub algorithm: Algorithm,
    pub objective: ObjectiveMode,
    pub ensemble: Option<EnsembleConfig>,
    pub ec: bool,
    pub max_iter: usize,
    pub restarts: usize,
    pub master_seed: u64,
    /// Success radius; defaults to `gamma`.
    pub success_threshold: Option<f64>,
    /// Dynamic range as a prefix of the factor sequence (`D = gamma * M_1
    /// ... M_p`); `None` keeps the full product.
    pub d_prefix: Option<usize>,
    /// Worker threads; `None` uses all cores. Results are identical either way.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            gamma: 100.0,
            l: 2 * n,
            moduli: None,
            snr_grid: (-40..=0).map(|s| s as f64).collect(),
            trials: 1000,
            algorithm: Algorithm::Algo2,
            objective: ObjectiveMode::FullPosterior,
            ensemble: None,
            ec: false,
            max_iter: 50,
            restarts: 1,
            master_seed: 0,
            success_threshold: None,
            d_prefix: Some(2),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        if self.trials == 0 {
            return Err(invalid("at least one trial required"));
        }
        if self.snr_grid.is_empty() {
            return Err(invalid("snr grid must be non-empty"));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            algorithm: self.algorithm,
            objective: self.objective,
            ec: self.ec,
            max_iter: self.max_iter,
            restarts: self.restarts.max(1),
        }
    }

    /// The moduli design of this experiment, before noise annotation.
    pub fn design(&self) -> Result<ModuliSet> {
        let ms = match &self.moduli {
            Some(m) => ModuliSet::new(self.gamma, m.clone())?,
            None => ModuliSet::new(self.gamma, primes_from(21, self.l))?,
        };
        match self.d_prefix {
            Some(p) => ms.with_prefix_range(p.min(self.l.max(1))),
            None => Ok(ms),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based per-trial stream: the seed depends only on the coordinates,
/// so parallel execution cannot reorder randomness.
pub fn trial_rng(master_seed: u64, snr_db: f64, trial: u64) -> ChaCha8Rng {
    let a = splitmix(master_seed);
    let b = splitmix(a ^ snr_db.to_bits());
    let c = splitmix(b ^ trial);
    let d = splitmix(c ^ 0x5851_f42d_4c95_7f2d);
    let mut seed = [0u8; 32];
    for (chunk, word) in seed.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Runs the configured estimator on one observation set, returning the `N`
/// reconstructions and the iteration count (1 for the one-pass Algorithm 1).
pub fn solve_set(
    obs: &ObservationSet,
    ms: &ModuliSet,
    opt: &SolveOptions,
    rng: &mut impl Rng,
) -> Result<(Vec<Reconstruction>, usize)> {
    let view = obs.view();
    let n = obs.n();
    match opt.algorithm {
        Algorithm::Algo1 => {
            let (assignment, _tau) =
                algo1_cluster(view.common, ms.weights(), ms.gamma(), opt.objective)?;
            let recs = (0..n)
                .map(|i| single_rcrt(&assignment.cluster_row(view.raw, i), ms, opt.ec))
                .collect::<Result<Vec<_>>>()?;
            Ok((recs, 1))
        }
        Algorithm::Algo2 => {
            let mut best = algo2_iterate(&view, ms, opt.max_iter, rng)?;
            for _ in 1..opt.restarts.max(1) {
                let state = algo2_iterate(&view, ms, opt.max_iter, rng)?;
                if state.objective < best.objective {
                    best = state;
                }
            }
            let recs = (0..n)
                .map(|i| {
                    let row: Vec<f64> = (0..ms.len())
                        .map(|l| view.raw[best.k_hat[l][i]][l])
                        .collect();
                    reconstruct_cluster(&row, best.mu_hat[i], ms, opt.ec)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((recs, best.iterations))
        }
    }
}

/// Ensemble pipeline: estimate on every moduli group, then majority-vote the
/// quotients. Returns the vote and the mean per-group iteration count.
pub fn solve_ensemble(
    obs: &ObservationSet,
    ms: &ModuliSet,
    opt: &SolveOptions,
    ens: &EnsembleConfig,
    rng: &mut impl Rng,
) -> Result<(VoteOutcome, f64)> {
    let groups = group_moduli(ms, ens, rng)?;
    let opt = SolveOptions {
        ec: opt.ec || ens.ec,
        ..*opt
    };
    let mut per_group = Vec::with_capacity(groups.len());
    let mut iter_sum = 0usize;
    for g in &groups {
        let sub_ms = ms.subset(g)?;
        let sub_obs = obs.columns(g);
        let (recs, iters) = solve_set(&sub_obs, &sub_ms, &opt, rng)?;
        per_group.push(recs);
        iter_sum += iters;
    }
    let vote = vote_estimates(&per_group, obs.n(), ms.gamma(), ms.quotient_range())?;
    Ok((vote, iter_sum as f64 / groups.len() as f64))
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub estimates: Vec<f64>,
    pub truth: Vec<f64>,
    /// `success[i]` = truth i was matched by some estimate within threshold.
    pub success: Vec<bool>,
    pub perfect: bool,
    pub iterations: f64,
    pub degenerate: bool,
}

/// One-to-one success scoring: a maximum matching between estimates and
/// truths under circular distance (circle `d`) at most `threshold`.
pub fn score_success(y_hat: &[f64], y: &[f64], threshold: f64, d: f64) -> (Vec<bool>, bool) {
    let n = y.len();
    let dist = |a: f64, b: f64| {
        let raw = (a - b).abs();
        if d.is_finite() {
            raw.min(d - raw)
        } else {
            raw
        }
    };
    let ok: Vec<Vec<bool>> = y_hat
        .iter()
        .map(|&e| y.iter().map(|&t| dist(e, t) <= threshold).collect())
        .collect();

    // Kuhn's augmenting paths over the estimate -> truth adjacency.
    let mut owner = vec![usize::MAX; n];
    fn augment(e: usize, ok: &[Vec<bool>], seen: &mut [bool], owner: &mut [usize]) -> bool {
        for t in 0..owner.len() {
            if ok[e][t] && !seen[t] {
                seen[t] = true;
                if owner[t] == usize::MAX || augment(owner[t], ok, seen, owner) {
                    owner[t] = e;
                    return true;
                }
            }
        }
        false
    }
    for e in 0..y_hat.len() {
        let mut seen = vec![false; n];
        augment(e, &ok, &mut seen, &mut owner);
    }
    let success: Vec<bool> = owner.iter().map(|&o| o != usize::MAX).collect();
    let perfect = success.iter().all(|&s| s);
    (success, perfect)
}

/// Executes one fully deterministic trial of the configured pipeline.
pub fn run_trial(cfg: &ExperimentConfig, snr_db: f64, trial: u64) -> Result<TrialResult> {
    let noise = NoiseSpec::from_snr_db(snr_db);
    let ms = cfg.design()?.with_noise(&noise);
    let mut rng = trial_rng(cfg.master_seed, snr_db, trial);
    let gt = sample_instance(&ms, cfg.n, &mut rng);
    let obs = observe(&gt, &ms, &noise, &mut rng);
    let opt = cfg.solve_options();

    let (estimates, iterations, degenerate) = match &cfg.ensemble {
        None => {
            let (recs, iters) = solve_set(&obs, &ms, &opt, &mut rng)?;
            let est = recs.iter().map(|r| r.y_hat).collect();
            (est, iters as f64, recs.iter().any(|r| !r.reliable))
        }
        Some(ens) => {
            let (vote, iters) = solve_ensemble(&obs, &ms, &opt, ens, &mut rng)?;
            (vote.estimates, iters, vote.degenerate)
        }
    };

    let threshold = cfg.success_threshold.unwrap_or(cfg.gamma);
    let (success, perfect) = score_success(&estimates, &gt.y, threshold, ms.dynamic_range());
    Ok(TrialResult {
        estimates,
        truth: gt.y,
        success,
        perfect,
        iterations,
        degenerate,
    })
}

/// Aggregated metrics for one `(snr, config)` cell.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub snr: f64,
    pub n: usize,
    pub l: usize,
    pub algo: String,
    pub objective: String,
    pub ensemble: String,
    pub ec: bool,
    pub trials: u64,
    pub avg_success: f64,
    pub perfect_success: f64,
    pub mean_iters: f64,
    pub mean_runtime_ms: f64,
    /// Unit-width iteration-count histogram; counts sum to `trials`.
    pub iter_hist: Vec<(usize, u64)>,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
}

pub const CSV_HEADER: &str =
    "snr,n,l,algo,objective,ensemble,ec,trials,avg_success,perfect_success,mean_iters,mean_runtime_ms";

fn fmt_real(x: f64) -> String {
    if x.is_infinite() {
        (if x > 0.0 { "inf" } else { "-inf" }).into()
    } else if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{:.3}\n",
                fmt_real(r.snr),
                r.n,
                r.l,
                r.algo,
                r.objective,
                r.ensemble,
                if r.ec { "on" } else { "off" },
                r.trials,
                r.avg_success,
                r.perfect_success,
                r.mean_iters,
                r.mean_runtime_ms,
            ));
        }
        out
    }
}

pub fn objective_label(mode: ObjectiveMode) -> &'static str {
    match mode {
        ObjectiveMode::FullPosterior => "full",
        ObjectiveMode::Theorem1Literal => "literal",
    }
}

pub fn ensemble_label(ens: Option<&EnsembleConfig>) -> String {
    use crate::ensemble::GroupPolicy::*;
    match ens {
        None => "none".into(),
        Some(e) => match e.policy {
            AllPairs => "pairs".into(),
            AllSubsets => format!("subsets:{}", e.subset_size),
            DisjointGroups => format!("disjoint:{}", e.subset_size),
            RandomK => format!("random:{}", e.subset_size),
        },
    }
}

/// Sweeps the SNR grid, `trials` seeded trials per point, in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Metrics> {
    cfg.validate()?;
    let design = cfg.design()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;

    let rows = pool.install(|| -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::with_capacity(cfg.snr_grid.len());
        for &snr in &cfg.snr_grid {
            let results: Vec<Result<(TrialResult, f64)>> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let start = Instant::now();
                    let res = run_trial(cfg, snr, t)?;
                    Ok((res, start.elapsed().as_secs_f64() * 1e3))
                })
                .collect();
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;

            let trials = cfg.trials as f64;
            let mut avg = 0.0;
            let mut perfect = 0.0;
            let mut iters = 0.0;
            let mut runtime = 0.0;
            let mut hist = std::collections::BTreeMap::new();
            for (r, ms_elapsed) in &results {
                avg += r.success.iter().filter(|&&s| s).count() as f64 / r.success.len() as f64;
                perfect += r.perfect as u8 as f64;
                iters += r.iterations;
                runtime += ms_elapsed;
                *hist.entry(r.iterations.round() as usize).or_insert(0u64) += 1;
            }
            rows.push(MetricsRow {
                snr,
                n: cfg.n,
                l: design.len(),
                algo: cfg.algorithm.label().into(),
                objective: objective_label(cfg.objective).into(),
                ensemble: ensemble_label(cfg.ensemble.as_ref()),
                ec: cfg.ec,
                trials: cfg.trials,
                avg_success: avg / trials,
                perfect_success: perfect / trials,
                mean_iters: iters / trials,
                mean_runtime_ms: runtime / trials,
                iter_hist: hist.into_iter().collect(),
            });
        }
        Ok(rows)
    })?;
    Ok(Metrics { rows })
}

/// The Eq.-(13) log-posterior of a classification, evaluated from a cut
/// avoiding every noise arc; `None` when the classification is not proper.
pub fn eq13_posterior(
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

/// Exhaustive MAP oracle: enumerates all `(N!)^L` classifications and returns
/// the proper one with the highest Eq.-(13) posterior (first in lexicographic
/// order on ties). Guarded to tiny instances.
pub fn oracle_map_cluster(
    common: &[Vec<f64>],
    weights: &[f64],
    gamma: f64,
) -> Result<(Vec<Vec<usize>>, f64)> {
    let n = common.len();
    let l = common.first().map_or(0, Vec::len);
    if n == 0 || l == 0 {
        return Err(invalid("need at least one residue"));
    }
    if n > 3 || l > 4 {
        return Err(invalid("oracle limited to N <= 3, L <= 4"));
    }
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    for k in (0..l)
        .map(|_| (0..n).permutations(n))
        .multi_cartesian_product()
    {
        if let Some(score) = eq13_posterior(&k, common, weights, gamma) {
            if best.as_ref().map_or(true, |(_, s)| score > *s) {
                best = Some((k, score));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no proper classification exists".into()))
}
