//! Acceptance gate: one test per criterion, each printing a PASS line with
//! its pinned tolerance once the assertions hold.

use std::process::Command;
use std::time::Instant;

use itertools::Itertools;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rcrt::harness::eq13_posterior;
use rcrt::{
    algo1_cluster, algo2_iterate, bound_span_prob, build_moduli, circ_dist,
    circular_weighted_mean, exact_span_prob, match_sampler, observe, oracle_map_cluster,
    run_experiment, sample_instance, score_success, single_rcrt, solve_set, Algorithm,
    EnsembleConfig, ExperimentConfig, ModuliSet, NoiseSpec, ObjectiveMode, SolveOptions,
};

const GAMMA: f64 = 100.0;

fn pass(id: u32, what: &str) {
    println!("ACCEPTANCE {id:02}: {what} ... PASS");
}

/// 1. Algorithm 1 attains the exhaustive-oracle Eq.-(13) posterior.
#[test]
fn a01_algo1_matches_exhaustive_oracle() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    let mut compared = 0usize;
    for trial in 0..500 {
        let n = [2, 3][trial % 2];
        let l = [2, 3][(trial / 2) % 2];
        let sigma = match trial % 4 {
            0 | 1 => 10f64.powf(0.5), // -10 dB
            _ => 1.0,                 // 0 dB
        };
        let noise = Normal::new(0.0, sigma).unwrap();
        let mu: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * GAMMA).collect();
        let common: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..l)
                    .map(|_| (mu[i] + noise.sample(&mut rng)).rem_euclid(GAMMA))
                    .collect()
            })
            .collect();
        let weights = vec![1.0 / (2.0 * sigma * sigma); l];
        let Ok((oracle_k, oracle_score)) = oracle_map_cluster(&common, &weights, GAMMA) else {
            continue; // no proper classification exists for this draw
        };
        let (a, _) = algo1_cluster(&common, &weights, GAMMA, ObjectiveMode::FullPosterior)
            .expect("algo1");
        let algo_score = eq13_posterior(&a.k, &common, &weights, GAMMA)
            .expect("algo1 must return a proper classification when one exists");
        let tol = 1e-9 * oracle_score.abs().max(1.0);
        assert!(
            (algo_score - oracle_score).abs() <= tol,
            "algo1 {algo_score} vs oracle {oracle_score} (k {oracle_k:?})"
        );
        compared += 1;
    }
    assert!(compared >= 400, "only {compared} proper instances compared");
    assert!(start.elapsed().as_secs() < 60, "criterion 1 exceeded 1 min");
    pass(1, "algo1 posterior equals exhaustive oracle on 500 instances (rel 1e-9)");
}

/// 2. Cyclic-shift matching equals brute-force N! enumeration.
#[test]
fn a02_match_sampler_equals_brute_force() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(102);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let w = rng.gen::<f64>() * 2.0 + 0.05;
        let mu: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * GAMMA).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * GAMMA).collect();
        let (perm, cost) = match_sampler(&mu, &r, GAMMA, w);
        let attained: f64 = (0..n)
            .map(|i| {
                let d = circ_dist(mu[i], r[perm[i]], GAMMA).unwrap();
                w * d * d
            })
            .sum();
        assert!((attained - cost).abs() < 1e-9, "reported cost is not attained");
        let brute = (0..n)
            .permutations(n)
            .map(|p| {
                (0..n)
                    .map(|i| {
                        let d = circ_dist(mu[i], r[p[i]], GAMMA).unwrap();
                        w * d * d
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            (cost - brute).abs() <= 1e-9,
            "cyclic-shift {cost} vs brute force {brute}"
        );
    }
    assert!(start.elapsed().as_secs() < 10, "criterion 2 exceeded 10 s");
    pass(2, "match_sampler equals N! brute force on 1000 inputs (abs 1e-9)");
}

/// 3. Weighted circular mean beats a 10^5-point grid search.
#[test]
fn a03_circular_mean_matches_grid_search() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(103);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|_| {
            let l = rng.gen_range(1..=8);
            let vals: Vec<f64> = (0..l).map(|_| rng.gen::<f64>() * GAMMA).collect();
            let ws: Vec<f64> = (0..l).map(|_| rng.gen::<f64>() * 3.0 + 0.05).collect();
            (vals, ws)
        })
        .collect();
    inputs.par_iter().for_each(|(vals, ws)| {
        let m = circular_weighted_mean(vals, ws, GAMMA).unwrap();
        let cost = |x: f64| {
            vals.iter()
                .zip(ws)
                .map(|(v, w)| {
                    let d = circ_dist(x, *v, GAMMA).unwrap();
                    w * d * d
                })
                .sum::<f64>()
        };
        let grid_best = (0..100_000)
            .map(|s| cost(s as f64 * GAMMA / 100_000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(
            cost(m) <= grid_best + GAMMA * 1e-4,
            "mean cost {} vs grid {grid_best}",
            cost(m)
        );
    });
    assert!(start.elapsed().as_secs() < 30, "criterion 3 exceeded 30 s");
    pass(3, "circular mean within gamma*1e-4 of 1e5-point grid on 1000 inputs");
}

/// 4. Noiseless runs reconstruct every number exactly.
#[test]
fn a04_noiseless_exactness() {
    let opt1 = SolveOptions {
        algorithm: Algorithm::Algo1,
        objective: ObjectiveMode::FullPosterior,
        ec: false,
        max_iter: 50,
        restarts: 1,
    };
    let opt2 = SolveOptions {
        algorithm: Algorithm::Algo2,
        ..opt1
    };
    let mut total = 0usize;
    for n in 2..=10usize {
        let ms = build_moduli(n, GAMMA).unwrap().with_prefix_range(2).unwrap();
        let instances = 112u64;
        (0..instances).into_par_iter().for_each(|t| {
            let mut rng = rcrt::trial_rng(104, n as f64, t);
            let gt = sample_instance(&ms, n, &mut rng);
            let obs = observe(&gt, &ms, &NoiseSpec::noiseless(), &mut rng);
            for opt in [&opt1, &opt2] {
                let (recs, _) = solve_set(&obs, &ms, opt, &mut rng).unwrap();
                let est: Vec<f64> = recs.iter().map(|r| r.y_hat).collect();
                let (_, perfect) = score_success(&est, &gt.y, 1e-6, ms.dynamic_range());
                assert!(perfect, "N={n} trial {t}: {est:?} vs {:?}", gt.y);
            }
        });
        total += instances as usize;
    }
    assert!(total >= 1000);
    pass(4, "noiseless exactness within 1e-6 for both algorithms, N in 2..=10");
}

/// 5. Robustness: bounded error spread keeps the estimate within max |Delta|.
#[test]
fn a05_robustness_contract() {
    let ms = build_moduli(2, GAMMA).unwrap().with_prefix_range(2).unwrap();
    let d = ms.dynamic_range();
    (0..10_000u64).into_par_iter().for_each(|t| {
        let mut rng = rcrt::trial_rng(105, 0.0, t);
        let y = rng.gen::<f64>() * d;
        let deltas: Vec<f64> = (0..ms.len())
            .map(|_| rng.gen::<f64>() * 49.8 - 24.9)
            .collect();
        let row: Vec<f64> = ms
            .moduli()
            .iter()
            .zip(&deltas)
            .map(|(&m, &dl)| (y + dl).rem_euclid(m))
            .collect();
        let rec = single_rcrt(&row, &ms, false).unwrap();
        let max_abs = deltas.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let err = circ_dist(rec.y_hat, y, d).unwrap();
        assert!(err <= max_abs + 1e-9, "trial {t}: err {err} > {max_abs}");
    });
    pass(5, "robustness |Y_hat - Y| <= max |Delta| on 10^4 trials, zero violations");
}

/// 6. Theorem 3: error-corrected reconstruction stays within 3 Gamma / 4.
#[test]
fn a06_theorem3_contract() {
    for (l, e, seed) in [(4usize, 1usize, 106u64), (6, 2, 107)] {
        let factors = rcrt::primes_from(21, l);
        let ms = ModuliSet::new(GAMMA, factors)
            .unwrap()
            .with_prefix_range(2)
            .unwrap();
        assert_eq!(ms.l0(), 2);
        let d = ms.dynamic_range();
        (0..5_000u64).into_par_iter().for_each(|t| {
            let mut rng = rcrt::trial_rng(seed, 0.0, t);
            let y = rng.gen::<f64>() * d;
            let mut row: Vec<f64> = ms
                .moduli()
                .iter()
                .map(|&m| (y + rng.gen::<f64>() * 48.0 - 24.0).rem_euclid(m))
                .collect();
            let mut hit = (0..l).collect::<Vec<_>>();
            for _ in 0..e {
                let pick = rng.gen_range(0..hit.len());
                let li = hit.swap_remove(pick);
                row[li] = rng.gen::<f64>() * ms.moduli()[li];
            }
            let rec = single_rcrt(&row, &ms, true).unwrap();
            let err = circ_dist(rec.y_hat, y, d).unwrap();
            assert!(
                err <= 0.75 * GAMMA + 1e-9,
                "L={l} e={e} trial {t}: err {err}"
            );
        });
    }
    pass(6, "Theorem 3 |Y_hat - Y| <= 3 Gamma / 4 with e corrupted residues, 10^4 trials");
}

/// 7 and 8, sharing one sweep of the full grid: monotone descent on every
/// trial and a per-cell median iteration count of at most 10.
#[test]
fn a07_a08_descent_and_iteration_budget() {
    for n in [2usize, 4, 6, 8, 10] {
        let design = build_moduli(n, GAMMA).unwrap().with_prefix_range(2).unwrap();
        for snr in (-40..=0).map(f64::from) {
            let noise = NoiseSpec::from_snr_db(snr);
            let ms = design.clone().with_noise(&noise);
            let mut iters: Vec<usize> = (0..1000u64)
                .into_par_iter()
                .map(|t| {
                    let mut rng = rcrt::trial_rng(108, snr + n as f64 * 1000.0, t);
                    let gt = sample_instance(&ms, n, &mut rng);
                    let obs = observe(&gt, &ms, &noise, &mut rng);
                    let state = algo2_iterate(&obs.view(), &ms, 50, &mut rng).unwrap();
                    for w in state.trace.windows(2) {
                        assert!(
                            w[1] <= w[0] * (1.0 + 1e-12) + 1e-9,
                            "objective increased at N={n} snr={snr}: {:?}",
                            state.trace
                        );
                    }
                    state.iterations
                })
                .collect();
            iters.sort_unstable();
            let median = iters[iters.len() / 2];
            assert!(median <= 10, "median {median} iterations at N={n} snr={snr}");
        }
    }
    pass(7, "algo2 objective non-increasing on every trial of the full SNR grid");
    pass(8, "median algo2 iterations <= 10 in every (N, SNR) cell");
}

fn pairs_config(trials: u64, snr_grid: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(2);
    cfg.snr_grid = snr_grid;
    cfg.trials = trials;
    cfg.ensemble = Some(EnsembleConfig::all_pairs());
    cfg.master_seed = 109;
    cfg
}

/// 9. High-SNR ensemble success rate.
#[test]
fn a09_high_snr_success() {
    let start = Instant::now();
    let metrics = run_experiment(&pairs_config(500, vec![0.0])).unwrap();
    let rate = metrics.rows[0].avg_success;
    assert!(rate >= 0.95, "avg success {rate} below 0.95");
    assert!(start.elapsed().as_secs() < 120, "criterion 9 exceeded 2 min");
    pass(9, "N=2 all-pairs algo2 at 0 dB reaches avg success >= 0.95");
}

/// 10. Success is non-decreasing in SNR up to Monte Carlo noise.
#[test]
fn a10_snr_trend() {
    let grid = vec![-40.0, -30.0, -20.0, -10.0, 0.0];
    let metrics = run_experiment(&pairs_config(500, grid)).unwrap();
    for pair in metrics.rows.windows(2) {
        let (lo, hi) = (pair[0].avg_success, pair[1].avg_success);
        let t = pair[0].trials as f64;
        let se = (lo * (1.0 - lo) / t + hi * (1.0 - hi) / t).sqrt();
        assert!(
            hi >= lo - 2.0 * se,
            "success fell from {lo} (snr {}) to {hi} (snr {})",
            pair[0].snr,
            pair[1].snr
        );
    }
    pass(10, "avg success non-decreasing in SNR within 2 standard errors");
}

/// 11. Algorithm 2 at least matches Algorithm 1 on the comparison grid.
#[test]
fn a11_algo2_at_least_algo1() {
    let grid = vec![-20.0, -15.0, -10.0, -5.0, 0.0];
    let mut sums = [0.0f64; 2];
    let mut var = 0.0f64;
    let mut cells = 0usize;
    for n in [2usize, 4] {
        for (slot, algo) in [Algorithm::Algo1, Algorithm::Algo2].into_iter().enumerate() {
            let mut cfg = ExperimentConfig::new(n);
            cfg.snr_grid = grid.clone();
            cfg.trials = 500;
            cfg.algorithm = algo;
            cfg.master_seed = 111;
            let metrics = run_experiment(&cfg).unwrap();
            for row in &metrics.rows {
                sums[slot] += row.avg_success;
                var += row.avg_success * (1.0 - row.avg_success) / row.trials as f64;
                if slot == 0 {
                    cells += 1;
                }
            }
        }
    }
    let mean1 = sums[0] / cells as f64;
    let mean2 = sums[1] / cells as f64;
    let se = var.sqrt() / cells as f64;
    assert!(
        mean2 >= mean1 - 2.0 * se,
        "algo2 mean {mean2} below algo1 mean {mean1} - 2se ({se})"
    );
    pass(11, "algo2 mean success >= algo1 within 2 pooled standard errors");
}

/// 12. Span probability: ordering against the product figure on a 1000-point
/// grid, and agreement with a 10^6-sample Monte Carlo oracle. The product
/// figure's event (every offset in [-delta, delta)) implies the span event,
/// so the correct ordering is bound <= exact; the exact value is the one the
/// Monte Carlo oracle must confirm.
#[test]
fn a12_span_probability_oracle() {
    let sigmas = [0.3, 0.5, 1.0, 2.0, 5.0];
    let deltas = [0.05, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let shapes = [(1usize, 2usize), (1, 4), (2, 2), (2, 4), (3, 6)];
    let mut grid_points = 0usize;
    for i in 0..1000usize {
        let s = sigmas[i % 5] * (1.0 + 0.1 * (i / 250) as f64);
        let d = deltas[(i / 5) % 10];
        let (n, l) = shapes[(i / 50) % 5];
        let e = exact_span_prob(s, d, n, l).unwrap();
        let b = bound_span_prob(s, d, n, l).unwrap();
        assert!(b <= e + 1e-6, "product {b} above exact {e} at ({s},{d},{n},{l})");
        grid_points += 1;
    }
    assert_eq!(grid_points, 1000);

    let spots: Vec<(f64, f64, usize, usize)> = (0..20)
        .map(|i| (sigmas[i % 5], deltas[i % 10].max(0.2), 1 + i % 3, 2 + i % 4))
        .collect();
    spots.par_iter().for_each(|&(s, d, n, l)| {
        let e = exact_span_prob(s, d, n, l).unwrap();
        let mut rng = StdRng::seed_from_u64(112 + (s * 10.0 + d) as u64);
        let gauss = Normal::new(0.0, s).unwrap();
        let trials = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..trials {
            let ok = (0..n).all(|_| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for _ in 0..l {
                    let x = gauss.sample(&mut rng);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                hi - lo < 2.0 * d
            });
            hits += ok as usize;
        }
        let p = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt().max(1e-9);
        assert!(
            (e - p).abs() <= 3.0 * se,
            "exact {e} vs MC {p} (se {se}) at ({s},{d},{n},{l})"
        );
    });
    pass(12, "span probability ordering on 1000-point grid and 10^6-sample MC at 20 spots");
}

/// 13. Byte-identical CSV across runs and worker counts (the wall-clock
/// `mean_runtime_ms` column is excluded from the comparison).
#[test]
fn a13_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_rcrt"))
            .args([
                "simulate", "--n", "2", "--snr-min", "-10", "--snr-max", "0", "--snr-step",
                "5", "--trials", "100", "--algo", "algo2", "--ensemble", "pairs", "--seed",
                "7", "--workers", workers, "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        let text = std::fs::read_to_string(&out).unwrap();
        // all columns except the wall-clock runtime
        text.lines()
            .map(|line| line.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let w1a = run("1", "w1a.csv");
    let w1b = run("1", "w1b.csv");
    let w8 = run("8", "w8.csv");
    assert_eq!(w1a, w1b, "repeat run differed");
    assert_eq!(w1a, w8, "worker count changed the results");
    assert_eq!(w1a.len(), 4); // header + 3 snr rows
    pass(13, "identical CSV (modulo runtime column) across repeats and workers 1/8");
}
