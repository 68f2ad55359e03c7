//! Statistical robust CRT: reconstruction of multiple real numbers from
//! unordered, noise-corrupted residue sets.
//!
//! Each of `L` samplers reports the residues of `N` unknown reals modulo
//! `m_l = gamma * M_l`, without saying which residue belongs to which number
//! and with additive Gaussian noise. Because every modulus shares the factor
//! `gamma`, all residues of one number agree modulo `gamma`; clustering the
//! observations on that circle recovers the hidden correspondence, and the
//! per-sampler quotients then yield the numbers through the Chinese remainder
//! theorem.
//!
//! ```
//! use rcrt::{build_moduli, single_rcrt};
//!
//! let ms = build_moduli(1, 100.0).unwrap(); // factors 23, 29
//! let y = 12345.0;
//! let residues: Vec<f64> = ms.moduli().iter().map(|&m| y % m).collect();
//! let rec = single_rcrt(&residues, &ms, false).unwrap();
//! assert!((rec.y_hat - y).abs() < 1e-9);
//! ```

pub mod algo1;
pub mod algo2;
pub mod core_arith;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod model;
pub mod reconstruct;

pub use algo1::{algo1_cluster, ClusterAssignment, CutState, ObjectiveMode};
pub use algo2::{algo2_from, algo2_iterate, circular_weighted_mean, match_sampler, IterState};
pub use core_arith::{circ_dist, crt_solve, ec_decode, mod_reduce, ResidueVector};
pub use ensemble::{
    bound_span_prob, chernoff_success, exact_span_prob, group_moduli, vote_estimates,
    EnsembleConfig, GroupPolicy, VoteOutcome,
};
pub use error::{Error, Result};
pub use harness::{
    oracle_map_cluster, run_experiment, run_trial, score_success, solve_ensemble, solve_set,
    trial_rng, Algorithm, ExperimentConfig, Metrics, SolveOptions, TrialResult,
};
pub use model::{
    build_moduli, observe, primes_from, sample_instance, GroundTruth, ModuliSet, NoiseSpec,
    ObservationFile, ObservationSet,
};
pub use reconstruct::{quotient_digits, reconstruct_number, single_rcrt, Reconstruction};

/// Keeps the guide's code blocks compiling; each struct's doc is one book
/// chapter, tested by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/residues-and-moduli.md")]
    struct ResiduesAndModuli;
    #[doc = include_str!("../../../book/src/clustering.md")]
    struct Clustering;
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    struct Reconstruction;
    #[doc = include_str!("../../../book/src/ensembles.md")]
    struct Ensembles;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
