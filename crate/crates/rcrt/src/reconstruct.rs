//! From one cluster's raw residues and a common-residue estimate to a final
//! number: quotient digit extraction, (error-corrected) CRT, and assembly
//! `Y = Q * gamma + mu`.

use crate::algo2::circular_weighted_mean;
use crate::core_arith::{crt_solve, ec_decode, wrap, wrap_signed, ResidueVector};
use crate::error::Result;
use crate::model::ModuliSet;

/// A reconstructed number with its intermediate pieces.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Common-residue estimate in `[0, gamma)`.
    pub mu_hat: f64,
    /// Quotient digits over the coprime factors.
    pub digits: ResidueVector,
    /// Recovered quotient, already reduced to the quotient range.
    pub quotient: u128,
    /// Final estimate in `[0, D)`.
    pub y_hat: f64,
    pub ec_used: bool,
    /// Residues agreeing with the recovered quotient (equals L without EC).
    pub ec_consistency: usize,
    /// False when an EC decode fell outside its guaranteed capacity.
    pub reliable: bool,
}

/// The lift of `mu_hat` (an integer number of `gamma` turns away) that the
/// digit extraction and assembly share. It is anchored at the residue closest
/// to `mu_hat` on the circle, so all digits of one cluster agree on a single
/// unwrapping even when the cluster straddles the wrap point.
pub fn mu_lift(r_row: &[f64], mu_hat: f64, gamma: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for &big_r in r_row {
        let r = wrap(big_r, gamma);
        let dev = wrap_signed(r - mu_hat, gamma);
        // the lift under which this residue sits nearest mu_hat
        let turns = ((r - dev - mu_hat) / gamma).round();
        if dev.abs() < best.0 {
            best = (dev.abs(), turns);
        }
    }
    mu_hat + best.1 * gamma
}

/// Extracts the per-sampler quotient digits `q_l = round((R_l - rho_l)/gamma)
/// mod M_l`, where `rho_l` is the wrap-consistent unwrapping of residue `l`
/// against the shared lift of `mu_hat`.
pub fn quotient_digits(r_row: &[f64], mu_hat: f64, ms: &ModuliSet) -> Result<ResidueVector> {
    let gamma = ms.gamma();
    let lift = mu_lift(r_row, mu_hat, gamma);
    let mut digits = Vec::with_capacity(r_row.len());
    for (l, &big_r) in r_row.iter().enumerate() {
        let r = wrap(big_r, gamma);
        let dev = wrap_signed(r - mu_hat, gamma);
        // R_l - (lift + dev) is an exact multiple of gamma
        let q = ((big_r - lift - dev) / gamma).round() as i128;
        let m = ms.factors()[l] as i128;
        digits.push(q.rem_euclid(m) as u64);
    }
    ResidueVector::new(digits, ms.factors().to_vec())
}

/// Solves the digits for the quotient (plain CRT, or error-corrected with the
/// redundancy `L - L0`) and assembles `Y = Q * gamma + lift` reduced into
/// `[0, D)`. `lift` must be the value returned by [`mu_lift`] for the same
/// cluster.
pub fn reconstruct_number(
    digits: &ResidueVector,
    lift: f64,
    ms: &ModuliSet,
    ec: bool,
) -> Result<Reconstruction> {
    let range = ms.quotient_range();
    let (quotient, ec_consistency, reliable) = if ec {
        let dec = ec_decode(digits, ms.l0())?;
        (dec.q % range, dec.consistency, dec.reliable)
    } else {
        (crt_solve(digits)? % range, digits.len(), true)
    };
    let gamma = ms.gamma();
    let y_hat = wrap(quotient as f64 * gamma + lift, ms.dynamic_range());
    Ok(Reconstruction {
        mu_hat: wrap(lift, gamma),
        digits: digits.clone(),
        quotient,
        y_hat,
        ec_used: ec,
        ec_consistency,
        reliable,
    })
}

/// Single-number robust CRT: weighted circular mean of the common residues,
/// digit extraction, then (error-corrected) CRT. The shared back-end for both
/// clustering algorithms and for per-group ensemble estimation.
pub fn single_rcrt(r_row: &[f64], ms: &ModuliSet, ec: bool) -> Result<Reconstruction> {
    let gamma = ms.gamma();
    let common: Vec<f64> = r_row.iter().map(|&x| wrap(x, gamma)).collect();
    let mu_hat = circular_weighted_mean(&common, ms.weights(), gamma)?;
    reconstruct_cluster(r_row, mu_hat, ms, ec)
}

/// Reconstruction from an externally supplied common-residue estimate.
///
/// With `ec` on, a decode that leaves some digits outvoted triggers up to `L`
/// retries that anchor the common-residue estimate at each observed residue
/// in turn: a corrupted residue can hijack the global circular mean, but any
/// uncorrupted anchor yields correct digits for every uncorrupted residue.
/// Candidates are ranked by reliability and consistency, with ties broken by
/// the tighter fit of the consistent residues around their own mean (a wrong
/// quotient's accidental supporters spread wider than a true cluster). The
/// winner is refined to the weighted mean of its consistent residues.
pub fn reconstruct_cluster(
    r_row: &[f64],
    mu_hat: f64,
    ms: &ModuliSet,
    ec: bool,
) -> Result<Reconstruction> {
    let first = attempt(r_row, mu_hat, ms, ec)?;
    if !ec {
        return Ok(first);
    }
    let mut best = first;
    let mut best_fit = consistent_fit(r_row, &best, ms);
    if best.ec_consistency < r_row.len() {
        for &anchor in r_row {
            let cand = attempt(r_row, wrap(anchor, ms.gamma()), ms, true)?;
            let fit = consistent_fit(r_row, &cand, ms);
            let cand_key = (cand.reliable, cand.ec_consistency);
            let best_key = (best.reliable, best.ec_consistency);
            let better = cand_key > best_key
                || (cand_key == best_key
                    && (fit.ss < best_fit.ss
                        || (fit.ss == best_fit.ss && cand.quotient < best.quotient)));
            if better {
                best = cand;
                best_fit = fit;
            }
        }
    }
    if best.reliable && best_fit.weight > 0.0 {
        let shift = best_fit.shift;
        best.mu_hat = wrap(best.mu_hat + shift, ms.gamma());
        best.y_hat = wrap(best.y_hat + shift, ms.dynamic_range());
    }
    Ok(best)
}

fn attempt(r_row: &[f64], mu_hat: f64, ms: &ModuliSet, ec: bool) -> Result<Reconstruction> {
    let digits = quotient_digits(r_row, mu_hat, ms)?;
    let lift = mu_lift(r_row, mu_hat, ms.gamma());
    reconstruct_number(&digits, lift, ms, ec)
}

struct ConsistentFit {
    /// Weighted mean deviation of the consistent residues from `mu_hat`.
    shift: f64,
    /// Weighted spread of the consistent residues about their own mean.
    ss: f64,
    weight: f64,
}

/// Fit statistics over the residues whose digits agree with the recovered
/// quotient; the outvoted residues are ignored.
fn consistent_fit(r_row: &[f64], rec: &Reconstruction, ms: &ModuliSet) -> ConsistentFit {
    let gamma = ms.gamma();
    let mut devs = Vec::with_capacity(r_row.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (l, &big_r) in r_row.iter().enumerate() {
        let expect = (rec.quotient % ms.factors()[l] as u128) as u64;
        if rec.digits.digits()[l] != expect {
            continue;
        }
        let dev = wrap_signed(wrap(big_r, gamma) - rec.mu_hat, gamma);
        let w = ms.weights()[l];
        devs.push((dev, w));
        num += w * dev;
        den += w;
    }
    if den == 0.0 {
        return ConsistentFit { shift: 0.0, ss: f64::INFINITY, weight: 0.0 };
    }
    let shift = num / den;
    let ss = devs.iter().map(|&(d, w)| w * (d - shift) * (d - shift)).sum();
    ConsistentFit { shift, ss, weight: den }
}
