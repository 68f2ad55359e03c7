//! Problem instance generation: moduli construction, ground-truth sampling,
//! and wrapped-Gaussian observation synthesis with hidden permutations.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::core_arith::wrap;
use crate::error::{invalid, Result};

/// The moduli design `m_l = gamma * M_l` together with the dynamic range and
/// per-sampler noise levels.
#[derive(Debug, Clone)]
pub struct ModuliSet {
    gamma: f64,
    m_int: Vec<u64>,
    moduli: Vec<f64>,
    /// Dynamic range expressed as an integer quotient count: D = gamma * q_range.
    q_range: u128,
    l0: usize,
    sigma: Vec<f64>,
    weights: Vec<f64>,
}

impl ModuliSet {
    /// Builds a set from explicit coprime integer factors, full dynamic range.
    pub fn new(gamma: f64, m_int: Vec<u64>) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(invalid("gamma must be positive"));
        }
        if m_int.is_empty() {
            return Err(invalid("at least one modulus required"));
        }
        let mut sorted = m_int.clone();
        sorted.sort_unstable();
        if sorted != m_int {
            return Err(invalid("moduli must be ascending"));
        }
        for i in 0..m_int.len() {
            for j in i + 1..m_int.len() {
                if gcd(m_int[i], m_int[j]) != 1 {
                    return Err(invalid(format!(
                        "moduli {} and {} are not coprime",
                        m_int[i], m_int[j]
                    )));
                }
            }
        }
        let q_range: u128 = m_int.iter().map(|&m| m as u128).product();
        let moduli = m_int.iter().map(|&m| gamma * m as f64).collect();
        let l = m_int.len();
        let mut ms = Self {
            gamma,
            m_int,
            moduli,
            q_range,
            l0: l,
            sigma: vec![0.0; l],
            weights: vec![1.0; l],
        };
        ms.l0 = ms.compute_l0();
        Ok(ms)
    }

    /// Restricts the dynamic range to `gamma` times the product of the first
    /// `prefix` factors and recomputes `L0`.
    pub fn with_prefix_range(mut self, prefix: usize) -> Result<Self> {
        if prefix == 0 || prefix > self.m_int.len() {
            return Err(invalid("prefix out of range"));
        }
        self.q_range = self.m_int[..prefix].iter().map(|&m| m as u128).product();
        self.l0 = self.compute_l0();
        Ok(self)
    }

    /// Restricts the dynamic range to an explicit quotient count.
    pub fn with_quotient_range(mut self, q_range: u128) -> Result<Self> {
        let full: u128 = self.m_int.iter().map(|&m| m as u128).product();
        if q_range == 0 || q_range > full {
            return Err(invalid("quotient range must be in [1, prod M]"));
        }
        self.q_range = q_range;
        self.l0 = self.compute_l0();
        Ok(self)
    }

    /// Applies one noise level to every sampler and derives the weights
    /// `w_l = 1 / (2 sigma_l^2)` (unit weights in the noiseless case).
    pub fn with_noise(mut self, noise: &NoiseSpec) -> Self {
        self.sigma = vec![noise.sigma(); self.len()];
        self.weights = self.sigma.iter().map(|&s| weight_for(s)).collect();
        self
    }

    pub fn with_sigmas(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.len() {
            return Err(invalid("one sigma per sampler required"));
        }
        if sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("sigma must be non-negative"));
        }
        self.weights = sigma.iter().map(|&s| weight_for(s)).collect();
        self.sigma = sigma;
        Ok(self)
    }

    /// The sub-design on the given sampler indices, keeping the dynamic range.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut pairs: Vec<usize> = idx.to_vec();
        pairs.sort_by_key(|&i| self.m_int[i]);
        let m_int: Vec<u64> = pairs.iter().map(|&i| self.m_int[i]).collect();
        let sigma: Vec<f64> = pairs.iter().map(|&i| self.sigma[i]).collect();
        let sub = Self::new(self.gamma, m_int)?;
        let q_range = self.q_range.min(sub.q_range);
        sub.with_quotient_range(q_range)?
            .with_sigmas(sigma)
    }

    /// Smallest count of the ascending factors whose product reaches the
    /// quotient range.
    fn compute_l0(&self) -> usize {
        let mut prod: u128 = 1;
        for (i, &m) in self.m_int.iter().enumerate() {
            prod *= m as u128;
            if prod >= self.q_range {
                return i + 1;
            }
        }
        self.m_int.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn factors(&self) -> &[u64] {
        &self.m_int
    }

    pub fn moduli(&self) -> &[f64] {
        &self.moduli
    }

    pub fn len(&self) -> usize {
        self.m_int.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_int.is_empty()
    }

    pub fn dynamic_range(&self) -> f64 {
        self.gamma * self.q_range as f64
    }

    pub fn quotient_range(&self) -> u128 {
        self.q_range
    }

    pub fn l0(&self) -> usize {
        self.l0
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn weight_for(sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (2.0 * sigma * sigma)
    } else {
        1.0
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// The first `count` primes that are at least `start`.
pub fn primes_from(start: u64, count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = start;
    while out.len() < count {
        if is_prime(n) {
            out.push(n);
        }
        n += 1;
    }
    out
}

/// The moduli design used throughout the experiments: `L = 2N` samplers with
/// the smallest primes at or above 21 (so 23, 29, 31, ...) as coprime factors,
/// full dynamic range.
pub fn build_moduli(n: usize, gamma: f64) -> Result<ModuliSet> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    ModuliSet::new(gamma, primes_from(21, 2 * n))
}

/// Noise level derived from an SNR in dB: `sigma^2 = 10^(-snr/10)`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    snr_db: f64,
    sigma: f64,
}

impl NoiseSpec {
    pub fn from_snr_db(snr_db: f64) -> Self {
        let sigma = if snr_db.is_infinite() && snr_db > 0.0 {
            0.0
        } else {
            10f64.powf(-snr_db / 20.0)
        };
        Self { snr_db, sigma }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            sigma: 0.0,
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// The target numbers together with their quotient/common-residue split
/// `Y_i = k_i * gamma + mu_i`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub k: Vec<u128>,
}

/// Draws `n` targets independently and uniformly from `[0, D)`.
pub fn sample_instance(ms: &ModuliSet, n: usize, rng: &mut impl Rng) -> GroundTruth {
    let d = ms.dynamic_range();
    let gamma = ms.gamma();
    let mut y = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    for _ in 0..n {
        let yi = rng.gen::<f64>() * d;
        let ki = (yi / gamma).floor().min((ms.quotient_range() - 1) as f64);
        y.push(yi);
        k.push(ki as u128);
        mu.push(yi - ki * gamma);
    }
    GroundTruth { y, mu, k }
}

/// One synthesized trial: per-sampler unordered noisy residues, with the
/// hidden truth (`true_perm`, `delta`) carried for scoring only.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    gamma: f64,
    /// `r_big[j][l]` is observation j of sampler l, in `[0, m_l)`.
    r_big: Vec<Vec<f64>>,
    /// Common residues `r[j][l] = r_big[j][l] mod gamma`.
    common: Vec<Vec<f64>>,
    /// `true_perm[l][i]` = observation index holding target i in sampler l.
    true_perm: Vec<Vec<usize>>,
    /// `delta[i][l]` = the noise drawn for target i in sampler l.
    delta: Vec<Vec<f64>>,
}

/// What an estimator is allowed to see: residues and the circle size, never
/// the hidden permutations or noises.
#[derive(Debug, Clone, Copy)]
pub struct ResidueView<'a> {
    pub gamma: f64,
    pub raw: &'a [Vec<f64>],
    pub common: &'a [Vec<f64>],
}

impl ObservationSet {
    pub fn view(&self) -> ResidueView<'_> {
        ResidueView {
            gamma: self.gamma,
            raw: &self.r_big,
            common: &self.common,
        }
    }

    pub fn n(&self) -> usize {
        self.r_big.len()
    }

    pub fn l(&self) -> usize {
        self.r_big.first().map_or(0, Vec::len)
    }

    /// Evaluation-only: the hidden assignment of targets to observations.
    pub fn true_perm(&self) -> &[Vec<usize>] {
        &self.true_perm
    }

    /// Evaluation-only: the hidden noise draws.
    pub fn delta(&self) -> &[Vec<f64>] {
        &self.delta
    }

    /// Restricts to a subset of samplers (columns).
    pub fn columns(&self, idx: &[usize]) -> ObservationSet {
        let pick = |rows: &[Vec<f64>]| {
            rows.iter()
                .map(|row| idx.iter().map(|&l| row[l]).collect())
                .collect()
        };
        ObservationSet {
            gamma: self.gamma,
            r_big: pick(&self.r_big),
            common: pick(&self.common),
            true_perm: idx.iter().map(|&l| self.true_perm[l].clone()).collect(),
            delta: pick(&self.delta),
        }
    }

    fn from_raw(gamma: f64, r_big: Vec<Vec<f64>>) -> Self {
        let common = r_big
            .iter()
            .map(|row| row.iter().map(|&x| wrap(x, gamma)).collect())
            .collect();
        let l = r_big.first().map_or(0, Vec::len);
        let n = r_big.len();
        ObservationSet {
            gamma,
            r_big,
            common,
            true_perm: vec![(0..n).collect(); l],
            delta: vec![vec![0.0; l]; n],
        }
    }
}

/// Synthesizes observations: i.i.d. Gaussian noise per sampler and an
/// independent uniform hidden permutation per sampler.
pub fn observe(
    gt: &GroundTruth,
    ms: &ModuliSet,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> ObservationSet {
    let n = gt.y.len();
    let l = ms.len();
    let gamma = ms.gamma();
    let sigma = noise.sigma();

    let mut delta = vec![vec![0.0f64; l]; n];
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for row in &mut delta {
            for d in row.iter_mut() {
                *d = normal.sample(rng);
            }
        }
    }

    let mut r_big = vec![vec![0.0f64; l]; n];
    let mut common = vec![vec![0.0f64; l]; n];
    let mut true_perm = Vec::with_capacity(l);
    for li in 0..l {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for i in 0..n {
            let val = wrap(gt.y[i] + delta[i][li], ms.moduli()[li]);
            r_big[perm[i]][li] = val;
            common[perm[i]][li] = wrap(val, gamma);
        }
        true_perm.push(perm);
    }

    ObservationSet {
        gamma,
        r_big,
        common,
        true_perm,
        delta,
    }
}

/// On-disk shape of an observation set, consumed by the CLI `solve` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationFile {
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: Vec<u64>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

impl ObservationFile {
    pub fn from_observations(ms: &ModuliSet, obs: &ObservationSet) -> Self {
        Self {
            gamma: ms.gamma(),
            m: ms.factors().to_vec(),
            r: obs.r_big.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(ModuliSet, ObservationSet)> {
        let ms = ModuliSet::new(self.gamma, self.m)?;
        if self.r.iter().any(|row| row.len() != ms.len()) {
            return Err(invalid("each observation row must have one entry per modulus"));
        }
        let obs = ObservationSet::from_raw(self.gamma, self.r);
        Ok((ms, obs))
    }
}
