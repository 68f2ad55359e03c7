//! Modular and circular arithmetic primitives, conventional CRT solving, and
//! redundancy-based residue error correction.
//!
//! Everything here is a pure function; nothing holds state.

use itertools::Itertools;

use crate::error::{invalid, Result};

/// A point on the circle of circumference `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularValue {
    value: f64,
    gamma: f64,
}

impl CircularValue {
    pub fn new(value: f64, gamma: f64) -> Result<Self> {
        Ok(Self {
            value: mod_reduce(value, gamma)?,
            gamma,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Shorter-arc distance to another point on the same circle.
    pub fn dist(&self, other: &CircularValue) -> Result<f64> {
        circ_dist(self.value, other.value, self.gamma)
    }
}

/// Integer residues over pairwise-coprime moduli.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueVector {
    digits: Vec<u64>,
    moduli: Vec<u64>,
}

impl ResidueVector {
    pub fn new(digits: Vec<u64>, moduli: Vec<u64>) -> Result<Self> {
        if digits.len() != moduli.len() {
            return Err(invalid("digit and modulus counts differ"));
        }
        if moduli.iter().any(|&m| m == 0) {
            return Err(invalid("zero modulus"));
        }
        if let Some((d, m)) = digits.iter().zip(&moduli).find(|(d, m)| *d >= *m) {
            return Err(invalid(format!("digit {d} not below modulus {m}")));
        }
        Ok(Self { digits, moduli })
    }

    pub fn digits(&self) -> &[u64] {
        &self.digits
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }
}

/// Reduces `x` into `[0, m)`. The difference `x - result` is an integer
/// multiple of `m`.
pub fn mod_reduce(x: f64, m: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid("non-finite value"));
    }
    if !(m > 0.0) {
        return Err(invalid("modulus must be positive"));
    }
    Ok(wrap(x, m))
}

/// Unchecked floor-based reduction into `[0, m)`.
pub(crate) fn wrap(x: f64, m: f64) -> f64 {
    let r = x - m * (x / m).floor();
    // floor rounding can land exactly on m for tiny negative x
    if r >= m {
        r - m
    } else {
        r
    }
}

/// Signed circular deviation `a - b` wrapped into `(-m/2, m/2]`.
pub(crate) fn wrap_signed(diff: f64, m: f64) -> f64 {
    let r = wrap(diff, m);
    if r > m / 2.0 {
        r - m
    } else {
        r
    }
}

/// Shorter-arc distance `min_j |a - b + j*gamma|`, in `[0, gamma/2]`.
pub fn circ_dist(a: f64, b: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(invalid("non-finite value"));
    }
    Ok(circ(a, b, gamma))
}

pub(crate) fn circ(a: f64, b: f64, gamma: f64) -> f64 {
    wrap_signed(a - b, gamma).abs()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mod_inverse(a: u128, m: u128) -> Option<u128> {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u128)
}

/// Conventional CRT: the unique `Q` below the product of the moduli with
/// `Q mod moduli[l] = digits[l]` for every `l`.
pub fn crt_solve(rv: &ResidueVector) -> Result<u128> {
    if rv.is_empty() {
        return Err(invalid("empty residue vector"));
    }
    for (a, b) in rv.moduli().iter().tuple_combinations() {
        if gcd(*a as u128, *b as u128) != 1 {
            return Err(invalid(format!("moduli {a} and {b} are not coprime")));
        }
    }
    Ok(crt_unchecked(rv.digits(), rv.moduli()))
}

/// Garner-style incremental combination; intermediate products stay below the
/// full modulus product, so u128 suffices for the moduli sizes used here.
fn crt_unchecked(digits: &[u64], moduli: &[u64]) -> u128 {
    let mut acc = digits[0] as u128;
    let mut prod = moduli[0] as u128;
    for (&d, &m) in digits.iter().zip(moduli).skip(1) {
        let m = m as u128;
        let inv = mod_inverse(prod % m, m).expect("coprime moduli");
        let delta = ((d as u128 + m - acc % m) % m * inv) % m;
        acc += prod * delta;
        prod *= m;
    }
    acc
}

/// Outcome of redundancy-based decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EcDecode {
    /// Best candidate quotient.
    pub q: u128,
    /// Number of residues the candidate agrees with.
    pub consistency: usize,
    /// True when consistency reaches `L - floor((L - L0)/2)`, i.e. the number
    /// of disagreements is within the guaranteed correction capacity.
    pub reliable: bool,
}

/// Error-corrected quotient recovery: any `L0` residues determine a candidate,
/// the candidate agreeing with the most residues wins (ties go to the smaller
/// candidate). Up to `floor((L - L0)/2)` corrupted residues are corrected.
///
/// The admissible quotient range is the product of the `L0` smallest moduli.
pub fn ec_decode(rv: &ResidueVector, l0: usize) -> Result<EcDecode> {
    let l = rv.len();
    if l0 == 0 || l0 > l {
        return Err(invalid("L0 must satisfy 1 <= L0 <= L"));
    }
    for (a, b) in rv.moduli().iter().tuple_combinations() {
        if gcd(*a as u128, *b as u128) != 1 {
            return Err(invalid(format!("moduli {a} and {b} are not coprime")));
        }
    }
    let mut sorted: Vec<u128> = rv.moduli().iter().map(|&m| m as u128).collect();
    sorted.sort_unstable();
    let range: u128 = sorted.iter().take(l0).product();

    let mut best: Option<(u128, usize)> = None;
    for subset in (0..l).combinations(l0) {
        let digits: Vec<u64> = subset.iter().map(|&i| rv.digits()[i]).collect();
        let moduli: Vec<u64> = subset.iter().map(|&i| rv.moduli()[i]).collect();
        let cand = crt_unchecked(&digits, &moduli);
        if cand >= range {
            continue;
        }
        let consistency = rv
            .digits()
            .iter()
            .zip(rv.moduli())
            .filter(|(&d, &m)| cand % m as u128 == d as u128)
            .count();
        best = match best {
            Some((q, c)) if (c, std::cmp::Reverse(q)) >= (consistency, std::cmp::Reverse(cand)) => {
                Some((q, c))
            }
            _ => Some((cand, consistency)),
        };
    }
    let (q, consistency) = best.ok_or_else(|| invalid("no in-range CRT candidate"))?;
    Ok(EcDecode {
        q,
        consistency,
        reliable: consistency >= l - (l - l0) / 2,
    })
}
