//! Likelihoods for lossy two-photon counting experiments.
//!
//! A photon pair is destined to joint outcome `ij` with probability `p_ij`;
//! Alice's photon then survives with probability `a_i` and Bob's with `b_j`.
//! The observed data per basis pair are the singles `A_i`, `B_j` and the
//! coincidences `c_ij`. When the pair count `N` is unknown it is summed out
//! analytically, leaving a closed-form likelihood in `p` and the
//! efficiencies alone.
//!
//! Every function returns a natural log with `-inf` for impossible data.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::{self, CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::sampler::{LogDensity, ParamSpec, PosteriorSamples};

/// `1 - g` below this is treated as certain pair loss.
const PAIR_LOSS_CEILING: f64 = 1e-15;

/// `k ln v` with `0 ln 0 = 0` and `-inf` for a positive multiplicity of an
/// impossible event.
#[inline]
pub fn xlogy(k: f64, v: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else if v > 0.0 {
        k * v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];

    /// Unitary applied before a computational-basis measurement.
    fn rotation(self) -> [[Complex64; 2]; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| Complex64::new(re, im);
        match self {
            Basis::Z => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
            Basis::X => [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]],
            // H . Q with the quarter-wave phase taken as diag(1, -i), so outcome 0
            // is the +1 eigenstate of sigma_y, matching the single-qubit Y basis
            Basis::Y => [[c(s, 0.0), c(0.0, -s)], [c(s, 0.0), c(0.0, s)]],
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Basis::Z => "Z",
            Basis::X => "X",
            Basis::Y => "Y",
        };
        f.write_str(s)
    }
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            "Y" | "y" => Ok(Basis::Y),
            other => Err(Error::Parse(format!("unknown basis '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisPair {
    pub alice: Basis,
    pub bob: Basis,
}

impl BasisPair {
    pub fn new(alice: Basis, bob: Basis) -> Self {
        Self { alice, bob }
    }

    /// All nine pairs.
    pub fn all() -> Vec<BasisPair> {
        Basis::ALL
            .iter()
            .flat_map(|a| Basis::ALL.iter().map(move |b| BasisPair::new(*a, *b)))
            .collect()
    }
}

impl fmt::Display for BasisPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.alice, self.bob)
    }
}

impl FromStr for BasisPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => Ok(BasisPair::new(a.to_string().parse()?, b.to_string().parse()?)),
            _ => Err(Error::Parse(format!("basis pair '{s}' is not two letters"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleBasisCounts {
    #[serde(rename = "A0")]
    pub a0: u64,
    #[serde(rename = "A1")]
    pub a1: u64,
    #[serde(rename = "B0")]
    pub b0: u64,
    #[serde(rename = "B1")]
    pub b1: u64,
    #[serde(default)]
    pub c00: u64,
    #[serde(default)]
    pub c01: u64,
    #[serde(default)]
    pub c10: u64,
    #[serde(default)]
    pub c11: u64,
}

impl SingleBasisCounts {
    #[allow(clippy::too_many_arguments)]
    pub fn new(a0: u64, a1: u64, b0: u64, b1: u64, c00: u64, c01: u64, c10: u64, c11: u64) -> Result<Self> {
        let c = Self::new_unchecked(a0, a1, b0, b1, c00, c01, c10, c11);
        c.validate()?;
        Ok(c)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_unchecked(a0: u64, a1: u64, b0: u64, b1: u64, c00: u64, c01: u64, c10: u64, c11: u64) -> Self {
        Self {
            a0,
            a1,
            b0,
            b1,
            c00,
            c01,
            c10,
            c11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.c00 + self.c01, self.a0, "c00 + c01 > A0"),
            (self.c10 + self.c11, self.a1, "c10 + c11 > A1"),
            (self.c00 + self.c10, self.b0, "c00 + c10 > B0"),
            (self.c01 + self.c11, self.b1, "c01 + c11 > B1"),
        ];
        for (coinc, singles, msg) in checks {
            if coinc > singles {
                return Err(Error::InvalidCounts(format!("{msg} ({coinc} > {singles})")));
            }
        }
        Ok(())
    }

    /// Total singles `s`.
    pub fn s(&self) -> u64 {
        self.a0 + self.a1 + self.b0 + self.b1
    }

    /// Total coincidences `n`.
    pub fn n(&self) -> u64 {
        self.c00 + self.c01 + self.c10 + self.c11
    }

    pub fn coincidences(&self) -> [u64; 4] {
        [self.c00, self.c01, self.c10, self.c11]
    }

    /// Events where only Alice (outcome 0, 1) or only Bob (outcome 0, 1)
    /// registered a photon. Negative for inconsistent records.
    pub fn single_only(&self) -> [i64; 4] {
        let i = |v: u64| v as i64;
        [
            i(self.a0) - i(self.c00) - i(self.c01),
            i(self.a1) - i(self.c10) - i(self.c11),
            i(self.b0) - i(self.c00) - i(self.c10),
            i(self.b1) - i(self.c01) - i(self.c11),
        ]
    }

    /// Minimum number of pairs consistent with the record, `s - n`.
    pub fn min_pairs(&self) -> i64 {
        self.s() as i64 - self.n() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwayEfficiencies {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
}

impl PathwayEfficiencies {
    pub fn new(a0: f64, a1: f64, b0: f64, b1: f64) -> Result<Self> {
        let e = Self { a0, a1, b0, b1 };
        if let Some(v) = e.as_array().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("efficiency {v} outside [0, 1]")));
        }
        Ok(e)
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::new(v, v, v, v)
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a0, a1, b0, b1] => Self::new(*a0, *a1, *b0, *b1),
            _ => Err(Error::Dimension(format!("need 4 efficiencies, got {}", v.len()))),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a0, self.a1, self.b0, self.b1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointProbabilities {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl JointProbabilities {
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self> {
        let p = Self { p00, p01, p10, p11 };
        let a = p.as_array();
        if a.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::OutOfRange(format!("negative probability in {a:?}")));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::OutOfRange(format!("probabilities sum to {sum}")));
        }
        Ok(p)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }
}

// Rows of U_A (x) U_B for each basis pair; p_k = Re(u_k rho u_k^dagger).
fn pair_rotation(pair: BasisPair) -> [[Complex64; 4]; 4] {
    let ua = pair.alice.rotation();
    let ub = pair.bob.rotation();
    let mut u = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    u[2 * i + j][2 * k + l] = ua[i][k] * ub[j][l];
                }
            }
        }
    }
    u
}

fn rotations() -> &'static BTreeMap<BasisPair, [[Complex64; 4]; 4]> {
    static R: OnceLock<BTreeMap<BasisPair, [[Complex64; 4]; 4]>> = OnceLock::new();
    R.get_or_init(|| BasisPair::all().into_iter().map(|p| (p, pair_rotation(p))).collect())
}

/// Outcome probabilities `[p00, p01, p10, p11]` (index `2 i + j`, Alice
/// first) without validation. Tiny negative rounding residue is clipped.
pub fn outcome_probabilities(rho: &CMatrix, pair: BasisPair) -> [f64; 4] {
    let u = &rotations()[&pair];
    let mut p = [0.0; 4];
    for (k, row) in u.iter().enumerate() {
        let mut acc = 0.0;
        for a in 0..4 {
            let mut t = Complex64::new(0.0, 0.0);
            for b in 0..4 {
                t += rho[(a, b)] * row[b].conj();
            }
            acc += (row[a] * t).re;
        }
        p[k] = acc.max(0.0);
    }
    p
}

pub fn joint_outcome_probabilities(rho: &DensityMatrix, alice: Basis, bob: Basis) -> Result<JointProbabilities> {
    if rho.dim() != 4 {
        return Err(Error::Dimension(format!(
            "joint outcomes need a 4x4 state, got {}x{}",
            rho.dim(),
            rho.dim()
        )));
    }
    let p = outcome_probabilities(rho.matrix(), BasisPair::new(alice, bob));
    Ok(JointProbabilities {
        p00: p[0],
        p01: p[1],
        p10: p[2],
        p11: p[3],
    })
}

/// Probability that both photons of a pair are lost, `g`.
pub fn pair_loss_probability(p: &JointProbabilities, eff: &PathwayEfficiencies) -> f64 {
    pair_loss(&p.as_array(), &eff.as_array())
}

#[inline]
fn pair_loss(p: &[f64; 4], e: &[f64; 4]) -> f64 {
    let (a0, a1, b0, b1) = (1.0 - e[0], 1.0 - e[1], 1.0 - e[2], 1.0 - e[3]);
    p[0] * a0 * b0 + p[1] * a0 * b1 + p[2] * a1 * b0 + p[3] * a1 * b1
}

/// `1 - g` summed term by term, so it keeps full relative precision when
/// every efficiency is tiny and `g` rounds to 1.
#[inline]
fn pair_detection(p: &[f64; 4], e: &[f64; 4]) -> f64 {
    let either = |a: f64, b: f64| a + b * (1.0 - a);
    p[0] * either(e[0], e[2]) + p[1] * either(e[0], e[3]) + p[2] * either(e[1], e[2]) + p[3] * either(e[1], e[3])
}

// Probabilities of Alice-only (0, 1) and Bob-only (0, 1) events, each
// without the surviving photon's own efficiency factor.
#[inline]
fn single_brackets(p: &[f64; 4], e: &[f64; 4]) -> [f64; 4] {
    [
        p[0] * (1.0 - e[2]) + p[1] * (1.0 - e[3]),
        p[2] * (1.0 - e[2]) + p[3] * (1.0 - e[3]),
        p[0] * (1.0 - e[0]) + p[2] * (1.0 - e[1]),
        p[1] * (1.0 - e[0]) + p[3] * (1.0 - e[1]),
    ]
}

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Full log of `P(D, N | alpha)` including the multinomial coefficient.
pub fn log_likelihood_known_n(
    counts: &SingleBasisCounts,
    n_pairs: u64,
    p: &JointProbabilities,
    eff: &PathwayEfficiencies,
) -> Result<f64> {
    let k = counts.min_pairs();
    if (n_pairs as i64) < k {
        return Err(Error::Domain(format!("N = {n_pairs} is below s - n = {k}")));
    }
    let only = counts.single_only();
    if only.iter().any(|v| *v < 0) {
        return Err(Error::InvalidCounts(
            "coincidences exceed singles; known-N likelihood undefined".into(),
        ));
    }
    Ok(known_n_unchecked(counts, n_pairs, &p.as_array(), &eff.as_array()))
}

fn known_n_unchecked(counts: &SingleBasisCounts, n_pairs: u64, p: &[f64; 4], e: &[f64; 4]) -> f64 {
    let only = counts.single_only();
    let lost = n_pairs - counts.min_pairs() as u64;
    let c = counts.coincidences();
    let mut ln_gamma_n = ln_factorial(n_pairs) - ln_factorial(lost);
    for v in only {
        ln_gamma_n -= ln_factorial(v as u64);
    }
    for v in c {
        ln_gamma_n -= ln_factorial(v);
    }
    let eff_a = [e[0], e[0], e[1], e[1]];
    let eff_b = [e[2], e[3], e[2], e[3]];
    let mut v = ln_gamma_n;
    for k in 0..4 {
        v += xlogy(c[k] as f64, eff_a[k] * eff_b[k] * p[k]);
    }
    let br = single_brackets(p, e);
    let own = [e[0], e[1], e[2], e[3]];
    for k in 0..4 {
        v += xlogy(only[k] as f64, own[k] * br[k]);
    }
    v + xlogy(lost as f64, pair_loss(p, e))
}

/// Log-likelihood with the pair count summed out. Additive constants that
/// depend only on the counts are dropped.
pub fn log_likelihood_marginal_n(counts: &SingleBasisCounts, p: &JointProbabilities, eff: &PathwayEfficiencies) -> f64 {
    marginal_unchecked(counts, &p.as_array(), &eff.as_array())
}

#[inline]
pub(crate) fn marginal_unchecked(counts: &SingleBasisCounts, p: &[f64; 4], e: &[f64; 4]) -> f64 {
    let detected = pair_detection(p, e);
    if detected < PAIR_LOSS_CEILING {
        return f64::NEG_INFINITY;
    }
    let singles = [counts.a0, counts.a1, counts.b0, counts.b1];
    let c = counts.coincidences();
    let only = counts.single_only();
    let mut v = 0.0;
    for k in 0..4 {
        v += xlogy(singles[k] as f64, e[k]);
        v += xlogy(c[k] as f64, p[k]);
    }
    let br = single_brackets(p, e);
    for k in 0..4 {
        v += xlogy(only[k] as f64, br[k]);
    }
    let exponent = counts.n() as f64 - counts.s() as f64 - 1.0;
    v + exponent * detected.ln()
}

/// Posterior mean and standard deviation of the pair count, using
/// `E[N | alpha] = (s - n + g) / (1 - g)` for each sample.
pub fn mean_photon_number_with<F>(
    samples: &PosteriorSamples,
    counts: &SingleBasisCounts,
    alpha: F,
) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> ([f64; 4], [f64; 4]),
{
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    let k = counts.min_pairs() as f64;
    let vals: Vec<f64> = samples
        .points
        .iter()
        .map(|x| {
            let (p, e) = alpha(x);
            (k + pair_loss(&p, &e)) / pair_detection(&p, &e)
        })
        .collect();
    let mean = crate::stats::mean(&vals);
    let sd = if vals.len() > 1 {
        crate::stats::std_dev(&vals)
    } else {
        0.0
    };
    Ok((mean, sd))
}

/// Mean pair count for samples drawn from a [`SimplexModel`].
pub fn mean_photon_number(samples: &PosteriorSamples, counts: &SingleBasisCounts) -> Result<(f64, f64)> {
    mean_photon_number_with(samples, counts, SimplexModel::alpha)
}

/// Single-basis posterior over the probability simplex and the four
/// efficiencies, flat prior. Coordinates: `p00, p01, p10, a0, a1, b0, b1`
/// with `p11 = 1 - p00 - p01 - p10`.
pub struct SimplexModel {
    counts: SingleBasisCounts,
    specs: Vec<ParamSpec>,
}

impl SimplexModel {
    pub fn new(counts: SingleBasisCounts) -> Self {
        let specs = ["p00", "p01", "p10", "a0", "a1", "b0", "b1"]
            .iter()
            .map(|n| ParamSpec::bounded(*n, 0.0, 1.0))
            .collect();
        Self { counts, specs }
    }

    pub fn counts(&self) -> &SingleBasisCounts {
        &self.counts
    }

    pub fn alpha(x: &[f64]) -> ([f64; 4], [f64; 4]) {
        let p11 = (1.0 - x[0] - x[1] - x[2]).max(0.0);
        ([x[0], x[1], x[2], p11], [x[3], x[4], x[5], x[6]])
    }
}

impl LogDensity for SimplexModel {
    fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if x[0] + x[1] + x[2] > 1.0 + 1e-12 {
            return f64::NEG_INFINITY;
        }
        let (p, e) = Self::alpha(x);
        marginal_unchecked(&self.counts, &p, &e)
    }

    fn conditional_bounds(&self, x: &[f64], i: usize) -> (f64, f64) {
        if i < 3 {
            let others: f64 = (0..3).filter(|j| *j != i).map(|j| x[j]).sum();
            (0.0, (1.0 - others).max(0.0))
        } else {
            (0.0, 1.0)
        }
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        // flat Dirichlet draw for the simplex coordinates
        let g: Vec<f64> = (0..4).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = g.iter().sum();
        let mut x: Vec<f64> = g[..3].iter().map(|v| v / s).collect();
        x.extend((0..4).map(|_| rng.random::<f64>()));
        x
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyMode {
    /// One set of four efficiencies for every basis pair.
    #[default]
    Shared,
    /// Independent efficiencies per basis pair.
    PerBasis,
}

impl FromStr for EfficiencyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "per_basis" | "per-basis" => Ok(Self::PerBasis),
            other => Err(Error::Parse(format!("unknown efficiency mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisRecord {
    pub counts: SingleBasisCounts,
    /// Pair count, when the source is calibrated.
    pub known_n: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyDataset {
    pub efficiency_mode: EfficiencyMode,
    records: BTreeMap<BasisPair, BasisRecord>,
    /// Detector background with the source blocked; stored but unused.
    pub dark: Option<SingleBasisCounts>,
    /// Validation problems tolerated on load.
    pub warnings: Vec<String>,
}

impl TomographyDataset {
    pub fn new(efficiency_mode: EfficiencyMode) -> Self {
        Self {
            efficiency_mode,
            records: BTreeMap::new(),
            dark: None,
            warnings: Vec::new(),
        }
    }

    pub fn insert(&mut self, pair: BasisPair, counts: SingleBasisCounts, known_n: Option<u64>) -> Result<()> {
        counts
            .validate()
            .map_err(|e| Error::InvalidCounts(format!("basis {pair}: {e}")))?;
        self.insert_unchecked(pair, counts, known_n)
    }

    fn insert_unchecked(&mut self, pair: BasisPair, counts: SingleBasisCounts, known_n: Option<u64>) -> Result<()> {
        if let Some(n) = known_n {
            if (n as i64) < counts.min_pairs() {
                return Err(Error::InvalidCounts(format!(
                    "basis {pair}: known N = {n} below s - n = {}",
                    counts.min_pairs()
                )));
            }
        }
        if self.records.insert(pair, BasisRecord { counts, known_n }).is_some() {
            return Err(Error::InvalidCounts(format!("duplicate basis {pair}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in canonical basis order.
    pub fn records(&self) -> impl Iterator<Item = (&BasisPair, &BasisRecord)> {
        self.records.iter()
    }

    pub fn get(&self, pair: &BasisPair) -> Option<&BasisRecord> {
        self.records.get(pair)
    }

    pub fn with_mode(mut self, mode: EfficiencyMode) -> Self {
        self.efficiency_mode = mode;
        self
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let bases: Vec<DatasetRecordJson> = self
            .records
            .iter()
            .map(|(pair, r)| DatasetRecordJson {
                alice: pair.alice,
                bob: pair.bob,
                counts: r.counts,
                known_n: r.known_n,
            })
            .collect();
        serde_json::to_value(DatasetJson {
            efficiency_mode: self.efficiency_mode,
            bases,
            dark: self.dark,
        })
        .expect("dataset serializes")
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("dataset serializes");
        s.push('\n');
        s
    }

    /// Parses the JSON dataset format. With `allow_inconsistent`, records
    /// whose coincidences exceed their singles are kept and reported in
    /// [`TomographyDataset::warnings`].
    pub fn from_json_str(s: &str, allow_inconsistent: bool) -> Result<Self> {
        let raw: DatasetJson = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let mut ds = TomographyDataset::new(raw.efficiency_mode);
        for (row, r) in raw.bases.into_iter().enumerate() {
            let pair = BasisPair::new(r.alice, r.bob);
            ds.add_checked(pair, r.counts, r.known_n, allow_inconsistent)
                .map_err(|e| Error::InvalidCounts(format!("record {}: {e}", row + 1)))?;
        }
        ds.dark = raw.dark;
        ds.require_nonempty()?;
        Ok(ds)
    }

    /// Parses Table-2 shaped CSV: `Basis,A0,A1,B0,B1,c00,c01,c10,c11`, with an
    /// optional header and an optional `Dark` row.
    pub fn from_csv_str(s: &str, mode: EfficiencyMode, allow_inconsistent: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(s.as_bytes());
        let mut ds = TomographyDataset::new(mode);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let label = rec.get(0).unwrap_or("");
            if line == 0 && label.eq_ignore_ascii_case("basis") {
                continue;
            }
            if rec.len() != 9 {
                return Err(Error::Parse(format!(
                    "row {}: expected 9 columns, found {}",
                    line + 1,
                    rec.len()
                )));
            }
            let mut v = [0u64; 8];
            for (k, slot) in v.iter_mut().enumerate() {
                let field = &rec[k + 1];
                *slot = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: '{field}' is not a count", line + 1)))?;
            }
            let counts = SingleBasisCounts::new_unchecked(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
            if label.eq_ignore_ascii_case("dark") {
                ds.dark = Some(counts);
                continue;
            }
            let pair: BasisPair = label
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
            ds.add_checked(pair, counts, None, allow_inconsistent)
                .map_err(|e| Error::InvalidCounts(format!("row {}: {e}", line + 1)))?;
        }
        ds.require_nonempty()?;
        Ok(ds)
    }

    /// Loads `.json` or `.csv` by extension.
    pub fn load(path: &Path, mode_override: Option<EfficiencyMode>, allow_inconsistent: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_csv = path.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false);
        let ds = if is_csv {
            Self::from_csv_str(
                &text,
                mode_override.unwrap_or(EfficiencyMode::PerBasis),
                allow_inconsistent,
            )?
        } else {
            Self::from_json_str(&text, allow_inconsistent)?
        };
        Ok(match mode_override {
            Some(m) => ds.with_mode(m),
            None => ds,
        })
    }

    fn add_checked(
        &mut self,
        pair: BasisPair,
        counts: SingleBasisCounts,
        known_n: Option<u64>,
        allow: bool,
    ) -> Result<()> {
        match counts.validate() {
            Ok(()) => self.insert_unchecked(pair, counts, known_n),
            Err(e) if allow => {
                self.warnings.push(format!("basis {pair}: {e}"));
                self.insert_unchecked(pair, counts, known_n)
            }
            Err(e) => Err(Error::InvalidCounts(format!("basis {pair}: {e}"))),
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.records.is_empty() {
            Err(Error::InvalidCounts("dataset has no basis records".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecordJson {
    alice: Basis,
    bob: Basis,
    #[serde(flatten)]
    counts: SingleBasisCounts,
    #[serde(rename = "known_N", default, skip_serializing_if = "Option::is_none")]
    known_n: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    efficiency_mode: EfficiencyMode,
    bases: Vec<DatasetRecordJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dark: Option<SingleBasisCounts>,
}

/// Prior over the state parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePrior {
    /// Haar-invariant measure.
    Haar,
    /// Flat in the hyperspherical coordinates.
    FlatTau,
    /// No prior; the target is the likelihood alone.
    None,
}

impl StatePrior {
    pub fn log_prior(self, x: &[f64]) -> f64 {
        match self {
            StatePrior::Haar => density::log_haar_density(4, x),
            StatePrior::FlatTau | StatePrior::None => 0.0,
        }
    }
}

/// Two-qubit posterior over the state and pathway efficiencies.
///
/// Coordinates: the 15 state parameters, then four efficiencies per group
/// (one group when shared, one per record in canonical order otherwise).
pub struct TomographyModel {
    records: Vec<(BasisPair, BasisRecord)>,
    mode: EfficiencyMode,
    prior: StatePrior,
    specs: Vec<ParamSpec>,
    rotations: Vec<[[Complex64; 4]; 4]>,
}

pub const STATE_PARAMS: usize = 15;

impl TomographyModel {
    pub fn new(dataset: &TomographyDataset, prior: StatePrior) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidCounts("dataset has no basis records".into()));
        }
        let records: Vec<(BasisPair, BasisRecord)> = dataset.records().map(|(p, r)| (*p, *r)).collect();
        let mut specs = density::param_specs(4);
        match dataset.efficiency_mode {
            EfficiencyMode::Shared => {
                for n in ["a0", "a1", "b0", "b1"] {
                    specs.push(ParamSpec::bounded(n, 0.0, 1.0));
                }
            }
            EfficiencyMode::PerBasis => {
                for (pair, _) in &records {
                    for n in ["a0", "a1", "b0", "b1"] {
                        specs.push(ParamSpec::bounded(format!("{pair}.{n}"), 0.0, 1.0));
                    }
                }
            }
        }
        let rotations = records.iter().map(|(p, _)| pair_rotation(*p)).collect();
        Ok(Self {
            records,
            mode: dataset.efficiency_mode,
            prior,
            specs,
            rotations,
        })
    }

    pub fn prior(&self) -> StatePrior {
        self.prior
    }

    pub fn mode(&self) -> EfficiencyMode {
        self.mode
    }

    pub fn record_pairs(&self) -> Vec<BasisPair> {
        self.records.iter().map(|(p, _)| *p).collect()
    }

    /// Rejects data for which the posterior cannot be normalized.
    ///
    /// Scaling one efficiency group by λ → 0 multiplies a marginal-N record
    /// by λ^(n-1) and a known-N record by λ^s, and the uniform prior on the
    /// four-dimensional box contributes λ^3 dλ. If the total power is -1 or
    /// less the posterior mass near zero efficiency diverges and no mean
    /// exists. Sparse data with few coincidences spread over many bases
    /// sharing one efficiency group hit this.
    pub fn ensure_proper(&self) -> Result<()> {
        let groups = match self.mode {
            EfficiencyMode::Shared => 1,
            EfficiencyMode::PerBasis => self.records.len(),
        };
        for g in 0..groups {
            let in_group = |r: usize| self.mode == EfficiencyMode::Shared || r == g;
            let power: i64 = 3 + self
                .records
                .iter()
                .enumerate()
                .filter(|(r, _)| in_group(*r))
                .map(|(_, (_, rec))| match rec.known_n {
                    Some(_) => rec.counts.s() as i64,
                    None => rec.counts.n() as i64 - 1,
                })
                .sum::<i64>();
            if power <= -1 {
                return Err(Error::Undefined(format!(
                    "posterior is improper: density ~ lambda^{power} as the efficiencies shrink to zero \
                     (too few coincidences for the number of bases sharing efficiencies)"
                )));
            }
        }
        Ok(())
    }

    fn eff_offset(&self, record: usize) -> usize {
        match self.mode {
            EfficiencyMode::Shared => STATE_PARAMS,
            EfficiencyMode::PerBasis => STATE_PARAMS + 4 * record,
        }
    }

    /// Efficiencies used for record `r` at point `x`.
    pub fn efficiencies(&self, x: &[f64], r: usize) -> [f64; 4] {
        let o = self.eff_offset(r);
        [x[o], x[o + 1], x[o + 2], x[o + 3]]
    }

    fn record_log_likelihood(&self, r: usize, p: &[f64; 4], e: &[f64; 4]) -> f64 {
        let rec = &self.records[r].1;
        match rec.known_n {
            Some(n) => {
                if rec.counts.single_only().iter().any(|v| *v < 0) {
                    f64::NEG_INFINITY
                } else {
                    known_n_unchecked(&rec.counts, n, p, e)
                }
            }
            None => marginal_unchecked(&rec.counts, p, e),
        }
    }

    /// Outcome probabilities of every record at state parameters `tau`.
    pub fn probabilities(&self, tau: &[f64]) -> Vec<[f64; 4]> {
        // p_k = || row k of U L ||^2, which is never negative
        let l = density::cholesky4_from_flat(&tau[..STATE_PARAMS]);
        self.rotations
            .iter()
            .map(|u| {
                let mut p = [0.0; 4];
                for (k, row) in u.iter().enumerate() {
                    for j in 0..4 {
                        let mut t = Complex64::new(0.0, 0.0);
                        for a in j..4 {
                            t += row[a] * l[a][j];
                        }
                        p[k] += t.norm_sqr();
                    }
                }
                p
            })
            .collect()
    }

    /// Sum of per-record log-likelihoods, without the prior.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let probs = self.probabilities(x);
        self.likelihood_from_probs(x, &probs)
    }

    fn likelihood_from_probs(&self, x: &[f64], probs: &[[f64; 4]]) -> f64 {
        let mut v = 0.0;
        for (r, p) in probs.iter().enumerate() {
            v += self.record_log_likelihood(r, p, &self.efficiencies(x, r));
            if v == f64::NEG_INFINITY {
                break;
            }
        }
        v
    }

    /// Pair-count posterior for record `r` from samples of this model.
    pub fn mean_photon_number(&self, samples: &PosteriorSamples, r: usize) -> Result<(f64, f64)> {
        let counts = self.records[r].1.counts;
        let pair = self.records[r].0;
        mean_photon_number_with(samples, &counts, |x| {
            let rho = density::density_from_flat(4, &x[..STATE_PARAMS]);
            (outcome_probabilities(&rho, pair), self.efficiencies(x, r))
        })
    }
}

impl LogDensity for TomographyModel {
    fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let prior = self.prior.log_prior(&x[..STATE_PARAMS]);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        prior + self.log_likelihood(x)
    }

    fn conditional<'a>(&'a self, x: &[f64], i: usize) -> Box<dyn Fn(f64) -> f64 + Send + 'a> {
        let base = x.to_vec();
        if i < STATE_PARAMS {
            return Box::new(move |v| {
                let mut y = base.clone();
                y[i] = v;
                self.log_density(&y)
            });
        }
        // efficiencies leave the state, and hence the probabilities, fixed
        let probs = self.probabilities(x);
        match self.mode {
            EfficiencyMode::Shared => Box::new(move |v| {
                let mut y = base.clone();
                y[i] = v;
                self.likelihood_from_probs(&y, &probs)
            }),
            EfficiencyMode::PerBasis => {
                let r = (i - STATE_PARAMS) / 4;
                let p = probs[r];
                Box::new(move |v| {
                    let mut e = self.efficiencies(&base, r);
                    e[(i - STATE_PARAMS) % 4] = v;
                    self.record_log_likelihood(r, &p, &e)
                })
            }
        }
    }
}

/// Posterior mean state of the two-qubit model, with the pooled samples.
pub fn bayesian_mean(
    dataset: &TomographyDataset,
    prior: StatePrior,
    config: &crate::sampler::BurnInConfig,
    seed: u64,
) -> Result<(DensityMatrix, PosteriorSamples)> {
    let model = TomographyModel::new(dataset, prior)?;
    model.ensure_proper()?;
    let samples = crate::sampler::run_chains(&model, config, seed)?;
    let rho = crate::sampler::posterior_mean_density(&samples, 4)?;
    Ok((rho, samples))
}

/// Efficiency input for [`multi_basis_log_posterior`].
#[derive(Clone, Debug)]
pub enum EfficiencyInput {
    Shared(PathwayEfficiencies),
    PerBasis(Vec<PathwayEfficiencies>),
}

/// Log-likelihood summed over basis pairs plus the log Haar measure.
pub fn multi_basis_log_posterior(
    dataset: &TomographyDataset,
    tau: &density::HypersphericalParams,
    eff: &EfficiencyInput,
) -> Result<f64> {
    if tau.dim() != 4 {
        return Err(Error::Dimension("two-qubit posterior needs n = 4".into()));
    }
    let model = TomographyModel::new(dataset, StatePrior::Haar)?;
    let mut x = tau.to_flat();
    match (eff, dataset.efficiency_mode) {
        (EfficiencyInput::Shared(e), EfficiencyMode::Shared) => x.extend(e.as_array()),
        (EfficiencyInput::PerBasis(es), EfficiencyMode::PerBasis) if es.len() == dataset.len() => {
            for e in es {
                x.extend(e.as_array());
            }
        }
        _ => {
            return Err(Error::Dimension(
                "efficiencies do not match the dataset's efficiency mode".into(),
            ))
        }
    }
    Ok(model.log_density(&x))
}

/// Counts rescaled so every outcome appears with the smallest efficiencies
/// on both sides, `k_ij = a_m b_m / (a_i b_j) c_ij`.
pub fn traditional_corrected_counts(counts: &SingleBasisCounts, eff: &PathwayEfficiencies) -> Result<[f64; 4]> {
    let e = eff.as_array();
    if e.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("efficiency correction needs all efficiencies > 0".into()));
    }
    let am = e[0].min(e[1]);
    let bm = e[2].min(e[3]);
    let c = counts.coincidences();
    let ea = [e[0], e[0], e[1], e[1]];
    let eb = [e[2], e[3], e[2], e[3]];
    Ok(std::array::from_fn(|k| {
        let ratio = (am * bm) / (ea[k] * eb[k]);
        if ratio == 1.0 {
            c[k] as f64
        } else {
            ratio * c[k] as f64
        }
    }))
}

/// Multinomial log-likelihood with real-valued counts.
pub fn traditional_log_likelihood(k: &[f64; 4], p: &JointProbabilities) -> f64 {
    let p = p.as_array();
    (0..4).map(|i| xlogy(k[i], p[i])).sum()
}

/// Target over the 15 state parameters for the efficiency-corrected
/// multinomial likelihood.
pub struct TraditionalModel {
    records: Vec<(BasisPair, [f64; 4])>,
    specs: Vec<ParamSpec>,
}

impl TraditionalModel {
    /// One efficiency set per record, in canonical order, or a single shared set.
    pub fn new(dataset: &TomographyDataset, eff: &EfficiencyInput) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidCounts("dataset has no basis records".into()));
        }
        let effs: Vec<PathwayEfficiencies> = match eff {
            EfficiencyInput::Shared(e) => vec![*e; dataset.len()],
            EfficiencyInput::PerBasis(v) if v.len() == dataset.len() => v.clone(),
            EfficiencyInput::PerBasis(v) => {
                return Err(Error::Dimension(format!(
                    "{} efficiency sets for {} records",
                    v.len(),
                    dataset.len()
                )))
            }
        };
        let records = dataset
            .records()
            .zip(&effs)
            .map(|((pair, r), e)| Ok((*pair, traditional_corrected_counts(&r.counts, e)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            records,
            specs: density::param_specs(4),
        })
    }
}

impl LogDensity for TraditionalModel {
    fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let rho = density::density_from_flat(4, x);
        self.records
            .iter()
            .map(|(pair, k)| {
                let p = outcome_probabilities(&rho, *pair);
                (0..4).map(|i| xlogy(k[i], p[i])).sum::<f64>()
            })
            .sum()
    }
}
