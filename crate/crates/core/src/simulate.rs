//! Forward simulation of lossy two-photon counting and the estimator
//! comparison study.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{self, DensityMatrix};
use crate::error::{Error, Result};
use crate::likelihood::{
    self, BasisPair, EfficiencyInput, EfficiencyMode, JointProbabilities, PathwayEfficiencies, SingleBasisCounts,
    StatePrior, TomographyDataset,
};
use crate::mle::{self, AscentConfig};
use crate::sampler::BurnInConfig;

/// One experiment: each of `pairs` photon pairs is assigned a joint
/// outcome, then each photon independently survives its pathway.
pub fn simulate_single_basis<R: Rng + ?Sized>(
    p: &JointProbabilities,
    eff: &PathwayEfficiencies,
    pairs: u64,
    rng: &mut R,
) -> SingleBasisCounts {
    let p = p.as_array();
    let e = eff.as_array();
    // outcome index: 4 * destiny + 2 * (alice survives) + (bob survives)
    let mut weights = [0.0; 16];
    for k in 0..4 {
        let (a, b) = (e[k / 2], e[2 + k % 2]);
        weights[4 * k] = p[k] * (1.0 - a) * (1.0 - b);
        weights[4 * k + 1] = p[k] * (1.0 - a) * b;
        weights[4 * k + 2] = p[k] * a * (1.0 - b);
        weights[4 * k + 3] = p[k] * a * b;
    }
    let mut tally = [0u64; 16];
    if pairs > 0 {
        let dist = WeightedIndex::new(weights).expect("joint probabilities sum to one");
        for _ in 0..pairs {
            tally[dist.sample(rng)] += 1;
        }
    }
    let mut c = SingleBasisCounts::default();
    for k in 0..4 {
        let (i, j) = (k / 2, k % 2);
        let bob_only = tally[4 * k + 1];
        let alice_only = tally[4 * k + 2];
        let both = tally[4 * k + 3];
        let alice = alice_only + both;
        let bob = bob_only + both;
        if i == 0 {
            c.a0 += alice
        } else {
            c.a1 += alice
        }
        if j == 0 {
            c.b0 += bob
        } else {
            c.b1 += bob
        }
        match k {
            0 => c.c00 = both,
            1 => c.c01 = both,
            2 => c.c10 = both,
            _ => c.c11 = both,
        }
    }
    c
}

/// Simulates every listed basis pair independently from the same state.
pub fn simulate_tomography<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    eff: &PathwayEfficiencies,
    pairs: u64,
    bases: &[BasisPair],
    rng: &mut R,
) -> Result<TomographyDataset> {
    let mut data = TomographyDataset::new(EfficiencyMode::Shared);
    for pair in bases {
        let p = likelihood::joint_outcome_probabilities(rho, pair.alice, pair.bob)?;
        let counts = simulate_single_basis(&p, eff, pairs, rng);
        data.insert(*pair, counts, None)?;
    }
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub state: DensityMatrix,
    pub efficiencies: PathwayEfficiencies,
    pub pairs: u64,
    pub bases: Vec<BasisPair>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn run(&self) -> Result<TomographyDataset> {
        let mut rng = named_rng(self.seed, Stream::Simulate);
        simulate_tomography(&self.state, &self.efficiencies, self.pairs, &self.bases, &mut rng)
    }
}

/// Named random sub-streams derived from a single seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Simulate = 1,
    State = 2,
    Sampler = 3,
    Mle = 4,
}

pub fn named_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Log of the alternative prior: flat in the hyperspherical coordinates.
pub fn alt_prior_target(tau: &[f64]) -> f64 {
    StatePrior::FlatTau.log_prior(tau)
}

pub const TRADITIONAL: &str = "traditional_mle";
pub const EXPERIMENT_MLE: &str = "mle";
pub const BME: &str = "bme";
pub const BME_FLAT: &str = "bme_flat_prior";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: Vec<u64>,
    pub reps: usize,
    pub seed: u64,
    /// Also run the BME under the flat-in-tau prior.
    pub alt_prior: bool,
    pub sampler: BurnInConfig,
    pub ascent: AscentConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            grid: vec![10, 100, 1000, 10_000, 100_000],
            reps: 100,
            seed: 0,
            alt_prior: false,
            sampler: BurnInConfig {
                samples: 2000,
                ..BurnInConfig::default()
            },
            ascent: AscentConfig {
                multistart: 4,
                ..AscentConfig::default()
            },
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Domain("repetitions must be >= 1".into()));
        }
        if self.reps >= 1 << 24 {
            return Err(Error::Domain("repetitions must be < 2^24".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Domain("grid must not be empty".into()));
        }
        self.sampler.validate()?;
        self.ascent.validate()
    }

    pub fn estimators(&self) -> Vec<&'static str> {
        let mut e = vec![TRADITIONAL, EXPERIMENT_MLE, BME];
        if self.alt_prior {
            e.push(BME_FLAT);
        }
        e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pairs: u64,
    pub rep: usize,
    /// Trace distance to the true state, aligned with the estimator list.
    pub distances: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub grid: Vec<u64>,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<String>,
    /// Mean distance per estimator, aligned with `grid`; null if every
    /// repetition failed.
    pub mean_distance: BTreeMap<String, Vec<Option<f64>>>,
    /// Percentage of repetitions in which the estimator is strictly closer
    /// to the truth than the traditional MLE.
    pub win_pct: BTreeMap<String, Vec<Option<f64>>>,
    /// `[wins, comparisons]` behind each percentage.
    pub win_counts: BTreeMap<String, Vec<[usize; 2]>>,
    pub failures: BTreeMap<String, Vec<usize>>,
    #[serde(skip)]
    pub cells: Vec<CellResult>,
}

fn cell_rng(seed: u64, pairs: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((pairs << 24) | rep as u64);
    rng
}

fn run_cell(config: &StudyConfig, pairs: u64, rep: usize) -> CellResult {
    let estimators = config.estimators();
    let fail_all = |msg: String| CellResult {
        pairs,
        rep,
        distances: vec![None; estimators.len()],
        errors: vec![Some(msg); estimators.len()],
    };
    let mut rng = cell_rng(config.seed, pairs, rep);
    let truth = match density::haar_uniform_sample(&mut rng, 4) {
        Ok(t) => density::density_from_params(&t),
        Err(e) => return fail_all(e.to_string()),
    };
    let eff = PathwayEfficiencies::new(rng.random(), rng.random(), rng.random(), rng.random())
        .expect("uniform draws lie in [0, 1)");
    let data = match simulate_tomography(&truth, &eff, pairs, &BasisPair::all(), &mut rng) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let ascent = AscentConfig {
        seed: rng.random(),
        ..config.ascent.clone()
    };
    let sampler_seed: u64 = rng.random();

    let distance = |rho: Result<DensityMatrix>| rho.and_then(|r| density::trace_distance(&r, &truth));
    let results: Vec<Result<f64>> = estimators
        .iter()
        .map(|name| match *name {
            TRADITIONAL => distance(
                mle::traditional_mle(&data, &EfficiencyInput::Shared(eff), &ascent)
                    .map(|t| density::density_from_params(&t)),
            ),
            EXPERIMENT_MLE => {
                distance(mle::experiment_specific_mle(&data, &ascent).map(|m| density::density_from_params(&m.tau)))
            }
            BME => {
                distance(likelihood::bayesian_mean(&data, StatePrior::Haar, &config.sampler, sampler_seed).map(|r| r.0))
            }
            _ => distance(
                likelihood::bayesian_mean(&data, StatePrior::FlatTau, &config.sampler, sampler_seed).map(|r| r.0),
            ),
        })
        .collect();
    CellResult {
        pairs,
        rep,
        distances: results.iter().map(|r| r.as_ref().ok().copied()).collect(),
        errors: results
            .iter()
            .map(|r| r.as_ref().err().map(|e| e.to_string()))
            .collect(),
    }
}

/// Runs every `(pairs, repetition)` cell and aggregates. Each cell draws
/// its randomness from `(seed, pairs, rep)` alone, so the report does not
/// depend on scheduling.
pub fn run_performance_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let jobs: Vec<(u64, usize)> = config
        .grid
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |r| (n, r)))
        .collect();
    let cells: Vec<CellResult> = jobs.par_iter().map(|&(n, r)| run_cell(config, n, r)).collect();
    Ok(aggregate(config, cells))
}

fn aggregate(config: &StudyConfig, cells: Vec<CellResult>) -> StudyReport {
    let names = config.estimators();
    let mut mean_distance = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut win_pct = BTreeMap::new();
    let mut win_counts = BTreeMap::new();
    let in_row = |n: u64| cells.iter().filter(move |c| c.pairs == n);
    for (e, name) in names.iter().enumerate() {
        let mut means = Vec::new();
        let mut fails = Vec::new();
        for &n in &config.grid {
            let ok: Vec<f64> = in_row(n).filter_map(|c| c.distances[e]).collect();
            fails.push(in_row(n).count() - ok.len());
            means.push((!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64));
        }
        mean_distance.insert(name.to_string(), means);
        failures.insert(name.to_string(), fails);
        if e == 0 {
            continue;
        }
        let mut pct = Vec::new();
        let mut counts = Vec::new();
        for &n in &config.grid {
            let pairs: Vec<(f64, f64)> = in_row(n)
                .filter_map(|c| Some((c.distances[e]?, c.distances[0]?)))
                .collect();
            let wins = pairs.iter().filter(|(d, t)| d < t).count();
            counts.push([wins, pairs.len()]);
            pct.push((!pairs.is_empty()).then(|| 100.0 * wins as f64 / pairs.len() as f64));
        }
        win_pct.insert(name.to_string(), pct);
        win_counts.insert(name.to_string(), counts);
    }
    StudyReport {
        grid: config.grid.clone(),
        reps: config.reps,
        seed: config.seed,
        estimators: names.iter().map(|s| s.to_string()).collect(),
        mean_distance,
        win_pct,
        win_counts,
        failures,
        cells,
    }
}

impl StudyReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per cell: pair count, repetition, one distance column per
    /// estimator (empty when it failed), then the failure messages.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["pairs".to_string(), "rep".to_string()];
        header.extend(self.estimators.iter().cloned());
        header.push("errors".to_string());
        out.write_record(&header).map_err(csv_err)?;
        for c in &self.cells {
            let mut row = vec![c.pairs.to_string(), c.rep.to_string()];
            row.extend(c.distances.iter().map(|d| d.map(|v| v.to_string()).unwrap_or_default()));
            let errors: Vec<String> = self
                .estimators
                .iter()
                .zip(&c.errors)
                .filter_map(|(name, e)| e.as_ref().map(|e| format!("{name}: {e}")))
                .collect();
            row.push(errors.join("; "));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
