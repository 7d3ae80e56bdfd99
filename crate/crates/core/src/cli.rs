//! Command-line driver. Every command writes one JSON document; identical
//! arguments give byte-identical output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{self, DensityMatrix};
use crate::error::{Error, Result};
use crate::likelihood::{
    self, BasisPair, EfficiencyInput, EfficiencyMode, PathwayEfficiencies, SimplexModel, StatePrior, TomographyDataset,
    TomographyModel,
};
use crate::mle::{self, AscentConfig};
use crate::sampler::{self, BurnInConfig, Covariance, PosteriorSamples};
use crate::simulate::{self, Stream, StudyConfig};
use crate::single_qubit::{self, IdealCounts};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "QTOMO_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "qtomo",
    version,
    about = "Bayesian mean and maximum-likelihood quantum state tomography"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate a state (or single-basis parameters) from a count file.
    Estimate(EstimateArgs),
    /// Closed-form and frequency estimators for ideal single-qubit counts.
    SingleQubit(SingleQubitArgs),
    /// Simulate a lossy two-photon tomography data set.
    Simulate(SimulateArgs),
    /// Run the estimator comparison study.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimateMethod {
    Bme,
    Mle,
    MleTraditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    /// Simplex model for a single record, state model otherwise.
    Auto,
    /// Two-qubit state model.
    State,
    /// Joint probabilities and efficiencies of one basis pair.
    Simplex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorChoice {
    Haar,
    Flat,
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    /// Number of parallel chains.
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    /// Samples per chain in the first burn-in round.
    #[arg(long = "burnin-k0", default_value_t = 200)]
    pub burnin_k0: usize,
    /// Convergence threshold in units of the per-chain standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub m: f64,
    /// Pooled posterior samples kept after burn-in.
    #[arg(long, default_value_t = 4000)]
    pub samples: usize,
    /// Burn-in rounds allowed to double the round length.
    #[arg(long, default_value_t = 8)]
    pub max_doublings: usize,
}

impl SamplerArgs {
    fn config(&self) -> BurnInConfig {
        BurnInConfig {
            chains: self.chains,
            k0: self.burnin_k0,
            m: self.m,
            max_doublings: self.max_doublings,
            samples: self.samples,
            thin: 1,
        }
    }
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Count file (.json, or .csv in the basis-table layout).
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = EstimateMethod::Bme)]
    pub method: EstimateMethod,
    /// Pure target state for the fidelity: psi-plus, psi-minus, phi-plus,
    /// phi-minus, or a JSON file {"re": [...], "im": [...]}.
    #[arg(long)]
    pub target_state: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Overrides the mode stored in the file (CSV default: per-basis).
    #[arg(long)]
    pub efficiency_mode: Option<EfficiencyMode>,
    /// Known efficiencies a0,a1,b0,b1 for the traditional MLE.
    #[arg(long, value_delimiter = ',')]
    pub eff: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ModelChoice::Auto)]
    pub model: ModelChoice,
    #[arg(long, value_enum, default_value_t = PriorChoice::Haar)]
    pub prior: PriorChoice,
    /// Downgrade count-consistency violations to warnings.
    #[arg(long)]
    pub allow_inconsistent: bool,
    /// Reserved: dark-count subtraction is not defined yet.
    #[arg(long)]
    pub subtract_dark: bool,
    /// Gradient-ascent starts for the MLE methods.
    #[arg(long, default_value_t = 8)]
    pub multistart: usize,
    /// Also write the pooled posterior samples as CSV.
    #[arg(long)]
    pub samples_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QubitMethod {
    Bme,
    Mle,
    Lie,
    Laplace,
}

#[derive(Args, Debug)]
pub struct SingleQubitArgs {
    /// Counts h,v,d,a,l,r.
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<u64>,
    #[arg(long, value_enum, default_value_t = QubitMethod::Bme)]
    pub method: QubitMethod,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// psi-plus, haar, or a JSON density-matrix file {"n", "re", "im"}.
    #[arg(long, default_value = "psi-plus")]
    pub state: String,
    /// Pathway efficiencies a0,a1,b0,b1.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1,1")]
    pub eff: Vec<f64>,
    /// Emitted pairs per basis pair.
    #[arg(long, default_value_t = 1000)]
    pub pairs: u64,
    /// Basis pairs, e.g. ZZ,XY; default all nine.
    #[arg(long, value_delimiter = ',')]
    pub bases: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub grid: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also estimate with the flat-in-tau prior.
    #[arg(long)]
    pub alt_prior: bool,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long = "burnin-k0", default_value_t = 200)]
    pub burnin_k0: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub multistart: usize,
    /// Per-cell CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    /// `"shared"` or the basis pair label.
    pub group: String,
    pub a0: Summary,
    pub a1: Summary,
    pub b0: Summary,
    pub b1: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCountSummary {
    pub basis: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub seed: u64,
    pub chains: usize,
    pub rounds: usize,
    pub final_round_samples_per_chain: usize,
    /// Pooled samples behind every posterior mean.
    pub pooled_samples: usize,
    pub widths: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    /// `"state"` or `"simplex"`.
    pub model: String,
    pub efficiency_mode: EfficiencyMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<StatePrior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<DensityMatrix>,
    /// Pauli-product expectations of the state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expectations: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_probabilities: Option<BTreeMap<String, Summary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Covariance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_d: Option<f64>,
    /// Fidelity of the estimate with the target; `sd` is the spread over
    /// posterior samples (zero for point estimates).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<Summary>,
    pub pair_counts: Vec<PairCountSummary>,
    pub efficiencies: Vec<EfficiencySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SamplerSummary>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingleQubitReport {
    pub method: String,
    pub counts: IdealCounts,
    pub bloch: density::BlochVector,
    pub norm: f64,
    pub physical: bool,
    /// Present whenever the estimate is a valid state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<DensityMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<density::HypersphericalParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub on_boundary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<[[f64; 3]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<[[f64; 3]; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StateVectorFile {
    re: Vec<f64>,
    im: Vec<f64>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn emit(text: &str, out: Option<&Path>) -> Result<String> {
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(text.to_string())
}

fn bell(name: &str) -> Option<Vec<Complex64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |a: f64, b: f64, d: f64, e: f64| {
        vec![
            Complex64::new(a, 0.0),
            Complex64::new(b, 0.0),
            Complex64::new(d, 0.0),
            Complex64::new(e, 0.0),
        ]
    };
    match name {
        "psi-plus" => Some(c(0.0, s, s, 0.0)),
        "psi-minus" => Some(c(0.0, s, -s, 0.0)),
        "phi-plus" => Some(c(s, 0.0, 0.0, s)),
        "phi-minus" => Some(c(s, 0.0, 0.0, -s)),
        _ => None,
    }
}

fn load_target(spec: &str) -> Result<Vec<Complex64>> {
    if let Some(v) = bell(spec) {
        return Ok(v);
    }
    let text = std::fs::read_to_string(spec)?;
    let f: StateVectorFile = serde_json::from_str(&text)?;
    if f.re.len() != f.im.len() {
        return Err(Error::Parse("target state: re and im lengths differ".into()));
    }
    let v: Vec<Complex64> = f.re.iter().zip(&f.im).map(|(r, i)| Complex64::new(*r, *i)).collect();
    let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidState("target state has zero norm".into()));
    }
    Ok(v.into_iter().map(|c| c / norm).collect())
}

fn summary(samples: &PosteriorSamples, name: &str) -> Result<Summary> {
    let i = samples
        .index_of(name)
        .ok_or_else(|| Error::Domain(format!("no sampled parameter named {name}")))?;
    Ok(Summary {
        mean: samples.means()[i],
        sd: samples.std_devs()[i],
    })
}

fn efficiency_summaries(samples: &PosteriorSamples, groups: &[String]) -> Result<Vec<EfficiencySummary>> {
    groups
        .iter()
        .map(|g| {
            let key = |n: &str| {
                if g == "shared" {
                    n.to_string()
                } else {
                    format!("{g}.{n}")
                }
            };
            Ok(EfficiencySummary {
                group: g.clone(),
                a0: summary(samples, &key("a0"))?,
                a1: summary(samples, &key("a1"))?,
                b0: summary(samples, &key("b0"))?,
                b1: summary(samples, &key("b1"))?,
            })
        })
        .collect()
}

fn point_efficiencies(groups: &[String], eff: &[[f64; 4]]) -> Vec<EfficiencySummary> {
    groups
        .iter()
        .zip(eff)
        .map(|(g, e)| {
            let s = |v: f64| Summary { mean: v, sd: 0.0 };
            EfficiencySummary {
                group: g.clone(),
                a0: s(e[0]),
                a1: s(e[1]),
                b0: s(e[2]),
                b1: s(e[3]),
            }
        })
        .collect()
}

fn sampler_summary(samples: &PosteriorSamples, seed: u64) -> SamplerSummary {
    let d = &samples.diagnostics;
    SamplerSummary {
        seed,
        chains: d.chains,
        rounds: d.rounds.len(),
        final_round_samples_per_chain: d.rounds.last().map(|r| r.samples_per_chain).unwrap_or(0),
        pooled_samples: d.pooled_samples,
        widths: d.widths.clone(),
    }
}

fn groups_of(dataset: &TomographyDataset) -> Vec<String> {
    match dataset.efficiency_mode {
        EfficiencyMode::Shared => vec!["shared".into()],
        EfficiencyMode::PerBasis => dataset.records().map(|(p, _)| p.to_string()).collect(),
    }
}

fn state_fidelity(
    rho: &DensityMatrix,
    target: &Option<Vec<Complex64>>,
    samples: Option<&PosteriorSamples>,
) -> Result<Option<Summary>> {
    let Some(psi) = target else { return Ok(None) };
    if psi.len() != rho.dim() {
        return Err(Error::Dimension(format!(
            "target has {} amplitudes, state is {}x{}",
            psi.len(),
            rho.dim(),
            rho.dim()
        )));
    }
    let mean = density::fidelity_with_pure(rho, psi)?;
    let sd = match samples {
        Some(s) => {
            let vals: Vec<f64> = s
                .points
                .iter()
                .map(|x| {
                    let m = density::density_from_flat(4, &x[..likelihood::STATE_PARAMS]);
                    density::fidelity_with_pure(&DensityMatrix::from_unchecked(m), psi)
                })
                .collect::<Result<_>>()?;
            crate::stats::std_dev(&vals)
        }
        None => 0.0,
    };
    Ok(Some(Summary { mean, sd }))
}

/// Runs `estimate` and returns the report text.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<String> {
    if args.subtract_dark {
        return Err(Error::Domain("--subtract-dark is reserved and not implemented".into()));
    }
    let dataset = TomographyDataset::load(&args.dataset, args.efficiency_mode, args.allow_inconsistent)?;
    if dataset.is_empty() {
        return Err(Error::InvalidCounts("dataset has no basis records".into()));
    }
    let target = args.target_state.as_deref().map(load_target).transpose()?;
    let simplex = match args.model {
        ModelChoice::Simplex => true,
        ModelChoice::State => false,
        ModelChoice::Auto => dataset.len() == 1 && args.method == EstimateMethod::Bme,
    };
    let prior = match args.prior {
        PriorChoice::Haar => StatePrior::Haar,
        PriorChoice::Flat => StatePrior::FlatTau,
    };
    let config = args.sampler.config();
    let ascent = AscentConfig {
        multistart: args.multistart,
        seed: args.seed,
        ..AscentConfig::default()
    };
    let groups = groups_of(&dataset);
    let mut report = EstimateReport {
        method: match args.method {
            EstimateMethod::Bme => "bme",
            EstimateMethod::Mle => "mle",
            EstimateMethod::MleTraditional => "mle-traditional",
        }
        .into(),
        model: if simplex { "simplex" } else { "state" }.into(),
        efficiency_mode: dataset.efficiency_mode,
        prior: None,
        matrix: None,
        expectations: None,
        joint_probabilities: None,
        covariance: None,
        delta_d: None,
        fidelity: None,
        pair_counts: Vec::new(),
        efficiencies: Vec::new(),
        log_likelihood: None,
        ridge: None,
        diagnostics: None,
        warnings: dataset.warnings.clone(),
    };

    if simplex {
        if args.method != EstimateMethod::Bme {
            return Err(Error::Domain("the simplex model supports only --method bme".into()));
        }
        if dataset.len() != 1 {
            return Err(Error::Domain("the simplex model needs exactly one basis record".into()));
        }
        let (pair, rec) = dataset.records().next().expect("one record");
        let model = SimplexModel::new(rec.counts);
        let samples = sampler::run_chains(&model, &config, args.seed)?;
        let mut joint = BTreeMap::new();
        for n in ["p00", "p01", "p10"] {
            joint.insert(n.to_string(), summary(&samples, n)?);
        }
        let p11: Vec<f64> = samples.points.iter().map(|x| SimplexModel::alpha(x).0[3]).collect();
        joint.insert(
            "p11".into(),
            Summary {
                mean: crate::stats::mean(&p11),
                sd: crate::stats::std_dev(&p11),
            },
        );
        let (mean, sd) = likelihood::mean_photon_number(&samples, &rec.counts)?;
        report.joint_probabilities = Some(joint);
        report.pair_counts = vec![PairCountSummary {
            basis: pair.to_string(),
            mean,
            sd,
        }];
        report.efficiencies = efficiency_summaries(&samples, &["shared".into()])?;
        report.covariance = Some(sampler::parameter_covariance(&samples)?);
        report.diagnostics = Some(sampler_summary(&samples, args.seed));
        write_samples(args, &samples)?;
        return emit(&to_json(&report), args.out.as_deref());
    }

    let rho = match args.method {
        EstimateMethod::Bme => {
            let model = TomographyModel::new(&dataset, prior)?;
            model.ensure_proper()?;
            let samples = sampler::run_chains(&model, &config, args.seed)?;
            let rho = sampler::posterior_mean_density(&samples, 4)?;
            report.prior = Some(prior);
            report.delta_d = Some(sampler::trace_distance_deviation(&samples, 4, &rho)?);
            report.covariance = Some(sampler::parameter_covariance(&samples)?);
            report.fidelity = state_fidelity(&rho, &target, Some(&samples))?;
            report.pair_counts = model
                .record_pairs()
                .iter()
                .enumerate()
                .map(|(r, p)| {
                    let (mean, sd) = model.mean_photon_number(&samples, r)?;
                    Ok(PairCountSummary {
                        basis: p.to_string(),
                        mean,
                        sd,
                    })
                })
                .collect::<Result<_>>()?;
            report.efficiencies = efficiency_summaries(&samples, &groups)?;
            report.diagnostics = Some(sampler_summary(&samples, args.seed));
            write_samples(args, &samples)?;
            rho
        }
        EstimateMethod::Mle => {
            let m = mle::experiment_specific_mle(&dataset, &ascent)?;
            report.log_likelihood = Some(m.log_value);
            report.ridge = Some(m.ridge);
            report.efficiencies = point_efficiencies(&groups, &m.efficiencies);
            let rho = density::density_from_params(&m.tau);
            report.fidelity = state_fidelity(&rho, &target, None)?;
            rho
        }
        EstimateMethod::MleTraditional => {
            let e = args
                .eff
                .as_deref()
                .ok_or_else(|| Error::Domain("--method mle-traditional needs --eff a0,a1,b0,b1".into()))?;
            let eff = PathwayEfficiencies::from_slice(e)?;
            let tau = mle::traditional_mle(&dataset, &EfficiencyInput::Shared(eff), &ascent)?;
            report.efficiencies = point_efficiencies(&["shared".into()], &[eff.as_array()]);
            let rho = density::density_from_params(&tau);
            report.fidelity = state_fidelity(&rho, &target, None)?;
            rho
        }
    };
    report.expectations = Some(density::two_qubit_pauli_expectations(&rho)?);
    report.matrix = Some(rho);
    emit(&to_json(&report), args.out.as_deref())
}

fn write_samples(args: &EstimateArgs, samples: &PosteriorSamples) -> Result<()> {
    if let Some(p) = &args.samples_csv {
        samples.write_csv(std::fs::File::create(p)?)?;
    }
    Ok(())
}

pub fn cmd_single_qubit(args: &SingleQubitArgs) -> Result<String> {
    let counts = IdealCounts::from_slice(&args.counts)?;
    let physical_matrix =
        |b: &density::BlochVector| single_qubit::is_physical(b).then(|| DensityMatrix::from_unchecked(b.to_matrix()));
    let report = match args.method {
        QubitMethod::Lie => {
            let b = single_qubit::lie_estimate(&counts)?;
            SingleQubitReport {
                method: "lie".into(),
                counts,
                bloch: b,
                norm: b.norm(),
                physical: single_qubit::is_physical(&b),
                matrix: physical_matrix(&b),
                tau: None,
                on_boundary: None,
                precision: None,
                covariance: None,
            }
        }
        QubitMethod::Mle => {
            let m = single_qubit::mle_single_qubit(&counts)?;
            SingleQubitReport {
                method: "mle".into(),
                counts,
                bloch: m.bloch,
                norm: m.bloch.norm(),
                physical: true,
                matrix: Some(density::density_from_params(&m.tau)),
                tau: Some(m.tau),
                on_boundary: Some(m.on_boundary),
                precision: None,
                covariance: None,
            }
        }
        QubitMethod::Laplace => {
            let l = single_qubit::laplace_approximation(&counts)?;
            let rho = density::density_from_params(&l.tau);
            let b = density::pauli_expectations(&rho)?;
            SingleQubitReport {
                method: "laplace".into(),
                counts,
                bloch: b,
                norm: b.norm(),
                physical: true,
                matrix: Some(rho),
                tau: Some(l.tau),
                on_boundary: Some(false),
                precision: Some(l.precision),
                covariance: Some(l.covariance),
            }
        }
        QubitMethod::Bme => {
            let rho = single_qubit::bme_closed_form(&counts)?;
            let b = density::pauli_expectations(&rho)?;
            SingleQubitReport {
                method: "bme".into(),
                counts,
                bloch: b,
                norm: b.norm(),
                physical: true,
                matrix: Some(rho),
                tau: None,
                on_boundary: None,
                precision: None,
                covariance: None,
            }
        }
    };
    emit(&to_json(&report), args.out.as_deref())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let eff = PathwayEfficiencies::from_slice(&args.eff)?;
    let rho = match args.state.as_str() {
        "psi-plus" => DensityMatrix::pure(&density::psi_plus())?,
        "haar" => {
            let mut rng = simulate::named_rng(args.seed, Stream::State);
            density::density_from_params(&density::haar_uniform_sample(&mut rng, 4)?)
        }
        path => {
            let rho: DensityMatrix = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if rho.dim() != 4 {
                return Err(Error::Dimension(format!(
                    "simulation needs a 4x4 state, got {}x{}",
                    rho.dim(),
                    rho.dim()
                )));
            }
            rho
        }
    };
    let bases = match &args.bases {
        None => BasisPair::all(),
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    };
    let config = simulate::ExperimentConfig {
        state: rho,
        efficiencies: eff,
        pairs: args.pairs,
        bases,
        seed: args.seed,
    };
    let data = config.run()?;
    emit(&data.to_json_string(), args.out.as_deref())
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<String> {
    let defaults = StudyConfig::default();
    let config = StudyConfig {
        grid: args.grid.clone(),
        reps: args.reps,
        seed: args.seed,
        alt_prior: args.alt_prior,
        sampler: BurnInConfig {
            chains: args.chains,
            k0: args.burnin_k0,
            samples: args.samples,
            ..defaults.sampler
        },
        ascent: AscentConfig {
            multistart: args.multistart,
            ..defaults.ascent
        },
    };
    let report = simulate::run_performance_study(&config)?;
    if let Some(p) = &args.csv {
        report.write_csv(std::fs::File::create(p)?)?;
    }
    emit(&report.to_json_string(), args.out.as_deref())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse(_) | Error::Json(_) => "parse",
        Error::Io(_) => "io",
        Error::InvalidCounts(_) | Error::InvalidState(_) | Error::Dimension(_) | Error::OutOfRange(_) => {
            "invalid_input"
        }
        Error::NotConverged(_) => "not_converged",
        _ => "estimation",
    }
}

/// Structured error document printed on failure.
pub fn error_json(e: &Error) -> String {
    let mut v = serde_json::json!({ "error": error_kind(e), "message": e.to_string() });
    if let Error::NotConverged(d) = e {
        v["diagnostics"] = serde_json::to_value(d).expect("diagnostics serialize");
    }
    to_json(&v)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    configure_threads();
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::SingleQubit(a) => cmd_single_qubit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprint!("{}", error_json(&e));
            1
        }
    }
}
