//! Slice sampling, Gibbs sweeps and multi-chain burn-in.
//!
//! Each coordinate is updated by univariate slice sampling with step-out and
//! shrinkage. Several chains run from independent random starts; burn-in
//! rounds double in length until every pair of chains agrees on every
//! coordinate mean to within `m` standard deviations. The final pooled set is
//! drawn after convergence with frozen step widths.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{self, CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::stats;

/// Maximum rejected candidates before a slice update is abandoned.
pub const MAX_SHRINK_REJECTIONS: usize = 1000;
/// Maximum random restarts when looking for a finite starting point.
pub const MAX_START_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cyclic: bool,
    /// Initial slice step width.
    pub width: f64,
}

impl ParamSpec {
    pub fn bounded(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        assert!(lower < upper, "empty parameter range");
        Self {
            name: name.into(),
            lower,
            upper,
            cyclic: false,
            width: (upper - lower) / 10.0,
        }
    }

    pub fn cyclic(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            cyclic: true,
            ..Self::bounded(name, lower, upper)
        }
    }

    pub fn period(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn wrap(&self, x: f64) -> f64 {
        if !self.cyclic {
            return x;
        }
        let w = self.lower + (x - self.lower).rem_euclid(self.period());
        if w >= self.upper {
            self.lower
        } else {
            w
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.cyclic {
            x >= self.lower && x < self.upper
        } else {
            x >= self.lower && x <= self.upper
        }
    }
}

/// An unnormalized log density over a box of parameters.
pub trait LogDensity: Sync {
    fn specs(&self) -> &[ParamSpec];

    /// Natural log of the target; `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Range of coordinate `i` given the others. Only meaningful for
    /// bounded coordinates.
    fn conditional_bounds(&self, _x: &[f64], i: usize) -> (f64, f64) {
        let s = &self.specs()[i];
        (s.lower, s.upper)
    }

    /// The log density as a function of coordinate `i` alone, up to an
    /// additive constant. Implementations may precompute the parts that do
    /// not depend on `x[i]`.
    fn conditional<'a>(&'a self, x: &[f64], i: usize) -> Box<dyn Fn(f64) -> f64 + Send + 'a> {
        let base = x.to_vec();
        Box::new(move |v| {
            let mut y = base.clone();
            y[i] = v;
            self.log_density(&y)
        })
    }

    /// A random point in the support, used for chain starts.
    fn random_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let specs = self.specs();
        let mut x: Vec<f64> = specs.iter().map(|s| s.lower).collect();
        for i in 0..specs.len() {
            let (lo, hi) = if specs[i].cyclic {
                (specs[i].lower, specs[i].upper)
            } else {
                self.conditional_bounds(&x, i)
            };
            x[i] = specs[i].wrap(lo + (hi - lo) * rng.random::<f64>());
        }
        x
    }
}

/// One slice-sampling update of a single coordinate.
///
/// `lo..hi` is the admissible range; for a cyclic coordinate it is one
/// period and the returned value is wrapped into it. Returns the new point
/// and the width of the bracket it was accepted from.
pub fn slice_sample_1d<F, R>(
    f: F,
    x0: f64,
    spec: &ParamSpec,
    lo: f64,
    hi: f64,
    w: f64,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("log target at {} = {x0} is {f0}", spec.name)));
    }
    // 1 - U lies in (0, 1], so the log is finite
    let log_y = f0 + (1.0 - rng.random::<f64>()).ln();
    let w = w.min(hi - lo).max(f64::MIN_POSITIVE);

    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    if spec.cyclic {
        let period = hi - lo;
        let steps = (period / w).ceil() as usize;
        let mut j = (steps as f64 * rng.random::<f64>()).floor() as usize;
        let mut k = steps.saturating_sub(1).saturating_sub(j);
        while j > 0 && f(spec.wrap(left)) > log_y {
            left -= w;
            j -= 1;
        }
        while k > 0 && f(spec.wrap(right)) > log_y {
            right += w;
            k -= 1;
        }
    } else {
        while left > lo && f(left) > log_y {
            left -= w;
        }
        while right < hi && f(right) > log_y {
            right += w;
        }
        left = left.max(lo);
        right = right.min(hi);
    }

    for _ in 0..MAX_SHRINK_REJECTIONS {
        let width = right - left;
        let x1 = left + width * rng.random::<f64>();
        let x1w = spec.wrap(x1);
        if f(x1w) >= log_y {
            return Ok((x1w, width));
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if right - left <= 1e-15 * (1.0 + x0.abs()) {
            return Ok((spec.wrap(x0), right - left));
        }
    }
    Err(Error::ShrinkageFailed(MAX_SHRINK_REJECTIONS))
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub log_value: f64,
    pub chain_id: u64,
}

pub fn random_start<T: LogDensity + ?Sized, R: Rng>(target: &T, rng: &mut R, chain_id: u64) -> Result<ChainState> {
    for _ in 0..MAX_START_ATTEMPTS {
        let x = target.random_point(rng);
        let v = target.log_density(&x);
        if v.is_finite() {
            return Ok(ChainState {
                x,
                log_value: v,
                chain_id,
            });
        }
    }
    Err(Error::NonFinite(format!(
        "no finite starting point after {MAX_START_ATTEMPTS} attempts"
    )))
}

/// Updates every coordinate once, in order. Returns the bracket width used
/// for each coordinate.
pub fn gibbs_sweep<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &mut ChainState,
    widths: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !state.log_value.is_finite() {
        return Err(Error::NonFinite("chain state has non-finite log value".into()));
    }
    let specs = target.specs();
    let mut used = Vec::with_capacity(specs.len());
    for i in 0..specs.len() {
        let spec = &specs[i];
        let (lo, hi) = if spec.cyclic {
            (spec.lower, spec.upper)
        } else {
            target.conditional_bounds(&state.x, i)
        };
        let f = target.conditional(&state.x, i);
        let (xi, width) = slice_sample_1d(&f, state.x[i], spec, lo, hi, widths[i], rng)?;
        drop(f);
        state.x[i] = xi;
        used.push(width);
    }
    state.log_value = target.log_density(&state.x);
    Ok(used)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurnInConfig {
    pub chains: usize,
    pub k0: usize,
    pub m: f64,
    pub max_doublings: usize,
    /// Pooled sample count drawn after convergence.
    pub samples: usize,
    /// Sweeps discarded between retained samples in the final draw.
    pub thin: usize,
}

impl Default for BurnInConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            k0: 200,
            m: 0.5,
            max_doublings: 8,
            samples: 4000,
            thin: 1,
        }
    }
}

impl BurnInConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 || self.k0 < 1 || !(self.m > 0.0) || self.samples < 1 {
            return Err(Error::Domain(format!(
                "burn-in needs chains >= 2, k0 >= 1, m > 0 and samples >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub samples_per_chain: usize,
    /// `means[chain][coordinate]`
    pub means: Vec<Vec<f64>>,
    pub std_devs: Vec<Vec<f64>>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurnInDiagnostics {
    pub chains: usize,
    pub rounds: Vec<RoundDiagnostics>,
    pub widths: Vec<f64>,
    pub pooled_samples: usize,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

struct ChainRun {
    state: ChainState,
    rng: ChaCha8Rng,
}

fn per_chain_stats(specs: &[ParamSpec], draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    specs
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let col: Vec<f64> = draws.iter().map(|x| x[c]).collect();
            if s.cyclic {
                stats::circular_mean_std(&col, s.lower, s.period())
            } else {
                (stats::mean(&col), stats::std_dev(&col))
            }
        })
        .unzip()
}

// Chains agree when, for every pair and coordinate, their means differ by
// less than `m` standard deviations. Cyclic coordinates compare mean
// resultant vectors against the embedded spread sqrt(1 - R^2): for a
// concentrated chain this is the angular separation in angular standard
// deviations, and it stays well defined when the marginal is near uniform
// and the circular mean is not.
fn means_agree(specs: &[ParamSpec], draws: &[&[Vec<f64>]], means: &[Vec<f64>], sds: &[Vec<f64>], m: f64) -> bool {
    let resultants: Vec<Vec<[f64; 2]>> = draws
        .iter()
        .map(|d| {
            specs
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if s.cyclic {
                        let col: Vec<f64> = d.iter().map(|x| x[c]).collect();
                        stats::mean_resultant(&col, s.lower, s.period())
                    } else {
                        [0.0, 0.0]
                    }
                })
                .collect()
        })
        .collect();
    for i in 0..means.len() {
        for j in 0..means.len() {
            if i == j {
                continue;
            }
            for (c, s) in specs.iter().enumerate() {
                let (d, scale) = if s.cyclic {
                    let (a, b) = (resultants[i][c], resultants[j][c]);
                    let r2 = b[0] * b[0] + b[1] * b[1];
                    ((a[0] - b[0]).hypot(a[1] - b[1]), (1.0 - r2).max(0.0).sqrt())
                } else {
                    (means[i][c] - means[j][c], sds[j][c])
                };
                if !(d.abs() < m * scale) {
                    return false;
                }
            }
        }
    }
    true
}

/// Runs the multi-chain burn-in and pooled sampling. Chains execute in
/// parallel but results depend only on `seed`.
pub fn run_chains<T: LogDensity + ?Sized>(target: &T, config: &BurnInConfig, seed: u64) -> Result<PosteriorSamples> {
    config.validate()?;
    let specs = target.specs().to_vec();
    let mut runs: Vec<ChainRun> = (0..config.chains)
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let state = random_start(target, &mut rng, c as u64)?;
            Ok(ChainRun { state, rng })
        })
        .collect::<Result<_>>()?;

    let mut widths: Vec<f64> = specs.iter().map(|s| s.width).collect();
    let mut diagnostics = BurnInDiagnostics {
        chains: config.chains,
        rounds: Vec::new(),
        widths: widths.clone(),
        pooled_samples: 0,
    };
    let mut k = config.k0;
    for round in 0..=config.max_doublings {
        let results: Vec<(Vec<Vec<f64>>, Vec<f64>)> = runs
            .par_iter_mut()
            .map(|run| {
                let mut draws = Vec::with_capacity(k);
                let mut width_sum = vec![0.0; specs.len()];
                for _ in 0..k {
                    let used = gibbs_sweep(target, &mut run.state, &widths, &mut run.rng)?;
                    for (a, b) in width_sum.iter_mut().zip(used) {
                        *a += b;
                    }
                    draws.push(run.state.x.clone());
                }
                Ok((draws, width_sum))
            })
            .collect::<Result<_>>()?;

        let (means, sds): (Vec<_>, Vec<_>) = results.iter().map(|(d, _)| per_chain_stats(&specs, d)).unzip();
        let draws: Vec<&[Vec<f64>]> = results.iter().map(|(d, _)| d.as_slice()).collect();
        let converged = means_agree(&specs, &draws, &means, &sds, config.m);
        diagnostics.rounds.push(RoundDiagnostics {
            samples_per_chain: k,
            means,
            std_devs: sds,
            converged,
        });

        // adapt widths to the mean bracket width seen this round
        let total = (k * config.chains) as f64;
        for (c, w) in widths.iter_mut().enumerate() {
            let mean_width = results.iter().map(|(_, ws)| ws[c]).sum::<f64>() / total;
            let range = specs[c].period();
            *w = mean_width.clamp(range * 1e-9, range);
        }
        diagnostics.widths = widths.clone();

        if converged {
            break;
        }
        if round == config.max_doublings {
            return Err(Error::NotConverged(Box::new(diagnostics)));
        }
        k *= 2;
    }

    let per_chain = config.samples.div_ceil(config.chains);
    let thin = config.thin.max(1);
    let pooled: Vec<Vec<Vec<f64>>> = runs
        .par_iter_mut()
        .map(|run| {
            let mut draws = Vec::with_capacity(per_chain);
            for _ in 0..per_chain {
                for _ in 0..thin {
                    gibbs_sweep(target, &mut run.state, &widths, &mut run.rng)?;
                }
                draws.push(run.state.x.clone());
            }
            Ok(draws)
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(per_chain * config.chains);
    let mut chain = Vec::with_capacity(per_chain * config.chains);
    for (c, draws) in pooled.into_iter().enumerate() {
        for x in draws {
            debug_assert!(specs.iter().zip(&x).all(|(s, v)| s.contains(*v)));
            points.push(x);
            chain.push(c);
        }
    }
    diagnostics.pooled_samples = points.len();
    Ok(PosteriorSamples {
        specs,
        points,
        chain,
        diagnostics,
    })
}

#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub specs: Vec<ParamSpec>,
    pub points: Vec<Vec<f64>>,
    pub chain: Vec<usize>,
    pub diagnostics: BurnInDiagnostics,
}

impl PosteriorSamples {
    /// Wraps externally produced points, checking them against the specs.
    pub fn from_points(specs: Vec<ParamSpec>, points: Vec<Vec<f64>>) -> Result<Self> {
        for p in &points {
            if p.len() != specs.len() || !specs.iter().zip(p).all(|(s, v)| s.contains(*v)) {
                return Err(Error::OutOfRange(format!("sample {p:?} outside parameter box")));
            }
        }
        let n = points.len();
        Ok(Self {
            specs,
            chain: vec![0; n],
            points,
            diagnostics: BurnInDiagnostics {
                chains: 1,
                rounds: Vec::new(),
                widths: Vec::new(),
                pooled_samples: n,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.points.iter().map(|x| x[c]).collect()
    }

    /// Order-independent mean of each coordinate; cyclic coordinates use the
    /// circular mean.
    pub fn means(&self) -> Vec<f64> {
        self.specs
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if s.cyclic {
                    let (mut cs, mut sn) = (ExactSum::default(), ExactSum::default());
                    let k = std::f64::consts::TAU / s.period();
                    for x in &self.points {
                        cs.add(((x[c] - s.lower) * k).cos());
                        sn.add(((x[c] - s.lower) * k).sin());
                    }
                    s.lower + sn.mean().atan2(cs.mean()).rem_euclid(std::f64::consts::TAU) / k
                } else {
                    let mut acc = ExactSum::default();
                    self.points.iter().for_each(|x| acc.add(x[c]));
                    acc.mean()
                }
            })
            .collect()
    }

    /// Sample standard deviation per coordinate (circular for cyclic ones).
    pub fn std_devs(&self) -> Vec<f64> {
        per_chain_stats(&self.specs, &self.points).1
    }

    /// Writes one CSV row per sample with a leading chain column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string()];
        header.extend(self.specs.iter().map(|s| s.name.clone()));
        out.write_record(&header).map_err(csv_err)?;
        for (x, c) in self.points.iter().zip(&self.chain) {
            let mut row = vec![c.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Mean of `rho(tau)` over the samples. The state parameters are the first
/// `n^2 - 1` coordinates of each point.
pub fn posterior_mean_density(samples: &PosteriorSamples, n: usize) -> Result<DensityMatrix> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    let k = density::param_count(n);
    let mut re = vec![ExactSum::default(); n * n];
    let mut im = vec![ExactSum::default(); n * n];
    for x in &samples.points {
        let rho = density::density_from_flat(n, &x[..k]);
        for (idx, v) in rho.iter().enumerate() {
            re[idx].add(v.re);
            im[idx].add(v.im);
        }
    }
    let m = CMatrix::from_iterator(
        n,
        n,
        re.iter().zip(&im).map(|(a, b)| Complex64::new(a.mean(), b.mean())),
    );
    // make Hermiticity exact despite independent rounding of mirrored entries
    let m = (&m + m.adjoint()).unscale(2.0);
    DensityMatrix::new(m)
}

/// Population covariance of the sampled parameters. Each cyclic coordinate
/// is replaced by its `(cos, sin)` embedding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Covariance {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn parameter_covariance(samples: &PosteriorSamples) -> Result<Covariance> {
    if samples.len() < 2 {
        return Err(Error::Domain("covariance needs at least two samples".into()));
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (c, s) in samples.specs.iter().enumerate() {
        let col = samples.column(c);
        if s.cyclic {
            let k = std::f64::consts::TAU / s.period();
            names.push(format!("cos_{}", s.name));
            cols.push(col.iter().map(|v| ((v - s.lower) * k).cos()).collect());
            names.push(format!("sin_{}", s.name));
            cols.push(col.iter().map(|v| ((v - s.lower) * k).sin()).collect());
        } else {
            names.push(s.name.clone());
            cols.push(col);
        }
    }
    let r = samples.len() as f64;
    let means: Vec<f64> = cols
        .iter()
        .map(|c| {
            let mut a = ExactSum::default();
            c.iter().for_each(|v| a.add(*v));
            a.mean()
        })
        .collect();
    let d = cols.len();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .sum::<f64>()
                / r;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(Covariance {
        names,
        matrix: (0..d).map(|i| m.row(i).iter().copied().collect()).collect(),
    })
}

/// Mean trace distance between `rho_bar` and the sampled states.
pub fn trace_distance_deviation(samples: &PosteriorSamples, n: usize, rho_bar: &DensityMatrix) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    if rho_bar.dim() != n {
        return Err(Error::Dimension(format!(
            "reference state is {}x{}, samples are {n}x{n}",
            rho_bar.dim(),
            rho_bar.dim()
        )));
    }
    let k = density::param_count(n);
    let mut acc = ExactSum::default();
    for x in &samples.points {
        let rho = density::density_from_flat(n, &x[..k]);
        acc.add(density::trace_distance_matrices(&rho, rho_bar.matrix()));
    }
    Ok(acc.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, TAU};

    struct Fn1<F: Fn(f64) -> f64 + Sync> {
        specs: Vec<ParamSpec>,
        f: F,
    }

    impl<F: Fn(f64) -> f64 + Sync> LogDensity for Fn1<F> {
        fn specs(&self) -> &[ParamSpec] {
            &self.specs
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            (self.f)(x[0])
        }
    }

    struct Simplex3 {
        specs: Vec<ParamSpec>,
    }

    impl LogDensity for Simplex3 {
        fn specs(&self) -> &[ParamSpec] {
            &self.specs
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            if x.iter().sum::<f64>() <= 1.0 {
                (x[0] + 1e-300).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        fn conditional_bounds(&self, x: &[f64], i: usize) -> (f64, f64) {
            let others: f64 = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
            (0.0, (1.0 - others).max(0.0))
        }
    }

    fn draws_1d<F: Fn(f64) -> f64>(f: F, spec: &ParamSpec, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = spec.lower + 0.5 * spec.period();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            x = slice_sample_1d(&f, x, spec, spec.lower, spec.upper, spec.width, &mut rng)
                .unwrap()
                .0;
            out.push(x);
        }
        out
    }

    #[test]
    fn constant_target_is_uniform() {
        let spec = ParamSpec::bounded("x", 0.0, 1.0);
        let xs = draws_1d(|_| 0.0, &spec, 20_000, 1);
        let d = stats::ks_statistic(&xs, |x| x);
        assert!(stats::ks_p_value(d, xs.len() as f64) > 0.01);
    }

    #[test]
    fn cyclic_target_centered_on_seam() {
        let spec = ParamSpec::cyclic("phi", 0.0, TAU);
        let xs = draws_1d(|x| 4.0 * x.cos(), &spec, 20_000, 2);
        let (m, _) = stats::circular_mean_std(&xs, 0.0, TAU);
        assert!(stats::circular_difference(m, 0.0, TAU).abs() < 0.03);
        assert!(xs.iter().all(|x| spec.contains(*x)));
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let spec = ParamSpec::bounded("x", 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = slice_sample_1d(|_| f64::NEG_INFINITY, 0.5, &spec, 0.0, 1.0, 0.1, &mut rng);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn simplex_sweeps_stay_on_simplex() {
        let t = Simplex3 {
            specs: vec![
                ParamSpec::bounded("p00", 0.0, 1.0),
                ParamSpec::bounded("p01", 0.0, 1.0),
                ParamSpec::bounded("p10", 0.0, 1.0),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_start(&t, &mut rng, 0).unwrap();
        let w = vec![0.1; 3];
        for _ in 0..2000 {
            gibbs_sweep(&t, &mut s, &w, &mut rng).unwrap();
            assert!(s.x.iter().sum::<f64>() <= 1.0 + 1e-15);
            assert!(s.x.iter().all(|v| *v >= 0.0));
            assert!((s.log_value - t.log_density(&s.x)).abs() < 1e-9);
        }
    }

    #[test]
    fn run_chains_is_deterministic() {
        let t = Fn1 {
            specs: vec![ParamSpec::bounded("x", 0.0, 1.0)],
            f: |x: f64| -(x - 0.3).powi(2) / (2.0 * 0.01),
        };
        let cfg = BurnInConfig {
            samples: 400,
            ..Default::default()
        };
        let a = run_chains(&t, &cfg, 42).unwrap();
        let b = run_chains(&t, &cfg, 42).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.chain, b.chain);
        let c = run_chains(&t, &cfg, 43).unwrap();
        assert_ne!(a.points, c.points);
        assert!((a.means()[0] - 0.3).abs() < 0.02);
    }

    #[test]
    fn flat_cyclic_marginal_converges() {
        // the circular mean of a uniform angle is noise; the burn-in must
        // still stop
        let t = Fn1 {
            specs: vec![ParamSpec::cyclic("phi", 0.0, std::f64::consts::TAU)],
            f: |_| 0.0,
        };
        for seed in 0..10 {
            let s = run_chains(&t, &BurnInConfig::default(), seed).unwrap();
            assert_eq!(s.diagnostics.rounds.len(), 1, "seed {seed}");
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        // two separated modes with essentially no mass between them
        let t = Fn1 {
            specs: vec![ParamSpec::bounded("x", 0.0, 1.0)],
            f: |x: f64| -((x - 0.1).powi(2).min((x - 0.9).powi(2))) / (2.0 * 1e-4),
        };
        let cfg = BurnInConfig {
            chains: 8,
            k0: 20,
            max_doublings: 1,
            samples: 10,
            ..Default::default()
        };
        match run_chains(&t, &cfg, 7) {
            Err(Error::NotConverged(d)) => assert_eq!(d.rounds.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn mean_density_of_constant_samples() {
        let specs = density::param_specs(2);
        let x = vec![0.4, 0.7, 1.3];
        let s = PosteriorSamples::from_points(specs, vec![x.clone(); 5]).unwrap();
        let mean = posterior_mean_density(&s, 2).unwrap();
        let direct = density::density_from_flat(2, &x);
        assert!((mean.matrix() - direct).norm() < 1e-15);
        assert!(trace_distance_deviation(&s, 2, &mean).unwrap() < 1e-12);
        let cov = parameter_covariance(&s).unwrap();
        assert!(cov.matrix.iter().flatten().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn mean_density_of_basis_states() {
        let specs = density::param_specs(2);
        let pts = vec![vec![0.0, 0.0, 0.0], vec![FRAC_PI_2, 0.0, 0.0]];
        let s = PosteriorSamples::from_points(specs, pts).unwrap();
        let mean = posterior_mean_density(&s, 2).unwrap();
        assert!((mean.matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm() < 1e-15);
    }

    #[test]
    fn mean_density_is_order_free() {
        let specs = density::param_specs(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| specs.iter().map(|s| rng.random_range(s.lower..s.upper)).collect())
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        let a = PosteriorSamples::from_points(specs.clone(), pts).unwrap();
        let b = PosteriorSamples::from_points(specs, rev).unwrap();
        assert_eq!(
            posterior_mean_density(&a, 4).unwrap(),
            posterior_mean_density(&b, 4).unwrap()
        );
        assert_eq!(a.means(), b.means());
    }

    #[test]
    fn uniform_covariance() {
        let specs = vec![ParamSpec::bounded("a", 0.0, 1.0), ParamSpec::bounded("b", 0.0, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.random(), rng.random()]).collect();
        let s = PosteriorSamples::from_points(specs, pts).unwrap();
        let cov = parameter_covariance(&s).unwrap();
        for i in 0..2 {
            assert!((cov.matrix[i][i] - 1.0 / 12.0).abs() < 0.002);
            let col = s.column(i);
            let m = stats::mean(&col);
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((cov.matrix[i][i] - var).abs() < 1e-12);
        }
        assert!(cov.matrix[0][1].abs() < 0.002);
    }

    #[test]
    fn empty_samples_are_rejected() {
        let s = PosteriorSamples::from_points(density::param_specs(2), vec![]).unwrap();
        assert!(posterior_mean_density(&s, 2).is_err());
        assert!(parameter_covariance(&s).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let s = PosteriorSamples::from_points(density::param_specs(2), vec![vec![0.1, 0.2, 0.3]]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "chain,u1,theta21,phi21");
        assert_eq!(text.lines().count(), 2);
    }
}
