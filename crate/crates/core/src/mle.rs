//! Gradient ascent with an auto-tuned step size over a parameter box.
//!
//! Each iteration moves a distance `w` along the normalized finite-difference
//! gradient. An uphill (or level) move is accepted and doubles `w`; otherwise
//! `w` is halved and the same direction retried. Moves leaving the box are
//! projected back, cyclic coordinates wrap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density;
use crate::error::{Error, Result};
use crate::likelihood::{EfficiencyInput, StatePrior, TomographyDataset, TomographyModel, TraditionalModel};
use crate::sampler::{LogDensity, ParamSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub w0: f64,
    pub h: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub max_iter: usize,
    pub multistart: usize,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            w0: 0.1,
            h: 1e-6,
            w_min: 1e-10,
            w_max: 1.0,
            max_iter: 100_000,
            multistart: 8,
            seed: 0,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > self.w_min && self.w_min > 0.0 && self.h > 0.0 && self.w_max >= self.w0) {
            return Err(Error::Domain(format!("invalid ascent configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn project(specs: &[ParamSpec], x: &mut [f64]) {
    for (v, s) in x.iter_mut().zip(specs) {
        *v = if s.cyclic {
            s.wrap(*v)
        } else {
            v.clamp(s.lower, s.upper)
        };
    }
}

/// Central-difference gradient. Near a bound, or where a probe is not
/// finite, the one-sided difference is used instead.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], specs: &[ParamSpec], h: f64) -> Result<Vec<f64>> {
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("target is {f0} at the gradient point")));
    }
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for (i, s) in specs.iter().enumerate() {
        let up_ok = s.cyclic || x[i] + h <= s.upper;
        let down_ok = s.cyclic || x[i] - h >= s.lower;
        let mut eval = |v: f64| {
            probe[i] = s.wrap(v);
            let r = f(&probe);
            probe[i] = x[i];
            r
        };
        let plus = if up_ok { eval(x[i] + h) } else { f64::NAN };
        let minus = if down_ok { eval(x[i] - h) } else { f64::NAN };
        let d = match (plus.is_finite(), minus.is_finite()) {
            (true, true) => (plus - minus) / (2.0 * h),
            (true, false) => (plus - f0) / h,
            (false, true) => (f0 - minus) / h,
            (false, false) => return Err(Error::NonFinite(format!("no finite probe for {} at {}", s.name, x[i]))),
        };
        g.push(d);
    }
    Ok(g)
}

// Zeroes components that push against an active bound.
fn mask_active(g: &mut [f64], x: &[f64], specs: &[ParamSpec]) {
    for ((gi, xi), s) in g.iter_mut().zip(x).zip(specs) {
        if !s.cyclic && ((*xi >= s.upper && *gi > 0.0) || (*xi <= s.lower && *gi < 0.0)) {
            *gi = 0.0;
        }
    }
}

fn direction<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], specs: &[ParamSpec], h: f64) -> Result<Option<Vec<f64>>> {
    let mut g = finite_diff_gradient(f, x, specs, h)?;
    mask_active(&mut g, x, specs);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(None);
    }
    Ok(Some(g.into_iter().map(|v| v / norm).collect()))
}

/// Maximizes `f` from `x0`. The value sequence never decreases.
pub fn gradient_ascent<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    specs: &[ParamSpec],
    config: &AscentConfig,
) -> Result<AscentResult> {
    config.validate()?;
    let mut x = x0.to_vec();
    project(specs, &mut x);
    let mut value = f(&x);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("target is {value} at the start point")));
    }
    let mut w = config.w0;
    let mut dir = direction(f, &x, specs, config.h)?;
    let mut trial = vec![0.0; x.len()];
    let mut iterations = 0;
    while w >= config.w_min && iterations < config.max_iter {
        let Some(d) = dir.as_ref() else { break };
        iterations += 1;
        for k in 0..x.len() {
            trial[k] = x[k] + w * d[k];
        }
        project(specs, &mut trial);
        let tv = f(&trial);
        if tv >= value && trial != x {
            assert!(tv >= value);
            std::mem::swap(&mut x, &mut trial);
            value = tv;
            w = (2.0 * w).min(config.w_max);
            dir = direction(f, &x, specs, config.h)?;
        } else {
            w *= 0.5;
        }
    }
    Ok(AscentResult { x, value, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistartResult {
    pub best: AscentResult,
    /// Final value of every start, in start order.
    pub values: Vec<f64>,
    /// Several starts reach the best value (within 1e-6) at points more
    /// than 1e-2 apart.
    pub ridge: bool,
}

fn point_distance(a: &[f64], b: &[f64], specs: &[ParamSpec]) -> f64 {
    a.iter()
        .zip(b)
        .zip(specs)
        .map(|((x, y), s)| {
            if s.cyclic {
                crate::stats::circular_difference(*x, *y, s.period()).abs()
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Runs [`gradient_ascent`] from every start and keeps the best value; ties
/// go to the earliest start.
pub fn multistart<F: Fn(&[f64]) -> f64 + Sync>(
    f: &F,
    starts: &[Vec<f64>],
    specs: &[ParamSpec],
    config: &AscentConfig,
) -> Result<MultistartResult> {
    let runs: Vec<Result<AscentResult>> = starts
        .par_iter()
        .map(|s| gradient_ascent(f, s, specs, config))
        .collect();
    let ok: Vec<AscentResult> = runs.into_iter().filter_map(|r| r.ok()).collect();
    if ok.is_empty() {
        return Err(Error::NonFinite("every start had a non-finite target".into()));
    }
    let mut best = 0;
    for (i, r) in ok.iter().enumerate() {
        if r.value > ok[best].value {
            best = i;
        }
    }
    let top = ok[best].value;
    let ridge = ok
        .iter()
        .filter(|r| (r.value - top).abs() <= 1e-6)
        .any(|r| point_distance(&r.x, &ok[best].x, specs) > 1e-2);
    Ok(MultistartResult {
        values: ok.iter().map(|r| r.value).collect(),
        best: ok[best].clone(),
        ridge,
    })
}

/// Seeded random starts with finite target value.
pub fn random_starts<T: LogDensity + ?Sized>(target: &T, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6d6c65);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let x = target.random_point(&mut rng);
        if target.log_density(&x).is_finite() {
            out.push(x);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentMle {
    pub tau: density::HypersphericalParams,
    /// Efficiencies in model order: one set if shared, else one per record.
    pub efficiencies: Vec<[f64; 4]>,
    pub log_value: f64,
    pub ridge: bool,
}

/// Joint likelihood maximization over the state and unknown efficiencies.
pub fn experiment_specific_mle(dataset: &TomographyDataset, config: &AscentConfig) -> Result<ExperimentMle> {
    let model = TomographyModel::new(dataset, StatePrior::None)?;
    let starts = random_starts(&model, config.multistart.max(1), config.seed);
    let f = |x: &[f64]| model.log_likelihood(x);
    let r = multistart(&f, &starts, model.specs(), config)?;
    let x = &r.best.x;
    let groups = (x.len() - crate::likelihood::STATE_PARAMS) / 4;
    Ok(ExperimentMle {
        tau: density::HypersphericalParams::from_flat(4, &x[..crate::likelihood::STATE_PARAMS])?,
        efficiencies: (0..groups)
            .map(|g| {
                let o = crate::likelihood::STATE_PARAMS + 4 * g;
                [x[o], x[o + 1], x[o + 2], x[o + 3]]
            })
            .collect(),
        log_value: r.best.value,
        ridge: r.ridge,
    })
}

/// Maximizes the efficiency-corrected multinomial likelihood over the state.
pub fn traditional_mle(
    dataset: &TomographyDataset,
    known_eff: &EfficiencyInput,
    config: &AscentConfig,
) -> Result<density::HypersphericalParams> {
    let model = TraditionalModel::new(dataset, known_eff)?;
    let starts = random_starts(&model, config.multistart.max(1), config.seed);
    let f = |x: &[f64]| model.log_density(x);
    let r = multistart(&f, &starts, model.specs(), config)?;
    density::HypersphericalParams::from_flat(4, &r.best.x)
}
