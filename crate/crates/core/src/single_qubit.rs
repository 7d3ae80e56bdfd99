//! Estimators for the lossless single-qubit experiment with counts in the
//! Z (h/v), X (d/a) and Y (l/r) bases.
//!
//! The closed-form Bayesian mean uses the moments
//!
//! ```text
//! F[u0,u1,t0,t1,f0,f1] = ∫ du dθ dφ  μ(u,θ) P(D|u,θ,φ)
//!                        cos^u0 u sin^u1 u cos^t0 θ sin^t1 θ cos^f0 φ sin^f1 φ
//! ```
//!
//! with `μ = sin³(2u) sin(2θ) / (2√2)`. Expanding the X and Y factors in
//! powers of `X = sin u cos u cosθ cosφ` and `Y = sin u cos u cosθ sinφ`
//! reduces every term to a product of three Beta functions. The expansion
//! alternates in sign and cancels heavily once counts reach a few dozen, so
//! the sum is accumulated exactly in big-integer fixed point, with the
//! precision raised until the truncation bound is below 2^-60 of the result.

use std::f64::consts::{FRAC_PI_2, LN_2, TAU};

use nalgebra::Matrix3;
use num_bigint::{BigInt, Sign};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::density::{self, BlochVector, CMatrix, DensityMatrix, HypersphericalParams};
use crate::error::{Error, Result};
use crate::likelihood::xlogy;
use crate::mle::{self, AscentConfig};
use crate::sampler::{self, BurnInConfig, LogDensity, ParamSpec};

/// Above this total count the closed form is replaced by sampling.
pub const CLOSED_FORM_MAX_TOTAL: u64 = 5000;
/// Seed of the sampling fallback.
pub const FALLBACK_SEED: u64 = 0x5157_4f4d;
/// Second-difference step for the Laplace Hessian.
pub const LAPLACE_STEP: f64 = 1e-4;
/// Starting points in `phi` for the boundary maximization.
pub const BOUNDARY_STARTS: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdealCounts {
    pub h: u64,
    pub v: u64,
    pub d: u64,
    pub a: u64,
    pub l: u64,
    pub r: u64,
}

impl IdealCounts {
    pub fn new(h: u64, v: u64, d: u64, a: u64, l: u64, r: u64) -> Self {
        Self { h, v, d, a, l, r }
    }

    pub fn from_slice(c: &[u64]) -> Result<Self> {
        match c {
            [h, v, d, a, l, r] => Ok(Self::new(*h, *v, *d, *a, *l, *r)),
            _ => Err(Error::Dimension(format!("need 6 counts, got {}", c.len()))),
        }
    }

    pub fn total(&self) -> u64 {
        self.h + self.v + self.d + self.a + self.l + self.r
    }

    pub fn n_z(&self) -> u64 {
        self.h + self.v
    }

    pub fn n_d(&self) -> u64 {
        self.d + self.a
    }

    pub fn n_c(&self) -> u64 {
        self.l + self.r
    }

    /// Log-likelihood at `(u, theta, phi)`. The formula is analytic, so it
    /// is also evaluated outside the parameter box when asked.
    pub fn log_likelihood(&self, u: f64, theta: f64, phi: f64) -> f64 {
        let ph = u.cos().powi(2);
        let pv = u.sin().powi(2);
        let r = (2.0 * u).sin() * theta.cos();
        let pd = 0.5 * (1.0 + r * phi.cos());
        let pl = 0.5 * (1.0 + r * phi.sin());
        xlogy(self.h as f64, ph)
            + xlogy(self.v as f64, pv)
            + xlogy(self.d as f64, pd)
            + xlogy(self.a as f64, 1.0 - pd)
            + xlogy(self.l as f64, pl)
            + xlogy(self.r as f64, 1.0 - pl)
    }
}

fn ratio(plus: u64, minus: u64, what: &str) -> Result<f64> {
    let n = plus + minus;
    if n == 0 {
        return Err(Error::Undefined(format!("no counts in the {what} basis")));
    }
    Ok((plus as f64 - minus as f64) / n as f64)
}

/// Frequency estimates of the three Pauli expectations.
pub fn lie_estimate(counts: &IdealCounts) -> Result<BlochVector> {
    Ok(BlochVector::new(
        ratio(counts.h, counts.v, "Z")?,
        ratio(counts.d, counts.a, "X")?,
        ratio(counts.l, counts.r, "Y")?,
    ))
}

pub fn is_physical(b: &BlochVector) -> bool {
    b.z * b.z + b.x * b.x + b.y * b.y <= 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitMle {
    pub tau: HypersphericalParams,
    pub bloch: BlochVector,
    pub on_boundary: bool,
    pub log_likelihood: f64,
}

fn bloch_from_angles(u: f64, theta: f64, phi: f64) -> BlochVector {
    let s = (2.0 * u).sin() * theta.cos();
    BlochVector::new((2.0 * u).cos(), s * phi.cos(), s * phi.sin())
}

/// Maximum-likelihood estimate. Physical frequency estimates are returned
/// unchanged; otherwise the likelihood is maximized over pure states.
pub fn mle_single_qubit(counts: &IdealCounts) -> Result<QubitMle> {
    let lie = lie_estimate(counts)?;
    if is_physical(&lie) {
        let u = lie.z.clamp(-1.0, 1.0).acos() / 2.0;
        let denom = 1.0 - lie.z * lie.z;
        let theta = if denom > 0.0 {
            ((lie.x * lie.x + lie.y * lie.y) / denom).sqrt().min(1.0).acos()
        } else {
            0.0
        };
        let phi = density::wrap_angle(lie.y.atan2(lie.x));
        let tau = HypersphericalParams::qubit(u, theta, phi)?;
        return Ok(QubitMle {
            tau,
            bloch: lie,
            on_boundary: false,
            log_likelihood: counts.log_likelihood(u, theta, phi),
        });
    }

    let specs = vec![
        ParamSpec::bounded("u1", 0.0, FRAC_PI_2),
        ParamSpec::cyclic("phi21", 0.0, TAU),
    ];
    let f = |x: &[f64]| counts.log_likelihood(x[0], 0.0, x[1]);
    let u0 = (lie.z / lie.norm()).acos() / 2.0;
    let config = AscentConfig::default();
    let mut best: Option<mle::AscentResult> = None;
    for k in 0..BOUNDARY_STARTS {
        let phi0 = TAU * k as f64 / BOUNDARY_STARTS as f64;
        let r = match mle::gradient_ascent(&f, &[u0, phi0], &specs, &config) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let better = match &best {
            None => true,
            Some(b) => r.value > b.value || (r.value == b.value && r.x[1] < b.x[1]),
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::NonFinite("boundary likelihood is -inf everywhere".into()))?;
    let (u, phi) = (best.x[0], best.x[1]);
    Ok(QubitMle {
        tau: HypersphericalParams::qubit(u, 0.0, phi)?,
        bloch: bloch_from_angles(u, 0.0, phi),
        on_boundary: true,
        log_likelihood: best.value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub tau: HypersphericalParams,
    /// Negative Hessian of the log-likelihood at the maximum, order
    /// `(u, theta, phi)`.
    pub precision: [[f64; 3]; 3],
    pub covariance: [[f64; 3]; 3],
}

/// Gaussian approximation of the likelihood around an interior maximum.
pub fn laplace_approximation(counts: &IdealCounts) -> Result<LaplaceReport> {
    let mle = mle_single_qubit(counts)?;
    if mle.on_boundary {
        return Err(Error::BoundaryMle);
    }
    let x0 = mle.tau.to_flat();
    let f = |x: &[f64; 3]| counts.log_likelihood(x[0], x[1], x[2]);
    let h = LAPLACE_STEP;
    let mut a = Matrix3::<f64>::zeros();
    let at = |d: &[(usize, f64)]| {
        let mut x = [x0[0], x0[1], x0[2]];
        for (i, s) in d {
            x[*i] += s;
        }
        f(&x)
    };
    let f0 = at(&[]);
    for i in 0..3 {
        a[(i, i)] = -(at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = -(at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("Hessian is not finite at the maximum".into()));
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::Degenerate(format!(
            "Hessian is not positive definite at tau = {x0:?}, a flat direction exists"
        ))
    })?;
    let cov = chol.inverse();
    let to_arr = |m: &Matrix3<f64>| std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
    Ok(LaplaceReport {
        tau: mle.tau,
        precision: to_arr(&a),
        covariance: to_arr(&cov),
    })
}

/// `∫_0^{π/2} sin^x u cos^y u du = B((1+x)/2, (1+y)/2) / 2`.
pub fn beta_integral_halfpi(x: u32, y: u32) -> f64 {
    0.5 * ln_beta((1.0 + x as f64) / 2.0, (1.0 + y as f64) / 2.0).exp()
}

/// `∫_0^{2π} sin^x φ cos^y φ dφ`, zero unless both powers are even.
pub fn beta_integral_2pi(x: u32, y: u32) -> f64 {
    if x % 2 == 1 || y % 2 == 1 {
        0.0
    } else {
        2.0 * ln_beta((1.0 + x as f64) / 2.0, (1.0 + y as f64) / 2.0).exp()
    }
}

/// Moment exponents `[u0, u1, t0, t1, f0, f1]`: powers of `cos u`, `sin u`,
/// `cos θ`, `sin θ`, `cos φ`, `sin φ`.
pub type MomentIndex = [u32; 6];

/// A moment held as `mantissa * exp(ln_scale)`, so very small values from
/// large data sets stay representable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FMoment {
    pub mantissa: f64,
    pub ln_scale: f64,
    /// Fixed-point precision that met the error target.
    pub precision_bits: u64,
}

impl FMoment {
    pub fn zero() -> Self {
        Self {
            mantissa: 0.0,
            ln_scale: 0.0,
            precision_bits: 0,
        }
    }

    /// The plain value; underflows to zero for large counts.
    pub fn value(&self) -> f64 {
        self.mantissa * self.ln_scale.exp()
    }

    /// Natural log of a positive moment.
    pub fn ln(&self) -> f64 {
        self.mantissa.ln() + self.ln_scale
    }

    /// Sum of two moments on a common scale.
    pub fn add(&self, other: &FMoment) -> FMoment {
        let scale = self.ln_scale.max(other.ln_scale);
        let part = |m: &FMoment| {
            if m.mantissa == 0.0 {
                0.0
            } else {
                m.mantissa * (m.ln_scale - scale).exp()
            }
        };
        FMoment {
            mantissa: part(self) + part(other),
            ln_scale: scale,
            precision_bits: self.precision_bits.max(other.precision_bits),
        }
    }

    pub fn ratio(&self, other: &FMoment) -> f64 {
        if self.mantissa == 0.0 {
            return 0.0;
        }
        self.mantissa / other.mantissa * (self.ln_scale - other.ln_scale).exp()
    }
}

// Integer coefficients of (1 + x)^p (1 - x)^m.
fn expansion(p: u64, m: u64) -> Vec<BigInt> {
    let mut c = vec![BigInt::one()];
    for k in 0..p + m {
        let sign_minus = k >= p;
        let mut next = vec![BigInt::zero(); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            if sign_minus {
                next[i + 1] -= v;
            } else {
                next[i + 1] += v;
            }
        }
        c = next;
    }
    c
}

fn bits(v: &BigInt) -> u64 {
    v.bits()
}

struct FSum<'a> {
    c: &'a IdealCounts,
    idx: MomentIndex,
    ed: Vec<BigInt>,
    ec: Vec<BigInt>,
    mx0: usize,
    my0: usize,
}

impl FSum<'_> {
    // Exact rational factor G(M + 2) / G(M) for the u and theta integrals.
    fn radial_step(&self, m: u64) -> (u128, u128) {
        let [u0, u1, t0, t1, _, _] = self.idx.map(u64::from);
        let a2 = (4 + 2 * self.c.v + m + u1) as u128;
        let b2 = (4 + 2 * self.c.h + m + u0) as u128;
        let ta = (2 + t1) as u128;
        let tb = (2 + m + t0) as u128;
        (a2 * b2 * tb, (a2 + b2) * (a2 + b2 + 2) * (ta + tb))
    }

    fn phi_terms(&self, mx: usize, my: usize) -> (u128, u128) {
        let [_, _, _, _, f0, f1] = self.idx;
        ((1 + mx as u128 + f0 as u128), (1 + my as u128 + f1 as u128))
    }

    fn ln_base(&self) -> f64 {
        let [u0, u1, t0, t1, f0, f1] = self.idx.map(f64::from);
        let m = (self.mx0 + self.my0) as f64;
        let (cv, ch) = (self.c.v as f64, self.c.h as f64);
        let lu = (0.5f64).ln() + ln_beta((4.0 + 2.0 * cv + m + u1) / 2.0, (4.0 + 2.0 * ch + m + u0) / 2.0);
        let lt = (0.5f64).ln() + ln_beta((2.0 + t1) / 2.0, (2.0 + m + t0) / 2.0);
        let lp = (2.0f64).ln() + ln_beta((1.0 + self.mx0 as f64 + f0) / 2.0, (1.0 + self.my0 as f64 + f1) / 2.0);
        (8.0 / std::f64::consts::SQRT_2).ln() - (self.c.n_d() + self.c.n_c()) as f64 * LN_2 + lu + lt + lp
    }

    // Sum in units of G(base) * 2^-p, plus the (steps * |terms|) error bound.
    fn evaluate(&self, p: u64) -> BigInt {
        let base = BigInt::one() << p;
        let mut total = BigInt::zero();
        let mut column_head = base.clone();
        let mut mx = self.mx0;
        while mx < self.ed.len() {
            let mut g = column_head.clone();
            let mut inner = BigInt::zero();
            let mut my = self.my0;
            while my < self.ec.len() {
                if !self.ec[my].is_zero() {
                    inner += (&self.ec[my] << my) * &g;
                }
                let (rn, rd) = self.radial_step((mx + my) as u64);
                let (fa, fb) = self.phi_terms(mx, my);
                g = (&g * BigInt::from(rn * fb)) / BigInt::from(rd * (fa + fb));
                my += 2;
            }
            if !self.ed[mx].is_zero() {
                total += (&self.ed[mx] << mx) * inner;
            }
            let (rn, rd) = self.radial_step((mx + self.my0) as u64);
            let (fa, fb) = self.phi_terms(mx, self.my0);
            column_head = (&column_head * BigInt::from(rn * fa)) / BigInt::from(rd * (fa + fb));
            mx += 2;
        }
        total
    }

    fn abs_weight(&self) -> BigInt {
        let side =
            |e: &[BigInt], start: usize| -> BigInt { (start..e.len()).step_by(2).map(|m| e[m].abs() << m).sum() };
        side(&self.ed, self.mx0) * side(&self.ec, self.my0)
    }
}

fn f_moment_with_floor(idx: MomentIndex, counts: &IdealCounts, ln_floor: Option<f64>) -> FMoment {
    let mx0 = (idx[4] % 2) as usize;
    let my0 = (idx[5] % 2) as usize;
    if mx0 as u64 > counts.n_d() || my0 as u64 > counts.n_c() {
        return FMoment::zero();
    }
    let sum = FSum {
        c: counts,
        idx,
        ed: expansion(counts.d, counts.a),
        ec: expansion(counts.l, counts.r),
        mx0,
        my0,
    };
    let ln_prefactor = sum.ln_base();
    let steps = (counts.n_d() + counts.n_c()) / 2 + 2;
    let err_bits = bits(&(sum.abs_weight() * BigInt::from(steps)));
    let mut p = err_bits + 64;
    loop {
        let s = sum.evaluate(p);
        // error <= steps * weight units; require it below 2^-60 of the
        // result, or of the floor for moments that may vanish
        let s_bits = if s.is_zero() { 0 } else { bits(&s) - 1 };
        let floor_bits = ln_floor
            .map(|lf| ((lf - ln_prefactor) / LN_2 + p as f64).floor().max(0.0) as u64)
            .unwrap_or(0);
        let have = s_bits.max(floor_bits);
        if have >= err_bits + 60 {
            let (mantissa, shift) = to_f64_scaled(&s);
            return FMoment {
                mantissa,
                ln_scale: ln_prefactor + (shift as f64 - p as f64) * LN_2,
                precision_bits: p,
            };
        }
        p += err_bits + 60 - have + 16;
    }
}

fn to_f64_scaled(v: &BigInt) -> (f64, i64) {
    let b = v.bits();
    if b <= 62 {
        let (sign, digits) = v.to_u64_digits();
        let mag = digits.first().copied().unwrap_or(0) as f64;
        return (if sign == Sign::Minus { -mag } else { mag }, 0);
    }
    let shift = b - 62;
    let top: BigInt = v >> shift;
    let (sign, digits) = top.to_u64_digits();
    let mag = digits.first().copied().unwrap_or(0) as f64;
    (if sign == Sign::Minus { -mag } else { mag }, shift as i64)
}

/// Moment `F[idx]` of the single-qubit posterior, computed exactly to a
/// relative error below 2^-60.
pub fn bme_moment_f(idx: MomentIndex, counts: &IdealCounts) -> FMoment {
    f_moment_with_floor(idx, counts, None)
}

/// Closed-form Bayesian mean under the Haar prior. Above
/// [`CLOSED_FORM_MAX_TOTAL`] counts the mean is estimated by slice sampling
/// instead, with Monte Carlo error of order the posterior width over
/// `sqrt(20000)`.
pub fn bme_closed_form(counts: &IdealCounts) -> Result<DensityMatrix> {
    if counts.total() > CLOSED_FORM_MAX_TOTAL {
        return bme_sampled(
            counts,
            &BurnInConfig {
                samples: 20_000,
                ..Default::default()
            },
            FALLBACK_SEED,
        );
    }
    // F0 = F[2,0,..] + F[0,2,..] exactly; normalizing by the sum keeps the
    // trace at 1 to rounding even when the Beta prefactors carry error
    let f0 = bme_moment_f([0; 6], counts);
    let floor = Some(f0.ln());
    let m = |idx: MomentIndex| f_moment_with_floor(idx, counts, floor);
    let (d0, d1) = (m([2, 0, 0, 0, 0, 0]), m([0, 2, 0, 0, 0, 0]));
    let norm = d0.add(&d1);
    let re = m([1, 1, 1, 0, 1, 0]).ratio(&norm);
    let im = m([1, 1, 1, 0, 0, 1]).ratio(&norm);
    let r00 = d0.ratio(&norm);
    let r11 = 1.0 - r00;
    let c = num_complex::Complex64::new;
    let mat = CMatrix::from_row_slice(2, 2, &[c(r00, 0.0), c(re, -im), c(re, im), c(r11, 0.0)]);
    DensityMatrix::new(mat)
}

/// Posterior over `(u, theta, phi)` for ideal counts.
pub struct QubitPosterior {
    counts: IdealCounts,
    haar: bool,
    specs: Vec<ParamSpec>,
}

impl QubitPosterior {
    pub fn haar(counts: IdealCounts) -> Self {
        Self {
            counts,
            haar: true,
            specs: density::param_specs(2),
        }
    }

    /// Likelihood only, flat in the angles.
    pub fn flat(counts: IdealCounts) -> Self {
        Self {
            haar: false,
            ..Self::haar(counts)
        }
    }
}

impl LogDensity for QubitPosterior {
    fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let prior = if self.haar {
            let m = density::qubit_haar_closed_form(x[0], x[1]);
            if m > 0.0 {
                m.ln()
            } else {
                return f64::NEG_INFINITY;
            }
        } else {
            0.0
        };
        prior + self.counts.log_likelihood(x[0], x[1], x[2])
    }
}

/// Bayesian mean by slice sampling the Haar-prior posterior.
pub fn bme_sampled(counts: &IdealCounts, config: &BurnInConfig, seed: u64) -> Result<DensityMatrix> {
    let target = QubitPosterior::haar(*counts);
    let samples = sampler::run_chains(&target, config, seed)?;
    sampler::posterior_mean_density(&samples, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn table1() -> IdealCounts {
        IdealCounts::new(7, 3, 7, 3, 0, 10)
    }

    #[test]
    fn lie_examples() {
        let b = lie_estimate(&table1()).unwrap();
        assert_abs_diff_eq!(b.z, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(b.x, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y, -1.0, epsilon = 1e-15);
        assert!(!is_physical(&b));
        assert_abs_diff_eq!(b.norm(), 1.149, epsilon = 1e-3);
        let b = lie_estimate(&IdealCounts::new(5, 5, 5, 5, 5, 5)).unwrap();
        assert_eq!((b.z, b.x, b.y), (0.0, 0.0, 0.0));
        let b = lie_estimate(&IdealCounts::new(10, 0, 5, 5, 5, 5)).unwrap();
        assert_eq!((b.z, b.x, b.y), (1.0, 0.0, 0.0));
        assert!(lie_estimate(&IdealCounts::new(0, 0, 1, 1, 1, 1)).is_err());
    }

    #[test]
    fn table1_mle_on_boundary() {
        let m = mle_single_qubit(&table1()).unwrap();
        assert!(m.on_boundary);
        assert_abs_diff_eq!(m.bloch.z, 0.263, epsilon = 1e-3);
        assert_abs_diff_eq!(m.bloch.x, 0.263, epsilon = 1e-3);
        assert_abs_diff_eq!(m.bloch.y, -0.928, epsilon = 1e-3);
        assert_abs_diff_eq!(m.bloch.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_mle_equals_lie() {
        let c = IdealCounts::new(6, 4, 7, 3, 4, 6);
        let m = mle_single_qubit(&c).unwrap();
        let lie = lie_estimate(&c).unwrap();
        assert!(!m.on_boundary);
        assert_eq!(m.bloch, lie);
        let rho = density::density_from_params(&m.tau);
        let b = density::pauli_expectations(&rho).unwrap();
        assert_abs_diff_eq!(b.z, lie.z, epsilon = 1e-12);
        assert_abs_diff_eq!(b.x, lie.x, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y, lie.y, epsilon = 1e-12);
        let m = mle_single_qubit(&IdealCounts::new(5, 5, 5, 5, 5, 5)).unwrap();
        assert_eq!((m.bloch.z, m.bloch.x, m.bloch.y), (0.0, 0.0, 0.0));
    }

    #[test]
    fn boundary_mle_beats_grid_search() {
        let c = IdealCounts::new(8, 2, 8, 2, 8, 2);
        let m = mle_single_qubit(&c).unwrap();
        assert!(m.on_boundary);
        assert_abs_diff_eq!(m.bloch.norm(), 1.0, epsilon = 1e-6);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..800 {
                let u = FRAC_PI_2 * i as f64 / 400.0;
                let phi = TAU * j as f64 / 800.0;
                let v = c.log_likelihood(u, 0.0, phi);
                if v > best.0 {
                    best = (v, u, phi);
                }
            }
        }
        assert!(m.log_likelihood >= best.0 - 1e-9);
        let g = bloch_from_angles(best.1, 0.0, best.2);
        assert!((g.z - m.bloch.z).abs() < 1e-2 && (g.x - m.bloch.x).abs() < 1e-2);
    }

    #[test]
    fn laplace_errors_and_success() {
        assert!(matches!(laplace_approximation(&table1()), Err(Error::BoundaryMle)));
        // symmetric counts put the maximum at the centre where phi is flat
        assert!(matches!(
            laplace_approximation(&IdealCounts::new(50, 50, 50, 50, 50, 50)),
            Err(Error::Degenerate(_))
        ));
        let r = laplace_approximation(&IdealCounts::new(500, 500, 800, 200, 700, 300)).unwrap();
        let p = r.precision;
        for i in 0..3 {
            assert!(p[i][i] > 0.0);
            let off: f64 = (0..3).filter(|j| *j != i).map(|j| p[i][j].abs()).sum();
            assert!(p[i][i] > off, "row {i} not diagonally dominant: {p:?}");
        }
    }

    #[test]
    fn beta_integrals() {
        assert_abs_diff_eq!(beta_integral_halfpi(0, 0), FRAC_PI_2, epsilon = 1e-14);
        assert_abs_diff_eq!(beta_integral_halfpi(1, 1), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(beta_integral_halfpi(3, 3), 1.0 / 12.0, epsilon = 1e-14);
        assert_eq!(beta_integral_2pi(1, 0), 0.0);
        assert_abs_diff_eq!(beta_integral_2pi(0, 0), TAU, epsilon = 1e-13);
        assert_abs_diff_eq!(beta_integral_2pi(2, 2), PI / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_data_moments() {
        let c = IdealCounts::default();
        let f0 = bme_moment_f([0; 6], &c);
        // total Haar volume: ∫ sin³2u du · ∫ sin2θ dθ · 2π / (2√2)
        let vol = (2.0 / 3.0) * 1.0 * TAU / (2.0 * std::f64::consts::SQRT_2);
        assert_abs_diff_eq!(f0.value(), vol, epsilon = 1e-14);
        let f2 = bme_moment_f([2, 0, 0, 0, 0, 0], &c);
        assert_abs_diff_eq!(f2.ratio(&f0), 0.5, epsilon = 1e-15);
        let rho = bme_closed_form(&c).unwrap();
        let diff = (rho.matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm();
        assert!(diff < 1e-14, "{diff} {rho:?}");
    }

    #[test]
    fn table1_counts_bme_matches_independent_integration() {
        // reference values from a 200x200x400 Gauss-Legendre rule and a
        // 60-digit term-by-term series, both built outside this crate
        let rho = bme_closed_form(&table1()).unwrap();
        let b = density::pauli_expectations(&rho).unwrap();
        assert_abs_diff_eq!(b.z, 0.224_586_078_070_49, epsilon = 1e-12);
        assert_abs_diff_eq!(b.x, 0.224_586_078_070_49, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y, -0.730_729_576_290_01, epsilon = 1e-12);
    }

    #[test]
    fn swapping_h_and_v_negates_z() {
        let a = IdealCounts::new(9, 2, 4, 6, 3, 8);
        let b = IdealCounts::new(2, 9, 4, 6, 3, 8);
        let za = density::pauli_expectations(&bme_closed_form(&a).unwrap()).unwrap();
        let zb = density::pauli_expectations(&bme_closed_form(&b).unwrap()).unwrap();
        assert_abs_diff_eq!(za.z, -zb.z, epsilon = 1e-15);
        assert_abs_diff_eq!(za.x, zb.x, epsilon = 1e-15);
    }

    #[test]
    fn large_balanced_counts_converge() {
        let truth = bloch_from_angles(0.864, 0.393, 5.18);
        let n = 400.0;
        let c = |p: f64| (n * p).round() as u64;
        let counts = IdealCounts::new(
            c((1.0 + truth.z) / 2.0),
            c((1.0 - truth.z) / 2.0),
            c((1.0 + truth.x) / 2.0),
            c((1.0 - truth.x) / 2.0),
            c((1.0 + truth.y) / 2.0),
            c((1.0 - truth.y) / 2.0),
        );
        let b = density::pauli_expectations(&bme_closed_form(&counts).unwrap()).unwrap();
        assert!((b.z - truth.z).abs() < 0.02 && (b.x - truth.x).abs() < 0.02 && (b.y - truth.y).abs() < 0.03);
    }

    #[test]
    fn moments_stay_accurate_with_heavy_cancellation() {
        // same data at two scales; the closed form must remain a valid state
        let counts = IdealCounts::new(300, 200, 350, 150, 100, 400);
        let rho = bme_closed_form(&counts).unwrap();
        let b = density::pauli_expectations(&rho).unwrap();
        assert!(b.norm() < 1.0);
        let lie = lie_estimate(&counts).unwrap();
        assert!((b.z - lie.z).abs() < 0.05 && (b.x - lie.x).abs() < 0.05 && (b.y - lie.y).abs() < 0.05);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn bme_is_a_strictly_interior_state(c in prop::array::uniform6(0u64..170)) {
                let counts = IdealCounts::from_slice(&c).unwrap();
                let rho = bme_closed_form(&counts).unwrap();
                let b = density::pauli_expectations(&rho).unwrap();
                prop_assert!(b.norm() < 1.0);
                prop_assert!(bme_moment_f([0; 6], &counts).mantissa > 0.0);
            }
        }
    }
}
