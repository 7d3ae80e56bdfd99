//! Hyperspherical (Daboul) parametrization of density matrices.
//!
//! A state of dimension `n` is written as `rho = L L^dagger` where `L` is
//! lower triangular and every entry is a product of trigonometric factors:
//!
//! ```text
//! L_ij = U_i V_ij                      (j <= i)
//! U_1  = cos(u_1)
//! U_k  = cos(u_k) prod_{j<k} sin(u_j)  (1 < k < n)
//! U_n  = prod_{j<n} sin(u_j)
//! V_ij = cos(theta_ij) e^{i phi_ij} prod_{m<j} sin(theta_im)   (j < i)
//! V_ii = prod_{m<i} sin(theta_im)
//! ```
//!
//! with `u_i, theta_ij` in `[0, pi/2]` and `phi_ij` in `[0, 2 pi)`. Any
//! in-range parameter vector gives a Hermitian, unit-trace, positive
//! semi-definite matrix.
//!
//! The flat parameter layout used by the samplers and optimizers is
//! `[u_1..u_{n-1}, theta (row-major lower triangle), phi (same order)]`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sampler::{self, LogDensity, ParamSpec};

pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_FLOOR: f64 = -1e-10;

/// Finite-difference step for the numerical metric.
pub const METRIC_FD_STEP: f64 = 1e-6;

/// Number of unit-trace Hermitian degrees of freedom, `n^2 - 1`.
pub fn param_count(n: usize) -> usize {
    n * n - 1
}

fn tri_len(n: usize) -> usize {
    n * (n - 1) / 2
}

// Packed index of (i, j), j < i, 0-based.
fn tri_index(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypersphericalParams {
    n: usize,
    u: Vec<f64>,
    theta: Vec<f64>,
    phi: Vec<f64>,
}

impl HypersphericalParams {
    /// Builds a validated parameter set. `theta` and `phi` are packed
    /// row-major over the strict lower triangle (`theta_21, theta_31,
    /// theta_32, ...`). `phi` values are wrapped into `[0, 2 pi)`.
    pub fn new(n: usize, u: Vec<f64>, theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(format!("dimension must be >= 2, got {n}")));
        }
        if u.len() != n - 1 || theta.len() != tri_len(n) || phi.len() != tri_len(n) {
            return Err(Error::Dimension(format!(
                "n={n} needs {} u, {} theta and {} phi values, got {}, {}, {}",
                n - 1,
                tri_len(n),
                tri_len(n),
                u.len(),
                theta.len(),
                phi.len()
            )));
        }
        for (name, vals) in [("u", &u), ("theta", &theta)] {
            if let Some(v) = vals.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > FRAC_PI_2) {
                return Err(Error::OutOfRange(format!("{name} = {v} outside [0, pi/2]")));
            }
        }
        if let Some(v) = phi.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("phi = {v}")));
        }
        let phi = phi.into_iter().map(wrap_angle).collect();
        Ok(Self { n, u, theta, phi })
    }

    /// Single-qubit parameters `(u, theta, phi)`.
    pub fn qubit(u: f64, theta: f64, phi: f64) -> Result<Self> {
        Self::new(2, vec![u], vec![theta], vec![phi])
    }

    /// Parses the flat layout `[u.., theta.., phi..]`.
    pub fn from_flat(n: usize, x: &[f64]) -> Result<Self> {
        if x.len() != param_count(n) {
            return Err(Error::Dimension(format!(
                "n={n} needs {} parameters, got {}",
                param_count(n),
                x.len()
            )));
        }
        let t = tri_len(n);
        Self::new(
            n,
            x[..n - 1].to_vec(),
            x[n - 1..n - 1 + t].to_vec(),
            x[n - 1 + t..].to_vec(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(param_count(self.n));
        v.extend_from_slice(&self.u);
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.phi);
        v
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// `theta_ij` with 1-based indices, `1 <= j < i <= n`.
    pub fn theta(&self, i: usize, j: usize) -> f64 {
        self.theta[tri_index(i - 1, j - 1)]
    }

    /// `phi_ij` with 1-based indices, `1 <= j < i <= n`.
    pub fn phi(&self, i: usize, j: usize) -> f64 {
        self.phi[tri_index(i - 1, j - 1)]
    }
}

/// Parameter boxes in the flat layout. `u` and `theta` are hard-bounded,
/// `phi` is cyclic.
pub fn param_specs(n: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::with_capacity(param_count(n));
    for k in 1..n {
        specs.push(ParamSpec::bounded(format!("u{k}"), 0.0, FRAC_PI_2));
    }
    for i in 2..=n {
        for j in 1..i {
            specs.push(ParamSpec::bounded(format!("theta{i}{j}"), 0.0, FRAC_PI_2));
        }
    }
    for i in 2..=n {
        for j in 1..i {
            specs.push(ParamSpec::cyclic(format!("phi{i}{j}"), 0.0, TAU));
        }
    }
    specs
}

pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

// U_i, or its derivative with respect to u_d.
fn radial(u: &[f64], n: usize, i: usize, d: Option<usize>) -> f64 {
    let has_cos = i < n - 1;
    if let Some(d) = d {
        if !(d < i || (d == i && has_cos)) {
            return 0.0;
        }
    }
    let mut v = 1.0;
    for (j, uj) in u.iter().enumerate().take(i.min(n - 1)) {
        v *= if d == Some(j) { uj.cos() } else { uj.sin() };
    }
    if has_cos {
        v *= if d == Some(i) { -u[i].sin() } else { u[i].cos() };
    }
    v
}

#[derive(Clone, Copy, PartialEq)]
enum AngularDerivative {
    None,
    Theta(usize),
    Phi(usize),
}

// V_ij, or its derivative with respect to theta_{i,d} / phi_{i,d}.
fn angular(theta: &[f64], phi: &[f64], i: usize, j: usize, d: AngularDerivative) -> Complex64 {
    if i == 0 {
        return if d == AngularDerivative::None {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    match d {
        AngularDerivative::Theta(k) if k > j || (k == j && j == i) => return Complex64::new(0.0, 0.0),
        AngularDerivative::Phi(k) if k != j || j == i => return Complex64::new(0.0, 0.0),
        _ => {}
    }
    let mut mag = 1.0;
    for m in 0..j {
        let t = theta[tri_index(i, m)];
        mag *= if d == AngularDerivative::Theta(m) {
            t.cos()
        } else {
            t.sin()
        };
    }
    if j == i {
        return Complex64::new(mag, 0.0);
    }
    let t = theta[tri_index(i, j)];
    mag *= if d == AngularDerivative::Theta(j) {
        -t.sin()
    } else {
        t.cos()
    };
    let p = phi[tri_index(i, j)];
    let phase = Complex64::from_polar(1.0, p);
    if d == AngularDerivative::Phi(j) {
        Complex64::new(0.0, mag) * phase
    } else {
        phase * mag
    }
}

fn split(n: usize, x: &[f64]) -> (&[f64], &[f64], &[f64]) {
    let t = tri_len(n);
    (&x[..n - 1], &x[n - 1..n - 1 + t], &x[n - 1 + t..])
}

/// Cholesky factor from a flat parameter slice, without range validation.
pub fn cholesky_from_flat(n: usize, x: &[f64]) -> CMatrix {
    let (u, theta, phi) = split(n, x);
    let mut l = CMatrix::zeros(n, n);
    for i in 0..n {
        let ui = radial(u, n, i, None);
        for j in 0..=i {
            l[(i, j)] = angular(theta, phi, i, j, AngularDerivative::None) * ui;
        }
    }
    l
}

// Derivative of L with respect to flat parameter k.
fn cholesky_derivative(n: usize, x: &[f64], k: usize) -> CMatrix {
    let (u, theta, phi) = split(n, x);
    let t = tri_len(n);
    let mut dl = CMatrix::zeros(n, n);
    if k < n - 1 {
        for i in 0..n {
            let du = radial(u, n, i, Some(k));
            if du == 0.0 {
                continue;
            }
            for j in 0..=i {
                dl[(i, j)] = angular(theta, phi, i, j, AngularDerivative::None) * du;
            }
        }
        return dl;
    }
    let (packed, is_phi) = if k < n - 1 + t {
        (k - (n - 1), false)
    } else {
        (k - (n - 1) - t, true)
    };
    // recover (row, col) of the packed index
    let mut row = 1;
    while tri_index(row + 1, 0) <= packed {
        row += 1;
    }
    let col = packed - tri_index(row, 0);
    let d = if is_phi {
        AngularDerivative::Phi(col)
    } else {
        AngularDerivative::Theta(col)
    };
    let ui = radial(u, n, row, None);
    for j in 0..=row {
        dl[(row, j)] = angular(theta, phi, row, j, d) * ui;
    }
    dl
}

/// `rho = L L^dagger` from a flat parameter slice, without validation.
/// Two-qubit Cholesky factor as a fixed-size array, for hot loops.
pub fn cholesky4_from_flat(x: &[f64]) -> [[Complex64; 4]; 4] {
    let (u, theta, phi) = split(4, x);
    let mut l = [[Complex64::new(0.0, 0.0); 4]; 4];
    let mut sin_prefix = 1.0;
    for i in 0..4 {
        let r = if i < 3 {
            let (s, c) = u[i].sin_cos();
            let r = sin_prefix * c;
            sin_prefix *= s;
            r
        } else {
            sin_prefix
        };
        let mut mag = r;
        for j in 0..i {
            let k = tri_index(i, j);
            let (s, c) = theta[k].sin_cos();
            l[i][j] = Complex64::from_polar(mag * c, phi[k]);
            mag *= s;
        }
        l[i][i] = Complex64::new(mag, 0.0);
    }
    l
}

pub fn density_from_flat(n: usize, x: &[f64]) -> CMatrix {
    let l = cholesky_from_flat(n, x);
    &l * l.adjoint()
}

pub fn cholesky_factor(tau: &HypersphericalParams) -> CMatrix {
    cholesky_from_flat(tau.n, &tau.to_flat())
}

pub fn density_from_params(tau: &HypersphericalParams) -> DensityMatrix {
    DensityMatrix(density_from_flat(tau.n, &tau.to_flat()))
}

// Re Tr(A B) for Hermitian A, B.
fn hs_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

fn gram_sqrt_det(partials: &[CMatrix]) -> f64 {
    let k = partials.len();
    let mut g = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = hs_inner(&partials[a], &partials[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    let det = g.determinant();
    if det > 0.0 && det.is_finite() {
        det.sqrt()
    } else {
        0.0
    }
}

/// `sqrt(det g)` with `g_ij = Tr(d rho/d tau_i . d rho/d tau_j)`, partials by
/// central differences with step [`METRIC_FD_STEP`]. Probes for bounded
/// parameters are kept inside their range.
pub fn metric_determinant_sqrt(tau: &HypersphericalParams) -> f64 {
    metric_sqrt_det_fd(tau.n, &tau.to_flat(), METRIC_FD_STEP)
}

pub fn metric_sqrt_det_fd(n: usize, x: &[f64], h: f64) -> f64 {
    let specs = param_specs(n);
    let mut probe = x.to_vec();
    let partials: Vec<CMatrix> = specs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (lo, hi) = if s.cyclic {
                (x[k] - h, x[k] + h)
            } else {
                ((x[k] - h).max(s.lower), (x[k] + h).min(s.upper))
            };
            probe[k] = hi;
            let plus = density_from_flat(n, &probe);
            probe[k] = lo;
            let minus = density_from_flat(n, &probe);
            probe[k] = x[k];
            (plus - minus).unscale(hi - lo)
        })
        .collect();
    gram_sqrt_det(&partials)
}

/// Same quantity as [`metric_determinant_sqrt`] with the partials of `rho`
/// formed from exact derivatives of the Cholesky factor. This is the route
/// used inside posterior densities.
pub fn metric_sqrt_det_exact(n: usize, x: &[f64]) -> f64 {
    let l = cholesky_from_flat(n, x);
    let la = l.adjoint();
    let partials: Vec<CMatrix> = (0..param_count(n))
        .map(|k| {
            let dl = cholesky_derivative(n, x, k);
            let a = &dl * &la;
            let at = a.adjoint();
            a + at
        })
        .collect();
    gram_sqrt_det(&partials)
}

// Log of sqrt(det g) up to an n-dependent constant. The map L -> L L^dagger
// contributes prod l_ii^(2(n-i)-1) (rows from 0); the remaining factors are the surface
// element of the unit sphere of L in the nested polar coordinates.
fn log_haar_unnormalized(n: usize, x: &[f64]) -> f64 {
    let (u, theta, _) = split(n, x);
    let mut v = 0.0;
    let mut ln_sin_prefix = 0.0;
    for i in 0..n {
        let ln_r = if i < n - 1 {
            let (s, c) = u[i].sin_cos();
            if s <= 0.0 || c <= 0.0 {
                return f64::NEG_INFINITY;
            }
            // u_i also enters every later row through sin u_i
            v += (n - 2 - i) as f64 * s.ln();
            let r = ln_sin_prefix + c.ln();
            ln_sin_prefix += s.ln();
            r
        } else {
            ln_sin_prefix
        };
        let mut ln_l = ln_r;
        for j in 0..i {
            let (s, c) = theta[tri_index(i, j)].sin_cos();
            if s <= 0.0 || c <= 0.0 {
                return f64::NEG_INFINITY;
            }
            v += (i - 1 - j) as f64 * s.ln();
            // |L_ij| / r_i
            v += ln_l - ln_r + c.ln();
            ln_l += s.ln();
        }
        v += (2 * (n - i) - 1) as f64 * ln_l + (2 * i) as f64 * ln_r;
    }
    v
}

fn log_haar_constant(n: usize) -> f64 {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    *map.entry(n).or_insert_with(|| {
        let x: Vec<f64> = param_specs(n)
            .iter()
            .map(|s| s.lower + 0.37 * (s.upper - s.lower))
            .collect();
        metric_sqrt_det_exact(n, &x).ln() - log_haar_unnormalized(n, &x)
    })
}

/// Natural log of the Haar-invariant measure density in closed product
/// form; `-inf` where the metric degenerates.
pub fn log_haar_density(n: usize, x: &[f64]) -> f64 {
    let v = log_haar_unnormalized(n, x);
    if v == f64::NEG_INFINITY {
        v
    } else {
        v + log_haar_constant(n)
    }
}

/// A validated `n x n` Hermitian, unit-trace, positive semi-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        validate_density(&m)?;
        Ok(Self(m))
    }

    /// Wraps a matrix built by a construction that guarantees validity.
    pub fn from_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state vector norm^2 = {norm}")));
        }
        let n = psi.len();
        Ok(Self(CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj())))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(CMatrix::identity(n, n).unscale(n as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.0)
    }
}

fn validate_density(m: &CMatrix) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!("{}x{} is not square", n, m.ncols())));
    }
    for i in 0..n {
        for j in 0..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL {
                return Err(Error::InvalidState(format!("not Hermitian at ({i},{j})")));
            }
        }
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace = {tr}")));
    }
    let min = hermitian_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min);
    if min < PSD_FLOOR {
        return Err(Error::InvalidState(format!("eigenvalue {min} < 0")));
    }
    Ok(())
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).unscale(2.0)
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    SymmetricEigen::new(hermitize(m)).eigenvalues.iter().copied().collect()
}

#[derive(Serialize, Deserialize)]
struct DensityJson {
    n: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| f(&self.0[(i, j)])).collect()).collect()
        };
        DensityJson {
            n,
            re: rows(|c| c.re),
            im: rows(|c| c.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = DensityJson::deserialize(d)?;
        let n = j.n;
        if j.re.len() != n || j.im.len() != n || j.re.iter().chain(&j.im).any(|r| r.len() != n) {
            return Err(D::Error::custom(format!("expected {n}x{n} re/im arrays")));
        }
        let m = CMatrix::from_fn(n, n, |i, k| Complex64::new(j.re[i][k], j.im[i][k]));
        DensityMatrix::new(m).map_err(D::Error::custom)
    }
}

/// Pauli expectations `(z, x, y)` of a single-qubit state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub z: f64,
    pub x: f64,
    pub y: f64,
}

impl BlochVector {
    pub fn new(z: f64, x: f64, y: f64) -> Self {
        Self { z, x, y }
    }

    pub fn norm(&self) -> f64 {
        (self.z * self.z + self.x * self.x + self.y * self.y).sqrt()
    }

    /// `(I + z sigma_z + x sigma_x + y sigma_y) / 2`; not validated, so an
    /// unphysical vector gives a matrix with a negative eigenvalue.
    pub fn to_matrix(&self) -> CMatrix {
        let off = Complex64::new(self.x, self.y) * 0.5;
        CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new((1.0 + self.z) / 2.0, 0.0),
                off.conj(),
                off,
                Complex64::new((1.0 - self.z) / 2.0, 0.0),
            ],
        )
    }
}

pub fn pauli_expectations(rho: &DensityMatrix) -> Result<BlochVector> {
    if rho.dim() != 2 {
        return Err(Error::Dimension(format!(
            "Bloch vector needs a 2x2 state, got {}x{}",
            rho.dim(),
            rho.dim()
        )));
    }
    let m = &rho.0;
    Ok(BlochVector {
        z: (m[(0, 0)] - m[(1, 1)]).re,
        x: 2.0 * m[(1, 0)].re,
        y: 2.0 * m[(1, 0)].im,
    })
}

fn pauli(label: char) -> CMatrix {
    let c = Complex64::new;
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    let v = match label {
        'I' => [l, o, o, l],
        'X' => [o, l, l, o],
        'Y' => [o, -i, i, o],
        _ => [l, o, o, -l],
    };
    CMatrix::from_row_slice(2, 2, &v)
}

/// `Tr(rho P_a (x) P_b)` for all 16 Pauli products, keyed like `"XZ"`
/// (first letter on the first qubit).
pub fn two_qubit_pauli_expectations(rho: &DensityMatrix) -> Result<std::collections::BTreeMap<String, f64>> {
    if rho.dim() != 4 {
        return Err(Error::Dimension(format!(
            "need a 4x4 state, got {}x{}",
            rho.dim(),
            rho.dim()
        )));
    }
    let mut out = std::collections::BTreeMap::new();
    for a in ['I', 'X', 'Y', 'Z'] {
        for b in ['I', 'X', 'Y', 'Z'] {
            let p = pauli(a).kronecker(&pauli(b));
            out.insert(format!("{a}{b}"), (&rho.0 * p).trace().re);
        }
    }
    Ok(out)
}

/// Half the sum of absolute eigenvalues of `rho - sigma`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Dimension(format!(
            "trace distance between {}x{} and {}x{}",
            rho.dim(),
            rho.dim(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    Ok(trace_distance_matrices(&rho.0, &sigma.0))
}

pub(crate) fn trace_distance_matrices(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>()
}

/// `sqrt(<psi| rho |psi>)`.
pub fn fidelity_with_pure(rho: &DensityMatrix, psi: &[Complex64]) -> Result<f64> {
    if psi.len() != rho.dim() {
        return Err(Error::Dimension(format!(
            "state vector of length {} against {}x{} matrix",
            psi.len(),
            rho.dim(),
            rho.dim()
        )));
    }
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidState(format!("state vector norm^2 = {norm}")));
    }
    let mut q = Complex64::new(0.0, 0.0);
    for i in 0..psi.len() {
        for j in 0..psi.len() {
            q += psi[i].conj() * rho.0[(i, j)] * psi[j];
        }
    }
    Ok(q.re.clamp(0.0, 1.0).sqrt())
}

/// `(|01> + |10>) / sqrt(2)`.
pub fn psi_plus() -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        Complex64::new(0.0, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(0.0, 0.0),
    ]
}

/// Log-target `ln sqrt(det g)` over the parameter box.
pub struct HaarTarget {
    n: usize,
    specs: Vec<ParamSpec>,
}

impl HaarTarget {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            specs: param_specs(n),
        }
    }
}

impl LogDensity for HaarTarget {
    fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        log_haar_density(self.n, x)
    }
}

/// Gibbs sweeps discarded before a Haar draw is returned.
pub const HAAR_BURN_IN_SWEEPS: usize = 64;

/// Draws parameters distributed according to the Haar-invariant measure by
/// running an independent slice-sampling chain from a uniform start.
pub fn haar_uniform_sample<R: Rng>(rng: &mut R, n: usize) -> Result<HypersphericalParams> {
    if n != 2 && n != 4 {
        return Err(Error::Dimension(format!("Haar sampling supports n = 2 or 4, got {n}")));
    }
    let mut chain = HaarChain::new(rng, n)?;
    for _ in 0..HAAR_BURN_IN_SWEEPS {
        chain.step(rng)?;
    }
    HypersphericalParams::from_flat(n, &chain.state.x)
}

/// A persistent Haar-measure chain for drawing many correlated samples
/// cheaply; `thin` sweeps separate consecutive outputs.
pub struct HaarChain {
    target: HaarTarget,
    state: sampler::ChainState,
    widths: Vec<f64>,
}

impl HaarChain {
    pub fn new<R: Rng>(rng: &mut R, n: usize) -> Result<Self> {
        let target = HaarTarget::new(n);
        let state = sampler::random_start(&target, rng, 0)?;
        let widths = target.specs.iter().map(|s| s.width).collect();
        Ok(Self { target, state, widths })
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        sampler::gibbs_sweep(&self.target, &mut self.state, &self.widths, rng)?;
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R, thin: usize) -> Result<HypersphericalParams> {
        for _ in 0..thin.max(1) {
            self.step(rng)?;
        }
        HypersphericalParams::from_flat(self.target.n, &self.state.x)
    }
}

/// Single-qubit Haar measure in closed form, `sin^3(2u) sin(2 theta) / (2 sqrt 2)`.
pub fn qubit_haar_closed_form(u: f64, theta: f64) -> f64 {
    (2.0 * u).sin().powi(3) * (2.0 * theta).sin() / (2.0 * std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_flat(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        param_specs(n)
            .iter()
            .map(|s| rng.random_range(s.lower..s.upper))
            .collect()
    }

    #[test]
    fn qubit_factor_at_u_zero_is_projector() {
        let l = cholesky_factor(&HypersphericalParams::qubit(0.0, 1.1, 4.0).unwrap());
        assert_abs_diff_eq!(l[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert!(l[(1, 0)].norm() < 1e-15 && l[(1, 1)].norm() < 1e-15);
    }

    #[test]
    fn qubit_factor_at_quarter_pi() {
        let l = cholesky_factor(&HypersphericalParams::qubit(PI / 4.0, 0.0, 0.0).unwrap());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(l[(0, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(l[(1, 1)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn qubit_density_matches_trig_form() {
        let (u, t, p) = (0.7, 0.3, 2.2);
        let rho = density_from_params(&HypersphericalParams::qubit(u, t, p).unwrap());
        let m = rho.matrix();
        let off = 0.5 * t.cos() * (2.0 * u).sin();
        assert_abs_diff_eq!(m[(0, 0)].re, u.cos().powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)].re, u.sin().powi(2), epsilon = 1e-15);
        assert!((m[(1, 0)] - Complex64::from_polar(off, p)).norm() < 1e-15);
        assert!((m[(0, 1)] - Complex64::from_polar(off, -p)).norm() < 1e-15);
    }

    #[test]
    fn psi_plus_pauli_correlations() {
        let e = two_qubit_pauli_expectations(&DensityMatrix::pure(&psi_plus()).unwrap()).unwrap();
        for (k, want) in [
            ("II", 1.0),
            ("XX", 1.0),
            ("YY", 1.0),
            ("ZZ", -1.0),
            ("XZ", 0.0),
            ("ZI", 0.0),
        ] {
            assert_abs_diff_eq!(e[k], want, epsilon = 1e-15);
        }
    }

    #[test]
    fn table_true_state_bloch_vector() {
        let rho = density_from_params(&HypersphericalParams::qubit(0.864, 0.393, 5.18).unwrap());
        let b = pauli_expectations(&rho).unwrap();
        // angles carry 3 significant figures, so phi = 5.18 is only known to
        // +-0.005; propagated through x and y that is up to 4.1e-3
        assert_abs_diff_eq!(b.z, -0.156, epsilon = 1.5e-3);
        assert_abs_diff_eq!(b.x, 0.414, epsilon = 5e-3);
        assert_abs_diff_eq!(b.y, -0.813, epsilon = 5e-3);
        // and the printed vector maps back to the printed angles at 3
        // significant figures
        let (z, x, y) = (-0.156f64, 0.414f64, -0.813f64);
        let u = z.acos() / 2.0;
        let theta = ((x * x + y * y) / (1.0 - z * z)).sqrt().acos();
        let phi = wrap_angle(y.atan2(x));
        assert_abs_diff_eq!(u, 0.864, epsilon = 5e-4);
        assert_abs_diff_eq!(theta, 0.393, epsilon = 1e-3);
        assert_abs_diff_eq!(phi, 5.18, epsilon = 5e-3);
    }

    #[test]
    fn u_half_pi_gives_excited_state() {
        let rho = density_from_params(&HypersphericalParams::qubit(FRAC_PI_2, 0.2, 0.1).unwrap());
        assert_abs_diff_eq!(rho.matrix()[(1, 1)].re, 1.0, epsilon = 1e-15);
        assert!(rho.matrix()[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn four_dim_maximally_mixed() {
        // U_k = 1/2 for all k and theta chosen so the off-diagonals vanish
        let u1 = (0.5f64).acos();
        let u2 = (0.5 / u1.sin()).acos();
        let u3 = (0.5 / (u1.sin() * u2.sin())).acos();
        let h = FRAC_PI_2;
        let tau = HypersphericalParams::new(4, vec![u1, u2, u3], vec![h; 6], vec![0.0; 6]).unwrap();
        let rho = density_from_params(&tau);
        let target = DensityMatrix::maximally_mixed(4);
        assert!((rho.matrix() - target.matrix()).norm() < 1e-12);
    }

    #[test]
    fn four_dim_factor_matches_explicit_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_flat(&mut rng, 4);
            let tau = HypersphericalParams::from_flat(4, &x).unwrap();
            let l = cholesky_factor(&tau);
            let (s, co) = (f64::sin, f64::cos);
            let u = tau.u();
            let t = |i, j| tau.theta(i, j);
            let e = |i, j| Complex64::from_polar(1.0, tau.phi(i, j));
            let r2 = s(u[0]) * co(u[1]);
            let r3 = s(u[0]) * s(u[1]) * co(u[2]);
            let r4 = s(u[0]) * s(u[1]) * s(u[2]);
            let expected = [
                ((0, 0), c(co(u[0]), 0.0)),
                ((1, 0), e(2, 1) * r2 * co(t(2, 1))),
                ((1, 1), c(r2 * s(t(2, 1)), 0.0)),
                ((2, 0), e(3, 1) * r3 * co(t(3, 1))),
                ((2, 1), e(3, 2) * r3 * s(t(3, 1)) * co(t(3, 2))),
                ((2, 2), c(r3 * s(t(3, 1)) * s(t(3, 2)), 0.0)),
                ((3, 0), e(4, 1) * r4 * co(t(4, 1))),
                ((3, 1), e(4, 2) * r4 * s(t(4, 1)) * co(t(4, 2))),
                ((3, 2), e(4, 3) * r4 * s(t(4, 1)) * s(t(4, 2)) * co(t(4, 3))),
                ((3, 3), c(r4 * s(t(4, 1)) * s(t(4, 2)) * s(t(4, 3)), 0.0)),
            ];
            for ((i, j), v) in expected {
                assert!((l[(i, j)] - v).norm() < 1e-12, "L[{i},{j}]");
            }
            for i in 0..4 {
                for j in i + 1..4 {
                    assert_eq!(l[(i, j)], c(0.0, 0.0));
                }
            }
            let tr = (&l * l.adjoint()).trace();
            assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_and_fd_metric_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 4] {
            for _ in 0..10 {
                let x: Vec<f64> = param_specs(n)
                    .iter()
                    .map(|s| {
                        let span = s.upper - s.lower;
                        rng.random_range(s.lower + 0.05 * span..s.upper - 0.05 * span)
                    })
                    .collect();
                let fd = metric_sqrt_det_fd(n, &x, METRIC_FD_STEP);
                let ex = metric_sqrt_det_exact(n, &x);
                assert!(ex > 0.0);
                assert!(((fd - ex) / ex).abs() < 1e-6, "n={n} fd={fd} exact={ex}");
            }
        }
    }

    #[test]
    fn fixed_size_factor_matches_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let x: Vec<f64> = param_specs(4)
                .iter()
                .map(|s| rng.random_range(s.lower..s.upper))
                .collect();
            let general = cholesky_from_flat(4, &x);
            let fixed = cholesky4_from_flat(&x);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((general[(i, j)] - fixed[i][j]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn product_form_matches_exact_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [2, 3, 4, 5] {
            for _ in 0..20 {
                let x: Vec<f64> = param_specs(n)
                    .iter()
                    .map(|s| {
                        let span = s.upper - s.lower;
                        rng.random_range(s.lower + 0.02 * span..s.upper - 0.02 * span)
                    })
                    .collect();
                let ex = metric_sqrt_det_exact(n, &x).ln();
                let pf = log_haar_density(n, &x);
                // the Gram determinant itself loses digits as n grows
                let tol = if n < 5 { 1e-10 } else { 1e-8 };
                assert!((ex - pf).abs() < tol, "n={n} exact={ex} product={pf}");
            }
        }
        let x = [0.7, 0.0, 1.0];
        assert_eq!(log_haar_density(2, &x), f64::NEG_INFINITY);
    }

    #[test]
    fn qubit_metric_closed_form_spot_value() {
        let tau = HypersphericalParams::qubit(PI / 4.0, PI / 4.0, 1.0).unwrap();
        let v = metric_determinant_sqrt(&tau);
        assert!((v - 1.0 / (2.0 * std::f64::consts::SQRT_2)).abs() < 1e-8);
    }

    #[test]
    fn metric_vanishes_at_degenerate_boundary() {
        let tau = HypersphericalParams::qubit(0.0, 0.5, 1.0).unwrap();
        assert!(metric_determinant_sqrt(&tau) < 1e-12);
    }

    #[test]
    fn pauli_expectations_basic_states() {
        let b = pauli_expectations(&DensityMatrix::maximally_mixed(2)).unwrap();
        assert_eq!((b.z, b.x, b.y), (0.0, 0.0, 0.0));
        let zero = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let b = pauli_expectations(&zero).unwrap();
        assert_eq!((b.z, b.x, b.y), (1.0, 0.0, 0.0));
        assert!(pauli_expectations(&DensityMatrix::maximally_mixed(4)).is_err());
    }

    #[test]
    fn trace_distance_examples() {
        let zero = DensityMatrix::pure(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let one = DensityMatrix::pure(&[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(trace_distance(&zero, &zero).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trace_distance(&zero, &one).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&mixed, &zero).unwrap(), 0.5, epsilon = 1e-14);
        assert!(trace_distance(&mixed, &DensityMatrix::maximally_mixed(4)).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let psi = psi_plus();
        let pure = DensityMatrix::pure(&psi).unwrap();
        assert_abs_diff_eq!(fidelity_with_pure(&pure, &psi).unwrap(), 1.0, epsilon = 1e-14);
        let mixed = DensityMatrix::maximally_mixed(4);
        assert_abs_diff_eq!(fidelity_with_pure(&mixed, &psi).unwrap(), 0.5, epsilon = 1e-14);
        let bad = vec![c(1.0, 0.0); 4];
        assert!(fidelity_with_pure(&mixed, &bad).is_err());
        assert!(fidelity_with_pure(&mixed, &psi[..2]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(HypersphericalParams::qubit(-0.1, 0.0, 0.0).is_err());
        assert!(HypersphericalParams::qubit(0.1, 2.0, 0.0).is_err());
        assert!(HypersphericalParams::new(2, vec![0.1, 0.2], vec![0.0], vec![0.0]).is_err());
        let wrapped = HypersphericalParams::qubit(0.1, 0.1, -1.0).unwrap();
        assert_abs_diff_eq!(wrapped.phi(2, 1), TAU - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let mut m = DensityMatrix::maximally_mixed(2).into_matrix();
        m[(0, 1)] = c(0.3, 0.0);
        assert!(DensityMatrix::new(m.clone()).is_err());
        let neg = BlochVector::new(0.9, 0.9, 0.0).to_matrix();
        assert!(DensityMatrix::new(neg).is_err());
        m[(0, 1)] = c(0.0, 0.0);
        m[(0, 0)] = c(0.7, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_flat(&mut rng, 4);
        let rho = density_from_params(&HypersphericalParams::from_flat(4, &x).unwrap());
        let s = serde_json::to_string(&rho).unwrap();
        let back: DensityMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rho);
    }

    #[test]
    fn haar_draws_are_valid_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let tau = haar_uniform_sample(&mut rng, 4).unwrap();
            DensityMatrix::new(density_from_params(&tau).into_matrix()).unwrap();
        }
        assert!(haar_uniform_sample(&mut rng, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn flat(n: usize) -> impl Strategy<Value = Vec<f64>> {
            let specs = param_specs(n);
            specs
                .into_iter()
                .map(|s| (s.lower..s.upper).boxed())
                .collect::<Vec<_>>()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn qubit_states_are_physical(x in flat(2)) {
                let rho = density_from_flat(2, &x);
                prop_assert!(DensityMatrix::new(rho.clone()).is_ok());
                let b = pauli_expectations(&DensityMatrix(rho)).unwrap();
                let (u, t, p) = (x[0], x[1], x[2]);
                prop_assert!((b.z - (2.0 * u).cos()).abs() < 1e-10);
                prop_assert!((b.x - (2.0 * u).sin() * t.cos() * p.cos()).abs() < 1e-10);
                prop_assert!((b.y - (2.0 * u).sin() * t.cos() * p.sin()).abs() < 1e-10);
            }

            #[test]
            fn two_qubit_states_are_physical(x in flat(4)) {
                prop_assert!(DensityMatrix::new(density_from_flat(4, &x)).is_ok());
            }

            #[test]
            fn trace_distance_triangle(a in flat(4), b in flat(4), c in flat(4)) {
                let (ra, rb, rc) = (density_from_flat(4, &a), density_from_flat(4, &b), density_from_flat(4, &c));
                let ab = trace_distance_matrices(&ra, &rb);
                let bc = trace_distance_matrices(&rb, &rc);
                let ac = trace_distance_matrices(&ra, &rc);
                prop_assert!(ac <= ab + bc + 1e-10);
                prop_assert!((ab - trace_distance_matrices(&rb, &ra)).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            }
        }
    }
}
