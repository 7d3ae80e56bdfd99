//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]
// the rule constants are kept at their published 34-digit precision
#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;

// Gauss-Kronrod 7/15 nodes on [-1, 1] (positive half, centre first).
const XGK: [f64; 8] = [
    0.0,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.405_845_151_377_397_166_906_606_412_076_9,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.991_455_371_120_812_639_206_854_697_526_3,
];
const WGK: [f64; 8] = [
    0.209_482_141_084_727_828_012_999_174_891_7,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.022_935_322_010_529_224_963_732_008_059_0,
];
// Gauss weights for the 7-point rule, on nodes XGK[0], XGK[2], XGK[4], XGK[6].
const WG: [f64; 4] = [
    0.417_959_183_673_469_387_755_102_040_816_3,
    0.381_830_050_505_118_944_950_369_775_488_9,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.129_484_966_168_869_693_270_611_432_679_1,
];

/// One GK15 panel: (Kronrod estimate, |Kronrod - Gauss| per component).
fn panel<const K: usize, F: FnMut(f64) -> [f64; K]>(f: &mut F, a: f64, b: f64) -> ([f64; K], [f64; K]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let fc = f(c);
    for k in 0..K {
        kron[k] = WGK[0] * fc[k];
        gauss[k] = WG[0] * fc[k];
    }
    for j in 1..8 {
        let f1 = f(c - h * XGK[j]);
        let f2 = f(c + h * XGK[j]);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 0 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err = [0.0; K];
    for k in 0..K {
        kron[k] *= h;
        err[k] = (kron[k] - gauss[k] * h).abs();
    }
    (kron, err)
}

struct Piece<const K: usize> {
    err: f64,
    a: f64,
    b: f64,
    value: [f64; K],
    comp_err: [f64; K],
}

impl<const K: usize> PartialEq for Piece<K> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<const K: usize> Eq for Piece<K> {}
impl<const K: usize> PartialOrd for Piece<K> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<const K: usize> Ord for Piece<K> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive GK15 quadrature of a vector-valued integrand. The
/// estimated error of every component is driven below `rel_tol` times the
/// magnitude of component 0, which the callers arrange to dominate the
/// others pointwise.
pub fn integrate<const K: usize, F: FnMut(f64) -> [f64; K]>(mut f: F, a: f64, b: f64, rel_tol: f64) -> [f64; K] {
    let (v, e) = panel(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    let worst = |e: &[f64; K]| e.iter().cloned().fold(0.0, f64::max);
    heap.push(Piece {
        err: worst(&e),
        a,
        b,
        value: v,
        comp_err: e,
    });
    for _ in 0..2000 {
        let mut total = [0.0; K];
        let mut total_err = [0.0; K];
        for p in heap.iter() {
            for k in 0..K {
                total[k] += p.value[k];
                total_err[k] += p.comp_err[k];
            }
        }
        let scale = total[0].abs().max(f64::MIN_POSITIVE);
        if total_err.iter().all(|e| *e <= rel_tol * scale) {
            return total;
        }
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        for (lo, hi) in [(p.a, m), (m, p.b)] {
            let (v, e) = panel(&mut f, lo, hi);
            heap.push(Piece {
                err: worst(&e),
                a: lo,
                b: hi,
                value: v,
                comp_err: e,
            });
        }
    }
    panic!("adaptive quadrature did not converge on [{a}, {b}]");
}

/// Posterior mean `[rho00, Re rho10, Im rho10]` of the lossless single
/// qubit under the Haar prior, by nested adaptive quadrature over
/// `(u, theta, phi)` of likelihood times sin^3(2u) sin(2 theta).
pub fn qubit_bme_by_quadrature(counts: [u64; 6], rel_tol: f64) -> [f64; 3] {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let [h, v, d, a, l, r] = counts.map(|c| c as i32);
    let total = integrate(
        |u: f64| {
            let (su, cu) = u.sin_cos();
            let s2u = 2.0 * su * cu;
            let radial = cu.powi(2 * h) * su.powi(2 * v) * s2u.powi(3);
            if radial == 0.0 {
                return [0.0; 4];
            }
            let inner = integrate(
                |t: f64| {
                    let (st, ct) = t.sin_cos();
                    let w = 2.0 * st * ct;
                    if w == 0.0 {
                        return [0.0; 4];
                    }
                    let rr = s2u * ct;
                    let phi = integrate(
                        |p: f64| {
                            let (sp, cp) = p.sin_cos();
                            let pd = 0.5 * (1.0 + rr * cp);
                            let pl = 0.5 * (1.0 + rr * sp);
                            let lik = pd.powi(d) * (1.0 - pd).powi(a) * pl.powi(l) * (1.0 - pl).powi(r);
                            [lik, lik * cp, lik * sp]
                        },
                        0.0,
                        TAU,
                        rel_tol * 0.1,
                    );
                    [w * phi[0], w * phi[0], w * ct * phi[1], w * ct * phi[2]]
                },
                0.0,
                FRAC_PI_2,
                rel_tol * 0.1,
            );
            // rho00 = cos^2 u; rho10 = sin u cos u cos(theta) e^{i phi}
            [
                radial * inner[0],
                radial * cu * cu * inner[1],
                radial * su * cu * inner[2],
                radial * su * cu * inner[3],
            ]
        },
        0.0,
        FRAC_PI_2,
        rel_tol,
    );
    [total[1] / total[0], total[2] / total[0], total[3] / total[0]]
}

#[test]
fn quadrature_integrates_known_functions() {
    let v = integrate(|x: f64| [x.exp(), x.sin()], 0.0, 2.0, 1e-13);
    assert!((v[0] - (2f64.exp() - 1.0)).abs() < 1e-12);
    assert!((v[1] - (1.0 - 2f64.cos())).abs() < 1e-12);
}

#[test]
fn zero_counts_give_the_maximally_mixed_state() {
    let m = qubit_bme_by_quadrature([0; 6], 1e-12);
    assert!((m[0] - 0.5).abs() < 1e-12);
    assert!(m[1].abs() < 1e-12 && m[2].abs() < 1e-12);
}
