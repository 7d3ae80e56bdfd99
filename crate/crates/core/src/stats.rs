//! Small statistical helpers used by diagnostics and tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::TAU;

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `P(K > lambda)` with the
/// small-sample correction `lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D`.
pub fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    let lambda = (s + 0.12 + 0.11 / s) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn ks_two_sample_p(a: &[f64], b: &[f64]) -> f64 {
    let d = ks_two_sample(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    ks_p_value(d, na * nb / (na + nb))
}

/// Pearson chi-square statistic and its upper-tail p-value.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted_params: usize) -> (f64, f64) {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (observed.len() - 1 - fitted_params) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("dof > 0").cdf(stat);
    (stat, p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Circular mean (in `[0, 2 pi)`) and circular standard deviation
/// `sqrt(-2 ln R)` of angles measured on a circle of the given period.
pub fn circular_mean_std(xs: &[f64], lower: f64, period: f64) -> (f64, f64) {
    let scale = TAU / period;
    let (mut c, mut s) = (0.0, 0.0);
    for x in xs {
        let a = (x - lower) * scale;
        c += a.cos();
        s += a.sin();
    }
    let n = xs.len() as f64;
    let r = ((c / n).powi(2) + (s / n).powi(2)).sqrt().min(1.0);
    let m = s.atan2(c).rem_euclid(TAU);
    let sd = if r > 0.0 { (-2.0 * r.ln()).sqrt() } else { f64::INFINITY };
    (lower + m / scale, sd / scale)
}

/// Mean resultant vector `(mean cos, mean sin)` of angles on a circle of
/// the given period.
pub fn mean_resultant(xs: &[f64], lower: f64, period: f64) -> [f64; 2] {
    let scale = TAU / period;
    let (mut c, mut s) = (0.0, 0.0);
    for x in xs {
        let a = (x - lower) * scale;
        c += a.cos();
        s += a.sin();
    }
    let n = xs.len().max(1) as f64;
    [c / n, s / n]
}

/// Signed shortest separation `a - b` on a circle of the given period.
pub fn circular_difference(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    if d > period / 2.0 {
        d - period
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x);
        assert!(d <= 0.0005 + 1e-12);
        assert!(ks_p_value(d, 1000.0) > 0.99);
    }

    #[test]
    fn ks_detects_shift() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0 * 0.8).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(ks_p_value(d, 1000.0) < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_value() {
        // P(K > 1.36) is about 0.049
        let p = ks_p_value(1.36 / 1e4f64.sqrt(), 1e4);
        assert!((p - 0.049).abs() < 0.003, "{p}");
    }

    #[test]
    fn circular_stats_across_seam() {
        let xs = [TAU - 0.1, 0.1, TAU - 0.05, 0.05];
        let (m, sd) = circular_mean_std(&xs, 0.0, TAU);
        assert!(circular_difference(m, 0.0, TAU).abs() < 1e-12);
        assert!(sd < 0.1);
        assert!((circular_difference(0.1, TAU - 0.1, TAU) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let (_, p) = chi_square(&[100.0, 100.0, 100.0], &[100.0, 100.0, 100.0], 0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
