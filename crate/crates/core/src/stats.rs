//! Sample statistics, distribution distances, and trend fits.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, f64::INFINITY));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Standard error of a binomial proportion estimate.
pub fn binomial_stderr(p_hat: f64, n: usize) -> f64 {
    ((p_hat * (1.0 - p_hat)).max(0.0) / n.max(1) as f64).sqrt()
}

/// Result of a two-sample or one-sample Kolmogorov-Smirnov comparison.
#[derive(Clone, Copy, Debug)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sample Kolmogorov-Smirnov distance with asymptotic p-value.
///
/// Ties are merged: the empirical CDF gap is evaluated only after both
/// samples have consumed every copy of the current value.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|p, q| p.total_cmp(q));
    b.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n || j < m {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < n && a[i] == v {
            i += 1;
        }
        while j < m && b[j] == v {
            j += 1;
        }
        let gap = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(gap);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        d,
        p_value: ks_survival(lambda),
        n_a: n,
        n_b: m,
    })
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut xs = xs.to_vec();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    xs.sort_by(|p, q| p.total_cmp(q));
    let n = xs.len();
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n as f64).abs());
        d = d.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let ne = n as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        d,
        p_value: ks_survival(lambda),
        n_a: n,
        n_b: 0,
    })
}

/// Asymptotic Kolmogorov survival function Q(lambda).
pub fn ks_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample noise floor: the 5% critical KS distance for sizes (n, m).
pub fn ks_noise_floor(n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    1.36 / ne.sqrt()
}

/// Ordinary least squares line fit; returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64), StatsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: xs.len().min(ys.len()),
        });
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::TooFew { need: 2, got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = syy - slope * sxy;
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok((slope, intercept, r2))
}

/// Theil-Sen slope: median of all pairwise slopes. Robust against one
/// noisy refinement level in short trend series.
pub fn theil_sen_slope(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: xs.len().min(ys.len()),
        });
    }
    let mut slopes = Vec::new();
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            if xs[j] != xs[i] {
                slopes.push((ys[j] - ys[i]) / (xs[j] - xs[i]));
            }
        }
    }
    if slopes.is_empty() {
        return Err(StatsError::TooFew { need: 2, got: 1 });
    }
    Ok(median_inplace(&mut slopes))
}

pub fn median_inplace(xs: &mut [f64]) -> f64 {
    xs.sort_by(|p, q| p.total_cmp(q));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Complementary error function (Numerical Recipes rational Chebyshev
/// approximation, absolute error below 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_distance_on_disjoint_and_identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let b = [10.0, 11.0, 12.0];
        let r = ks_distance(&a, &b).unwrap();
        assert_eq!(r.d, 1.0);
        let r = ks_distance(&a, &a).unwrap();
        assert_eq!(r.d, 0.0);
        assert!(r.p_value > 0.999);
    }

    #[test]
    fn ks_distance_handles_ties_and_known_value() {
        // F_a jumps to 1/2 at 1 and 1 at 3; F_b jumps to 1/2 at 2 and 1 at 3.
        // Max gap is 1/2 on [1,2).
        let a = [1.0, 1.0, 3.0, 3.0];
        let b = [2.0, 2.0, 3.0, 3.0];
        let r = ks_distance(&a, &b).unwrap();
        assert!((r.d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_distance_is_invariant_under_monotone_relabeling() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..70).map(|i| (i as f64 * 0.53).cos()).collect();
        let d0 = ks_distance(&a, &b).unwrap().d;
        let fa: Vec<f64> = a.iter().map(|x| x.exp()).collect();
        let fb: Vec<f64> = b.iter().map(|x| x.exp()).collect();
        let d1 = ks_distance(&fa, &fb).unwrap().d;
        assert!((d0 - d1).abs() < 1e-15);
    }

    #[test]
    fn ks_survival_reference_points() {
        // Q(0) = 1; Q at the 5% critical constant is 0.05 by definition.
        assert_eq!(ks_survival(0.0), 1.0);
        let q = ks_survival(1.358);
        assert!((q - 0.05).abs() < 0.002, "Q(1.358) = {q}");
    }

    #[test]
    fn one_sample_ks_detects_wrong_location() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| crate::rng::normal_inverse_cdf((i as f64 + 0.5) / 1000.0) + 0.5)
            .collect();
        let r = ks_one_sample(&xs, normal_cdf).unwrap();
        assert!(r.d > 0.15, "d = {}", r.d);
        let centered: Vec<f64> = xs.iter().map(|x| x - 0.5).collect();
        let r = ks_one_sample(&centered, normal_cdf).unwrap();
        assert!(r.d < 0.01, "d = {}", r.d);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let (s, i, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!((i - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theil_sen_ignores_single_outlier() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 4.0, 6.0, 100.0, 10.0];
        let s = theil_sen_slope(&xs, &ys).unwrap();
        assert!((s - 2.0).abs() < 1.0, "slope {s}");
    }

    #[test]
    fn erfc_reference_values() {
        // erfc(1) = 0.15729920705028513. The rational approximation has
        // fractional error below 1.2e-7, including at 0.
        assert!((erfc(0.0) - 1.0).abs() < 1.5e-7);
        assert!((erfc(1.0) - 0.157_299_207_050_285_13).abs() < 1.5e-7);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-6);
    }

    #[test]
    fn mean_stderr_matches_hand_computation() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m - 2.5).abs() < 1e-15);
        // Sample variance 5/3, stderr sqrt(5/12).
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
