//! Distribution-distance helpers used by the diagnostics and the test suite:
//! Kolmogorov–Smirnov statistics with asymptotic p-values, and discrete
//! L1 / total-variation distances.

use crate::{RescaleError, Result};

/// One-sample KS statistic of `samples` against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(RescaleError::InvalidInput("no samples".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

/// Two-sample KS statistic.
pub fn ks2_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(RescaleError::InvalidInput("no samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let (x, y) = (xs[i], ys[j]);
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution,
/// Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic one-sample KS p-value with the Stephens small-sample
/// correction to the effective λ.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// Asymptotic two-sample KS p-value via the effective sample size nm/(n+m).
pub fn ks2_pvalue(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let sn = ne.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// L1 distance of two equal-length mass vectors.
pub fn l1_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(RescaleError::InvalidInput(format!(
            "length mismatch {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Total variation = half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// Sample median (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kolmogorov_sf_reference_values() {
        // frozen against an independent implementation of the series
        assert!((kolmogorov_sf(0.5) - 0.963_945_243_664_875_1).abs() < 1e-12);
        assert!((kolmogorov_sf(1.0) - 0.269_999_671_677_354_56).abs() < 1e-12);
        assert!((kolmogorov_sf(1.5) - 0.022_217_962_616_525_127).abs() < 1e-12);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(5.0) < 1e-10);
    }

    #[test]
    fn uniform_samples_pass_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let d = ks_statistic(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks_pvalue(d, samples.len()) > 0.01, "d = {d}");
    }

    #[test]
    fn shifted_samples_fail_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>().powf(1.2)).collect();
        let d = ks_statistic(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks_pvalue(d, samples.len()) < 1e-6, "d = {d}");
    }

    #[test]
    fn two_sample_agrees_on_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let d = ks2_statistic(&a, &b).unwrap();
        assert!(ks2_pvalue(d, a.len(), b.len()) > 0.01);
        let c: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() * 0.95).collect();
        let d = ks2_statistic(&a, &c).unwrap();
        assert!(ks2_pvalue(d, a.len(), c.len()) < 1e-4);
    }

    #[test]
    fn tv_of_disjoint_masses_is_one() {
        let p = [1.0, 0.0];
        let q = [0.0, 1.0];
        assert_eq!(tv_distance(&p, &q).unwrap(), 1.0);
        assert!(l1_distance(&p, &[0.0]).is_err());
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }
}
