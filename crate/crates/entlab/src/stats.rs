//! Statistics used by the sampling checks and rate fits: least-squares
//! lines, Kolmogorov-Smirnov distances, chi-square goodness of fit, and
//! sample moments.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y = slope * x + intercept` by least squares.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: xs.len(),
            context: "linear fit".into(),
        });
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateRun("all abscissae equal in linear fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Sample mean and its standard error (sample standard deviation over sqrt n).
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: xs.len(),
            context: "mean and standard error".into(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

fn sorted_copy(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample values".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Ok(v)
}

/// One-sample Kolmogorov-Smirnov statistic `sup_x |F_n(x) - F(x)|`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            have: 0,
            context: "one-sample KS".into(),
        });
    }
    let sorted = sorted_copy(sample)?;
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        // The empirical CDF jumps from i/n to (i + 1)/n at x.
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - f).abs());
    }
    Ok(sup)
}

/// Two-sample Kolmogorov-Smirnov statistic by a merge walk over both
/// empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            have: 0,
            context: "two-sample KS".into(),
        });
    }
    let sa = sorted_copy(a)?;
    let sb = sorted_copy(b)?;
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < sa.len() || j < sb.len() {
        // Advance past ties simultaneously so both CDFs update together.
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Asymptotic KS critical coefficient `c(alpha)` at the supported levels.
fn ks_coefficient(alpha: f64) -> Result<f64> {
    // sqrt(-ln(alpha / 2) / 2), tabulated for the levels the checks use.
    let table = [(0.10, 1.224), (0.05, 1.358), (0.01, 1.628)];
    table
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, c)| c)
        .ok_or(Error::InvalidParameter {
            name: "ks_alpha",
            value: alpha,
            reason: "supported levels are 0.10, 0.05, 0.01",
        })
}

/// Critical value for the one-sample KS statistic at level `alpha`.
pub fn ks_one_sample_critical(n: usize, alpha: f64) -> Result<f64> {
    Ok(ks_coefficient(alpha)? / (n as f64).sqrt())
}

/// Critical value for the two-sample KS statistic at level `alpha`.
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> Result<f64> {
    let (nf, mf) = (n as f64, m as f64);
    Ok(ks_coefficient(alpha)? * ((nf + mf) / (nf * mf)).sqrt())
}

/// Chi-square goodness-of-fit result.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiSquareFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of observed counts against cell probabilities.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<ChiSquareFit> {
    if counts.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: counts.len(),
            got: probs.len(),
        });
    }
    if counts.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: counts.len(),
            context: "chi-square cells".into(),
        });
    }
    let total: u64 = counts.iter().sum();
    let prob_sum: f64 = probs.iter().sum();
    if (prob_sum - 1.0).abs() > 1e-9 || probs.iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "cell_probabilities",
            value: prob_sum,
            reason: "must be positive and sum to one",
        });
    }
    let statistic: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let expected = total as f64 * p;
            let diff = c as f64 - expected;
            diff * diff / expected
        })
        .sum();
    let dof = counts.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    Ok(ChiSquareFit {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}
