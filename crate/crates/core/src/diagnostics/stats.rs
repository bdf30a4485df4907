//! Small hypothesis tests used by the statistical checks.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Two-sided one-sample t-test of `H0: E[v] = mu0`; returns the p-value.
pub fn t_test(v: &[f64], mu0: f64) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::invalid("t-test needs at least two values"));
    }
    let n = v.len() as f64;
    let se = (variance(v) / n).sqrt();
    if se == 0.0 {
        return Ok(if mean(v) == mu0 { 1.0 } else { 0.0 });
    }
    let t = (mean(v) - mu0) / se;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Mann–Kendall trend test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trend {
    /// Kendall's tau between the series and its index.
    pub tau: f64,
    /// Normal score of the statistic; negative for a decreasing series.
    pub z: f64,
    /// One-sided p-value against "no trend" in the direction of `z`.
    pub p_value: f64,
}

pub fn mann_kendall(series: &[f64]) -> Result<Trend> {
    let n = series.len();
    if n < 3 {
        return Err(Error::invalid("trend test needs at least three points"));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = match s {
        0 => 0.0,
        s if s > 0 => (s as f64 - 1.0) / var.sqrt(),
        s => (s as f64 + 1.0) / var.sqrt(),
    };
    let normal = Normal::standard();
    Ok(Trend {
        tau: s as f64 / (nf * (nf - 1.0) / 2.0),
        z,
        p_value: 1.0 - normal.cdf(z.abs()),
    })
}
