use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Welch two-sample comparison of `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a - mean_b`.
    pub gap: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Welch's t-test. When both samples have (numerically) zero spread the
/// statistic is 0 with p = 1 for equal means, and infinite with p = 0
/// otherwise.
pub fn compare_runs(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two runs per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("compare_runs"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, mean_b) = (mean(a), mean(b));
    let gap = mean_a - mean_b;
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let se = (sa + sb).sqrt();
    let scale = mean_a.abs().max(mean_b.abs()).max(1.0);
    if se <= 1e-12 * scale {
        let (t, p) = if gap == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(gap), 0.0)
        };
        return Ok(Comparison {
            mean_a,
            mean_b,
            gap,
            t,
            df: na + nb - 2.0,
            p,
        });
    }
    let t = gap / se;
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(Comparison {
        mean_a,
        mean_b,
        gap,
        t,
        df,
        p,
    })
}
