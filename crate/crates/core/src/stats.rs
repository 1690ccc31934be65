//! Small statistical helpers shared across modules.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Nearest-rank percentile of sorted data: the value at rank `ceil(p/100 * n)`
/// (1-based), clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty(), "nearest_rank on empty data");
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile on empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn student(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive")
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    (2.0 * student(df).sf(t.abs())).clamp(0.0, 1.0)
}

/// Upper `1 - alpha/2` critical value of the t distribution.
pub fn t_critical(alpha: f64, df: f64) -> f64 {
    let dist = student(df);
    let target = alpha / 2.0;
    let mut x = dist.inverse_cdf(1.0 - target);
    // Newton steps on the upper tail; the library inverse loses accuracy at large df.
    for _ in 0..50 {
        let step = (dist.sf(x) - target) / dist.pdf(x);
        x += step;
        if step.abs() < 1e-12 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Two-sided p-value of a standard-normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).clamp(0.0, 1.0)
}

/// Welch's unequal-variance two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WelchTest {
    /// mean(b) - mean(a)
    pub difference: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> WelchTest {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_sd(a).powi(2), sample_sd(b).powi(2));
    let se2 = va / na + vb / nb;
    let difference = mb - ma;
    let t = difference / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p_value = if se2 == 0.0 {
        if difference == 0.0 { 1.0 } else { 0.0 }
    } else {
        t_two_sided_p(t, df)
    };
    WelchTest { difference, t, df, p_value }
}
