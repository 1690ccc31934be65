//! Histograms of the running variable and the McCrary log-density
//! discontinuity test.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{normal_two_sided_p, sample_sd};

/// One half-open histogram bin `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Counts in bins `[k w, (k+1) w)` covering `range`; values outside the
/// range are ignored.
pub fn build_histogram(values: &[f64], width: f64, range: (f64, f64)) -> Result<Vec<HistBin>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::config(format!("bin width must be positive, got {width}")));
    }
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::config(format!("histogram range [{lo}, {hi}) is empty")));
    }
    let first = (lo / width).floor() as i64;
    let last = (hi / width).ceil() as i64;
    let mut bins: Vec<HistBin> = (first..last)
        .map(|k| HistBin { lo: k as f64 * width, hi: (k + 1) as f64 * width, count: 0 })
        .collect();
    for &v in values {
        if lo <= v && v < hi {
            let k = ((v / width).floor() as i64 - first) as usize;
            bins[k].count += 1;
        }
    }
    Ok(bins)
}

/// Write histograms as `bin_lo,bin_hi,count,group` rows.
pub fn write_histogram_csv<W: Write>(groups: &[(&str, &[HistBin])], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_lo", "bin_hi", "count", "group"])?;
    for (group, bins) in groups {
        for b in *bins {
            out.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), group.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityTestResult {
    /// Log density above the cutoff minus log density below it.
    pub theta: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub bin_size: f64,
    pub bandwidth: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub f_left: f64,
    pub f_right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McCraryOptions {
    pub cutoff: f64,
    /// Defaults to `2 s n^(-1/2)`.
    pub bin_size: Option<f64>,
    pub bandwidth: f64,
}

impl Default for McCraryOptions {
    fn default() -> Self {
        McCraryOptions { cutoff: 200.0, bin_size: None, bandwidth: 50.0 }
    }
}

/// Minimum number of values on each side of the cutoff within the bandwidth.
pub const MIN_SIDE: usize = 30;

/// Local-linear intercept at 0 of `(x, y)` points with triangular weights
/// `1 - |x| / h`.
fn local_linear_at_zero(points: &[(f64, f64)], h: f64) -> Option<f64> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let w = (1.0 - x.abs() / h).max(0.0);
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
        t0 += w * y;
        t1 += w * x * y;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() <= 1e-12 * s0 * s2 {
        return None;
    }
    Some((s2 * t0 - s1 * t1) / det)
}

/// McCrary's density test at `opts.cutoff`.
///
/// Values are binned so the cutoff is a bin edge; normalized bin counts
/// are smoothed by triangular-kernel local-linear regressions on each
/// side within the bandwidth, and theta is the log ratio of the two
/// boundary estimates.
pub fn mccrary_test(values: &[f64], opts: &McCraryOptions) -> Result<DensityTestResult> {
    let McCraryOptions { cutoff: c, bandwidth: h, .. } = *opts;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("bandwidth must be positive, got {h}")));
    }
    let n_left = values.iter().filter(|&&v| c - h <= v && v < c).count();
    let n_right = values.iter().filter(|&&v| c <= v && v <= c + h).count();
    for (side, count) in [("left", n_left), ("right", n_right)] {
        if count < MIN_SIDE {
            return Err(Error::data(format!(
                "{side} of the cutoff has {count} values within the bandwidth, need {MIN_SIDE}"
            )));
        }
    }

    let n = values.len() as f64;
    let b = match opts.bin_size {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::config(format!("bin size must be positive, got {b}"))),
        None => 2.0 * sample_sd(values) / n.sqrt(),
    };
    let per_side = (h / b).ceil() as i64;
    let mut counts = vec![0usize; 2 * per_side as usize];
    for &v in values {
        let j = ((v - c) / b).floor() as i64;
        if (-per_side..per_side).contains(&j) {
            counts[(j + per_side) as usize] += 1;
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (k, &count) in counts.iter().enumerate() {
        let j = k as i64 - per_side;
        let mid = (j as f64 + 0.5) * b;
        let y = count as f64 / (n * b);
        if (-h..0.0).contains(&mid) {
            left.push((mid, y));
        } else if (0.0..=h).contains(&mid) {
            right.push((mid, y));
        }
    }
    let fit = |pts: &[(f64, f64)], side: &str| {
        local_linear_at_zero(pts, h).filter(|f| *f > 0.0).ok_or_else(|| {
            Error::numerical(format!("density estimate {side} of the cutoff is not positive"))
        })
    };
    let f_left = fit(&left, "left")?;
    let f_right = fit(&right, "right")?;
    let theta = f_right.ln() - f_left.ln();
    let se = ((1.0 / (n * h)) * (24.0 / 5.0) * (1.0 / f_right + 1.0 / f_left)).sqrt();
    let z = theta / se;
    Ok(DensityTestResult {
        theta,
        se,
        z,
        p: normal_two_sided_p(z),
        bin_size: b,
        bandwidth: h,
        n_left,
        n_right,
        f_left,
        f_right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::Execution;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boundary_values_go_right() {
        let bins = build_histogram(&[0.0, 24.9, 25.0], 25.0, (0.0, 50.0)).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).collect::<Vec<_>>(), [2, 1]);
        let empty = build_histogram(&[], 25.0, (0.0, 100.0)).unwrap();
        assert!(empty.iter().all(|b| b.count == 0));
        assert_eq!(empty.len(), 4);
        assert!(build_histogram(&[1.0], 0.0, (0.0, 1.0)).unwrap_err().is_config());
    }

    #[test]
    fn uniform_counts_within_binomial_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..400.0)).collect();
        let bins = build_histogram(&v, 25.0, (0.0, 400.0)).unwrap();
        assert_eq!(bins.len(), 16);
        let p = 1.0 / 16.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for b in &bins {
            assert!((b.count as f64 - n as f64 * p).abs() < 4.0 * sd);
        }
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), n);
    }

    proptest! {
        #[test]
        fn histogram_is_additive_and_order_free(
            a in prop::collection::vec(-50.0f64..650.0, 0..200),
            b in prop::collection::vec(-50.0f64..650.0, 0..200),
        ) {
            let h = |v: &[f64]| build_histogram(v, 25.0, (0.0, 600.0)).unwrap();
            let mut joined = a.clone();
            joined.extend(&b);
            let sum: Vec<usize> = h(&a).iter().zip(h(&b)).map(|(x, y)| x.count + y.count).collect();
            prop_assert_eq!(h(&joined).iter().map(|x| x.count).collect::<Vec<_>>(), sum);
            let mut rev = joined.clone();
            rev.reverse();
            prop_assert_eq!(h(&rev), h(&joined));
            let inside = joined.iter().filter(|&&x| (0.0..600.0).contains(&x)).count();
            prop_assert_eq!(h(&joined).iter().map(|x| x.count).sum::<usize>(), inside);
        }
    }

    fn uniform(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..400.0)).collect()
    }

    #[test]
    fn uniform_density_has_no_jump() {
        let r = mccrary_test(&uniform(1, 50_000), &McCraryOptions::default()).unwrap();
        assert!(r.theta.abs() < 0.1, "{r:?}");
        // Density of U(0, 400) is 1/400.
        assert!((r.f_left * 400.0 - 1.0).abs() < 0.15);
        assert_eq!(r.z, r.theta / r.se);
    }

    #[test]
    fn reflection_flips_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..8000).map(|_| 100.0 + 250.0 * rng.random::<f64>().powf(0.7)).collect();
        let mirrored: Vec<f64> = v.iter().map(|x| 400.0 - x).collect();
        let opts = McCraryOptions::default();
        let a = mccrary_test(&v, &opts).unwrap();
        let b = mccrary_test(&mirrored, &opts).unwrap();
        assert!((a.theta + b.theta).abs() < 1e-9, "{} vs {}", a.theta, b.theta);
        assert!((a.se - b.se).abs() < 1e-9);
    }

    #[test]
    fn theta_jump_is_recovered() {
        // Density doubles above the cutoff on [100, 300).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..60_000)
            .map(|_| if rng.random_bool(1.0 / 3.0) { rng.random_range(100.0..200.0) } else { rng.random_range(200.0..300.0) })
            .collect();
        let r = mccrary_test(&v, &McCraryOptions::default()).unwrap();
        assert!((r.theta - 2f64.ln()).abs() < 0.1, "{r:?}");
        assert!(r.p < 1e-6);
    }

    #[test]
    fn too_few_values_name_the_side() {
        let v: Vec<f64> = (0..100).map(|i| 200.0 + f64::from(i) * 0.4).collect();
        let err = mccrary_test(&v, &McCraryOptions::default()).unwrap_err();
        assert!(err.to_string().contains("left"));
    }

    #[test]
    fn size_is_near_nominal() {
        let reps = 200;
        let rejections: usize = Execution::Parallel
            .map_range(reps, |r| {
                let t = mccrary_test(&uniform(1000 + r as u64, 5000), &McCraryOptions::default()).unwrap();
                usize::from(t.p < 0.05)
            })
            .into_iter()
            .sum();
        let rate = rejections as f64 / reps as f64;
        assert!(rate < 0.12, "rejection rate {rate}");
    }
}
