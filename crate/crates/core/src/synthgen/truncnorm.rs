use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Normal distribution truncated to `[lo, hi]`, parameterized by the
/// moments it should have after truncation.
#[derive(Debug, Clone, Copy)]
pub struct TruncNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl TruncNormal {
    /// Mean and standard deviation after truncation.
    pub fn moments(&self) -> (f64, f64) {
        if self.sigma == 0.0 {
            return (self.mu.clamp(self.lo, self.hi), 0.0);
        }
        let n = std_normal();
        let a = (self.lo - self.mu) / self.sigma;
        let b = (self.hi - self.mu) / self.sigma;
        let z = n.cdf(b) - n.cdf(a);
        let (pa, pb) = (n.pdf(a), n.pdf(b));
        let ta = if a.is_finite() { a * pa } else { 0.0 };
        let tb = if b.is_finite() { b * pb } else { 0.0 };
        let m = (pa - pb) / z;
        let var = 1.0 + (ta - tb) / z - m * m;
        (self.mu + self.sigma * m, self.sigma * var.max(0.0).sqrt())
    }

    /// Find the untruncated parameters whose truncation to `[lo, hi]` has
    /// the target mean and standard deviation.
    pub fn with_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        let infeasible = || {
            Error::config(format!(
                "no normal truncated to [{lo}, {hi}] has mean {mean} and sd {sd}"
            ))
        };
        if !(lo < mean && mean < hi) || !(sd >= 0.0) {
            return Err(infeasible());
        }
        if sd == 0.0 {
            return Ok(TruncNormal { mu: mean, sigma: 0.0, lo, hi });
        }
        let mut t = TruncNormal { mu: mean, sigma: sd, lo, hi };
        for _ in 0..2000 {
            let (m, s) = t.moments();
            if !(m.is_finite() && s > 0.0) {
                return Err(infeasible());
            }
            if (m - mean).abs() < 1e-9 * sd && (s - sd).abs() < 1e-9 * sd {
                return Ok(t);
            }
            t.mu += mean - m;
            t.sigma *= (sd / s).powf(0.7);
            if !(t.sigma.is_finite() && t.sigma < 1e3 * sd) {
                return Err(infeasible());
            }
        }
        Err(infeasible())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu.clamp(self.lo, self.hi);
        }
        let normal = NormalDist::new(self.mu, self.sigma).expect("valid normal");
        let n = std_normal();
        let accept = n.cdf((self.hi - self.mu) / self.sigma) - n.cdf((self.lo - self.mu) / self.sigma);
        if accept > 0.05 {
            loop {
                let x = normal.sample(rng);
                if self.lo <= x && x <= self.hi {
                    return x;
                }
            }
        }
        // Far tails: inverse transform.
        let (fa, fb) = (n.cdf((self.lo - self.mu) / self.sigma), n.cdf((self.hi - self.mu) / self.sigma));
        let u = fa + (fb - fa) * rng.random::<f64>();
        (self.mu + self.sigma * n.inverse_cdf(u)).clamp(self.lo, self.hi)
    }
}
