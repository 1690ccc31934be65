//! Seeded synthetic cohort generator with an injectable manipulation
//! effect, producing the panel's input tables plus per-interval truth.
//!
//! Each person draws from its own ChaCha stream keyed by `(seed, index)`,
//! so output is identical whatever the degree of parallelism.

mod truncnorm;

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{decimal_year, ObservationRecord, PersonRecord, Sex, DAYS_PER_YEAR};
use crate::par::Execution;

pub use truncnorm::TruncNormal;

/// Moments of a truncated-normal covariate for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

/// A value for grant non-recipients and one for recipients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByGroup<T> {
    pub non_dg: T,
    pub dg: T,
}

impl<T: Copy> ByGroup<T> {
    fn get(&self, dg: bool) -> T {
        if dg { self.dg } else { self.non_dg }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_individuals: usize,
    pub dg_fraction: f64,
    pub visit_gap_mean_days: f64,
    pub visit_gap_sd_days: f64,
    pub visit_gap_min_days: f64,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Knots `(start cd4, expected annualized change)` of the post-initiation
    /// recovery curve, linearly interpolated and flat beyond the ends.
    pub recovery_curve: Vec<(f64, f64)>,
    /// Expected annualized change before initiation.
    pub pre_init_drift: f64,
    /// Standard deviation of the noise added to each interval's annualized rate.
    pub noise_sd: f64,
    /// Offset to the annualized change of recipients starting inside the
    /// manipulation window after initiation.
    pub delta: f64,
    pub manipulation_window: (f64, f64),
    pub threshold: f64,
    /// Extra days before the next test for recipients currently below the threshold.
    pub qualified_gap_shift_days: f64,
    /// When set, `delta` is scaled by this factor for intervals starting on
    /// or before `law_change_date` and is zero afterwards.
    pub era_effect: Option<f64>,
    pub law_change_date: NaiveDate,
    pub art_init_prob: f64,
    pub initial_cd4: Moments,
    pub age: ByGroup<Moments>,
    pub female_share: ByGroup<f64>,
    pub education_years: ByGroup<Moments>,
    pub road_distance_categories: u8,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_individuals: 8000,
            dg_fraction: 0.18,
            visit_gap_mean_days: 331.0,
            visit_gap_sd_days: 245.0,
            visit_gap_min_days: 30.0,
            min_visits: 3,
            max_visits: 10,
            recovery_curve: vec![(37.5, 215.0), (400.0, 120.0), (500.0, 0.0)],
            pre_init_drift: -15.0,
            noise_sd: 100.0,
            delta: -30.0,
            manipulation_window: (150.0, 250.0),
            threshold: 200.0,
            qualified_gap_shift_days: 17.0,
            era_effect: None,
            law_change_date: NaiveDate::from_ymd_opt(2008, 12, 31).expect("valid date"),
            art_init_prob: 0.85,
            initial_cd4: Moments { mean: 160.0, sd: 120.0 },
            age: ByGroup { non_dg: Moments { mean: 30.0, sd: 12.0 }, dg: Moments { mean: 40.0, sd: 13.0 } },
            female_share: ByGroup { non_dg: 0.72, dg: 0.69 },
            education_years: ByGroup {
                non_dg: Moments { mean: 8.4, sd: 3.9 },
                dg: Moments { mean: 5.5, sd: 4.3 },
            },
            road_distance_categories: 4,
            start_date: NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2012, 12, 31).expect("valid date"),
            seed: 0,
        }
    }
}

const AGE_RANGE: (f64, f64) = (15.0, 95.0);
const EDUCATION_RANGE: (f64, f64) = (-0.5, 20.5);
const CD4_RANGE: (f64, f64) = (5.0, 2000.0);
const MAX_REDRAWS: usize = 50;

/// Samplers resolved from a validated config.
#[derive(Debug, Clone)]
struct Resolved {
    gap: TruncNormal,
    age: ByGroup<TruncNormal>,
    education: ByGroup<TruncNormal>,
    initial_cd4: TruncNormal,
    window_days: i64,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid simulation config: {e}")))
    }

    /// Expected annualized change at `cd4` after initiation.
    pub fn recovery_at(&self, cd4: f64) -> f64 {
        let k = &self.recovery_curve;
        match k.iter().position(|&(x, _)| cd4 < x) {
            Some(0) => k[0].1,
            None => k[k.len() - 1].1,
            Some(i) => {
                let (x0, y0) = k[i - 1];
                let (x1, y1) = k[i];
                y0 + (y1 - y0) * (cd4 - x0) / (x1 - x0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<Resolved> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.n_individuals == 0 {
            return bad("n_individuals must be positive".into());
        }
        for (name, p) in [
            ("dg_fraction", self.dg_fraction),
            ("art_init_prob", self.art_init_prob),
            ("female_share.non_dg", self.female_share.non_dg),
            ("female_share.dg", self.female_share.dg),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.min_visits < 3 || self.max_visits < self.min_visits {
            return bad(format!(
                "visit counts must satisfy 3 <= min_visits <= max_visits, got {}..={}",
                self.min_visits, self.max_visits
            ));
        }
        if self.visit_gap_mean_days <= self.visit_gap_min_days {
            return bad(format!(
                "visit_gap_mean_days {} must exceed the minimum gap {}",
                self.visit_gap_mean_days, self.visit_gap_min_days
            ));
        }
        if self.noise_sd < 0.0 || self.qualified_gap_shift_days < 0.0 {
            return bad("noise_sd and qualified_gap_shift_days must be non-negative".into());
        }
        if self.recovery_curve.is_empty() {
            return bad("recovery_curve needs at least one knot".into());
        }
        for w in self.recovery_curve.windows(2) {
            if !(w[0].0 < w[1].0) || w[1].1 > w[0].1 {
                return bad("recovery_curve knots must have increasing start values and non-increasing rates".into());
            }
        }
        let (lo, hi) = self.manipulation_window;
        if !(lo < hi) {
            return bad(format!("manipulation_window [{lo}, {hi}) is empty"));
        }
        let earliest = NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date");
        let latest = NaiveDate::from_ymd_opt(2012, 12, 31).expect("valid date");
        if self.start_date < earliest || self.end_date > latest || self.start_date >= self.end_date {
            return bad(format!("simulation dates must lie within {earliest}..{latest}"));
        }
        let window_days = (self.end_date - self.start_date).num_days();
        let min_span = (self.min_visits - 1) as f64 * (self.visit_gap_min_days + self.qualified_gap_shift_days);
        if min_span > window_days as f64 {
            return bad("the date range cannot hold the minimum number of visits".into());
        }
        let tn = |m: Moments, range: (f64, f64)| TruncNormal::with_moments(m.mean, m.sd, range.0, range.1);
        Ok(Resolved {
            gap: TruncNormal::with_moments(
                self.visit_gap_mean_days,
                self.visit_gap_sd_days,
                self.visit_gap_min_days,
                f64::INFINITY,
            )?,
            age: ByGroup { non_dg: tn(self.age.non_dg, AGE_RANGE)?, dg: tn(self.age.dg, AGE_RANGE)? },
            education: ByGroup {
                non_dg: tn(self.education_years.non_dg, EDUCATION_RANGE)?,
                dg: tn(self.education_years.dg, EDUCATION_RANGE)?,
            },
            initial_cd4: tn(self.initial_cd4, CD4_RANGE)?,
            window_days,
        })
    }

    fn delta_at(&self, date: NaiveDate) -> f64 {
        match self.era_effect {
            None => self.delta,
            Some(m) if date <= self.law_change_date => self.delta * m,
            Some(_) => 0.0,
        }
    }
}

/// Ground truth of one generated interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRecord {
    pub person_id: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub start_cd4: f64,
    pub post_initiation: bool,
    pub dg_ever: bool,
    /// Expected annualized change without manipulation.
    pub expected_rate: f64,
    pub manipulated: bool,
    /// Annualized offset applied for manipulation.
    pub manipulation_offset: f64,
    /// Realized annualized change minus expected annualized change
    /// (includes rounding and the floor at zero).
    pub noise: f64,
    /// Recipient below the threshold at the start of the interval.
    pub qualified: bool,
    pub base_gap_days: i64,
    pub gap_shift_days: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub persons: Vec<PersonRecord>,
    pub observations: Vec<ObservationRecord>,
    pub truth: Vec<TruthRecord>,
}

struct PersonDraw {
    person: PersonRecord,
    observations: Vec<ObservationRecord>,
    truth: Vec<TruthRecord>,
}

fn person_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn generate_person(cfg: &SimConfig, r: &Resolved, index: usize) -> PersonDraw {
    let mut rng = person_rng(cfg.seed, index);
    let dg = rng.random_bool(cfg.dg_fraction);
    let female = rng.random_bool(cfg.female_share.get(dg));
    let education = r.education.get(dg).sample(&mut rng).round().clamp(0.0, 20.0) as u8;
    let road = rng.random_range(0..cfg.road_distance_categories.max(1));
    let age = r.age.get(dg).sample(&mut rng);

    // Visit count and base gaps, redrawn until the worst-case span fits.
    let shift = cfg.qualified_gap_shift_days.round() as i64;
    let mut n_visits = rng.random_range(cfg.min_visits..=cfg.max_visits);
    let base_gaps: Vec<i64> = 'draw: loop {
        for _ in 0..MAX_REDRAWS {
            let gaps: Vec<i64> = (1..n_visits).map(|_| r.gap.sample(&mut rng).round() as i64).collect();
            if gaps.iter().sum::<i64>() + shift * gaps.len() as i64 <= r.window_days {
                break 'draw gaps;
            }
        }
        n_visits = (n_visits - 1).max(cfg.min_visits);
        if n_visits == cfg.min_visits {
            // Fall back to minimal gaps, which validation guarantees fit.
            let floor = cfg.visit_gap_min_days.ceil() as i64;
            break vec![floor; n_visits - 1];
        }
    };
    let max_span = base_gaps.iter().sum::<i64>() + shift * base_gaps.len() as i64;
    let first = cfg.start_date + Duration::days(rng.random_range(0..=r.window_days - max_span));

    let init_visit = rng
        .random_bool(cfg.art_init_prob)
        .then(|| rng.random_range(0..=n_visits / 2));
    let mut cd4 = r.initial_cd4.sample(&mut rng).round();
    let noise = Normal::new(0.0, cfg.noise_sd).expect("valid noise sd");

    let person_id = format!("S{index:06}");
    let mut dates = vec![first];
    let mut observations = vec![ObservationRecord { person_id: person_id.clone(), date: first, cd4 }];
    let mut truth = Vec::with_capacity(n_visits - 1);
    for (k, &base) in base_gaps.iter().enumerate() {
        let start = dates[k];
        let post = init_visit.is_some_and(|v| k >= v);
        let qualified = dg && cd4 < cfg.threshold;
        let gap_shift = if qualified { shift } else { 0 };
        let days = base + gap_shift;
        let end = start + Duration::days(days);
        let years = days as f64 / DAYS_PER_YEAR;

        let expected_rate = if post { cfg.recovery_at(cd4) } else { cfg.pre_init_drift };
        let (lo, hi) = cfg.manipulation_window;
        let manipulated = dg && post && lo <= cd4 && cd4 < hi && cfg.delta_at(start) != 0.0;
        let offset = if manipulated { cfg.delta_at(start) } else { 0.0 };
        let expected_change = (expected_rate + offset) * years;
        let rate_noise = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let next = (cd4 + expected_change + rate_noise * years).round().max(0.0);

        truth.push(TruthRecord {
            person_id: person_id.clone(),
            start_date: start,
            end_date: end,
            start_cd4: cd4,
            post_initiation: post,
            dg_ever: dg,
            expected_rate,
            manipulated,
            manipulation_offset: offset,
            noise: (next - cd4 - expected_change) / years,
            qualified,
            base_gap_days: base,
            gap_shift_days: gap_shift,
        });
        cd4 = next;
        dates.push(end);
        observations.push(ObservationRecord { person_id: person_id.clone(), date: end, cd4 });
    }

    let birth_year = (decimal_year(first) - 0.5 - age).round() as i32;
    let person = PersonRecord {
        person_id,
        dg_ever: dg,
        sex: if female { Sex::Female } else { Sex::Male },
        birth_year,
        education_years: education,
        road_distance_cat: road,
        art_init_date: init_visit.map(|v| dates[v]),
        dg_pre_law: Some(dg && first <= cfg.law_change_date),
    };
    PersonDraw { person, observations, truth }
}

/// Generate a cohort. Output depends only on `cfg` (including its seed).
pub fn generate_panel(cfg: &SimConfig, exec: Execution) -> Result<SimOutput> {
    let resolved = cfg.resolve()?;
    let draws = exec.map_range(cfg.n_individuals, |i| generate_person(cfg, &resolved, i));
    let mut out = SimOutput { persons: Vec::new(), observations: Vec::new(), truth: Vec::new() };
    for d in draws {
        out.persons.push(d.person);
        out.observations.extend(d.observations);
        out.truth.extend(d.truth);
    }
    Ok(out)
}

pub fn write_truth<W: Write>(w: W, truth: &[TruthRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "person_id",
        "start_date",
        "end_date",
        "start_cd4",
        "post_initiation",
        "dg_ever",
        "expected_rate",
        "manipulated",
        "manipulation_offset",
        "noise",
        "qualified",
        "base_gap_days",
        "gap_shift_days",
    ])?;
    let b = |x: bool| u8::from(x).to_string();
    for t in truth {
        out.write_record([
            t.person_id.clone(),
            t.start_date.to_string(),
            t.end_date.to_string(),
            t.start_cd4.to_string(),
            b(t.post_initiation),
            b(t.dg_ever),
            t.expected_rate.to_string(),
            b(t.manipulated),
            t.manipulation_offset.to_string(),
            t.noise.to_string(),
            b(t.qualified),
            t.base_gap_days.to_string(),
            t.gap_shift_days.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of the expected post-initiation rate within one start bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthBin {
    pub bin_lo: f64,
    pub n: usize,
    pub mean_expected_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSummary {
    pub n_intervals: usize,
    pub n_manipulated: usize,
    /// Share of intervals carrying the manipulation offset.
    pub manipulation_prevalence: f64,
    pub mean_manipulation_offset: Option<f64>,
    /// Post-initiation expected recovery by width-25 start bin.
    pub expected_by_bin: Vec<TruthBin>,
    pub mean_gap_qualified_dg: Option<f64>,
    pub mean_gap_qualified_non_dg: Option<f64>,
    pub mean_gap_unqualified: Option<f64>,
    /// Mean gap of qualified recipients minus that of non-recipients below the threshold.
    pub realized_gap_shift: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Summarize what the detectors should find, bins of width 25 up to 500.
pub fn describe_truth(truth: &[TruthRecord], threshold: f64) -> TruthSummary {
    let n_manipulated = truth.iter().filter(|t| t.manipulated).count();
    let mut bins = vec![(0.0, 0usize); 21];
    for t in truth.iter().filter(|t| t.post_initiation) {
        let b = crate::panel::bin_index(t.start_cd4, 25.0) as usize;
        bins[b].0 += t.expected_rate;
        bins[b].1 += 1;
    }
    let gap = |t: &TruthRecord| (t.base_gap_days + t.gap_shift_days) as f64;
    let below = |t: &&TruthRecord| t.start_cd4 < threshold;
    let q_dg = mean_of(truth.iter().filter(|t| t.qualified).map(gap));
    let q_non = mean_of(truth.iter().filter(below).filter(|t| !t.dg_ever).map(gap));
    TruthSummary {
        n_intervals: truth.len(),
        n_manipulated,
        manipulation_prevalence: if truth.is_empty() { 0.0 } else { n_manipulated as f64 / truth.len() as f64 },
        mean_manipulation_offset: mean_of(truth.iter().filter(|t| t.manipulated).map(|t| t.manipulation_offset)),
        expected_by_bin: bins
            .into_iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(b, (s, n))| TruthBin { bin_lo: b as f64 * 25.0, n, mean_expected_rate: s / n as f64 })
            .collect(),
        mean_gap_qualified_dg: q_dg,
        mean_gap_qualified_non_dg: q_non,
        mean_gap_unqualified: mean_of(truth.iter().filter(|t| !below(t)).map(gap)),
        realized_gap_shift: q_dg.zip(q_non).map(|(a, b)| a - b),
    }
}

#[cfg(test)]
mod tests;

