//! Interval-level analysis dataset built from dated running-variable
//! measurements.
//!
//! Each retained person with `n` observations contributes the `n - 1`
//! consecutive pairs of their date-sorted tests. A [`PanelDataset`] is
//! immutable: trimming, annotation and filtering all return new datasets
//! that share the person table and observation histories.

mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::nearest_rank;

pub use io::{
    read_observations, read_observations_from, read_persons, read_persons_from,
    write_intervals, write_observations, write_persons,
};

/// Days per year used for annualization.
pub const DAYS_PER_YEAR: f64 = 365.25;
/// Minimum number of tests a person needs to enter the panel.
pub const MIN_OBSERVATIONS: usize = 3;
/// Start values at or above this level share one terminal bin.
pub const TERMINAL_BIN_FLOOR: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub person_id: String,
    pub dg_ever: bool,
    pub sex: Sex,
    pub birth_year: i32,
    pub education_years: u8,
    pub road_distance_cat: u8,
    pub art_init_date: Option<NaiveDate>,
    /// Grant receipt recorded before the 2008 rule change. Optional column;
    /// only the law-change analysis needs it.
    pub dg_pre_law: Option<bool>,
}

impl PersonRecord {
    /// Age in decimal years at `date`, taking mid-year as the birthday.
    pub fn age_at(&self, date: NaiveDate) -> f64 {
        decimal_year(date) - (f64::from(self.birth_year) + 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub person_id: String,
    pub date: NaiveDate,
    pub cd4: f64,
}

/// One test in a person's history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Test {
    pub date: NaiveDate,
    pub cd4: f64,
}

/// Index of a person within a dataset's person table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PersonIdx(pub u32);

impl PersonIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// A consecutive pair of tests: the unit of analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub person: PersonIdx,
    /// Position of the start test in the person's history.
    pub seq: u16,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub start_cd4: f64,
    pub end_cd4: f64,
    pub delta_days: f64,
    pub delta_years: f64,
    pub annualized_change: f64,
    pub post_initiation: bool,
    pub first_after_crossing: bool,
    pub calendar_year: i32,
    pub start_bin: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrimLog {
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub lower_cutoff: Option<f64>,
    pub upper_cutoff: f64,
    pub removed_low: usize,
    pub removed_high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationLog {
    pub threshold: f64,
    pub bin_width: f64,
    pub first_after_crossing_flagged: usize,
    /// Persons who cross upward again after their first crossing; only the
    /// first crossing is flagged.
    pub persons_with_repeat_crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterLog {
    pub filter: String,
    pub kept: usize,
    pub removed: usize,
}

/// Counts dropped or changed by each rule, in application order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Provenance {
    pub persons_input: usize,
    pub observations_input: usize,
    pub persons_dropped_min_obs: usize,
    pub persons_retained: usize,
    pub intervals_built: usize,
    pub trim: Option<TrimLog>,
    pub annotation: Option<AnnotationLog>,
    pub filters: Vec<FilterLog>,
}

/// Which intervals a recipe runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Population {
    All,
    PreInitiation,
    PostInitiation,
    /// Both endpoints inside the closed date range.
    DateWindow { start: NaiveDate, end: NaiveDate },
}

impl Population {
    /// Short tag used in output file names.
    pub fn tag(&self) -> String {
        match self {
            Population::All => "all".into(),
            Population::PreInitiation => "pre-init".into(),
            Population::PostInitiation => "post-init".into(),
            Population::DateWindow { start, end } => format!("{start}_{end}"),
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone)]
pub struct PanelDataset {
    persons: Arc<[PersonRecord]>,
    histories: Arc<[Vec<Test>]>,
    intervals: Vec<IntervalRecord>,
    /// Sorted annualized changes of the dataset as built; trimming cutoffs
    /// always come from this pooled distribution.
    trim_basis: Arc<[f64]>,
    provenance: Provenance,
}

pub fn decimal_year(date: NaiveDate) -> f64 {
    let year = date.year();
    let days_in_year = if date.leap_year() { 366.0 } else { 365.0 };
    f64::from(year) + (f64::from(date.ordinal0()) + 0.5) / days_in_year
}

/// Change per year between two tests `delta_days` apart.
pub fn annualize(start_cd4: f64, end_cd4: f64, delta_days: f64) -> f64 {
    (end_cd4 - start_cd4) / (delta_days / DAYS_PER_YEAR)
}

/// Bin index of a start value: `floor(value / width)`, with everything at or
/// above [`TERMINAL_BIN_FLOOR`] pooled into the last bin.
pub fn bin_index(value: f64, width: f64) -> u32 {
    let terminal = (TERMINAL_BIN_FLOOR / width).floor() as u32;
    ((value / width).floor().max(0.0) as u32).min(terminal)
}

impl PanelDataset {
    /// Turn raw tests into the interval dataset.
    ///
    /// Persons with fewer than [`MIN_OBSERVATIONS`] tests are dropped. Start
    /// bins are computed with the default width of 25 and no interval is
    /// flagged as first-after-crossing until [`PanelDataset::annotate`] runs.
    pub fn build(observations: &[ObservationRecord], persons: &[PersonRecord]) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::with_capacity(persons.len());
        for (i, p) in persons.iter().enumerate() {
            if index.insert(p.person_id.as_str(), i).is_some() {
                return Err(Error::data(format!("duplicate person_id {:?}", p.person_id)));
            }
        }

        let mut by_person: Vec<Vec<Test>> = vec![Vec::new(); persons.len()];
        for obs in observations {
            let Some(&i) = index.get(obs.person_id.as_str()) else {
                return Err(Error::data(format!(
                    "observation on {} references unknown person {:?}",
                    obs.date, obs.person_id
                )));
            };
            if !obs.cd4.is_finite() || obs.cd4 < 0.0 {
                return Err(Error::data(format!(
                    "invalid cd4 {} for person {:?} on {}",
                    obs.cd4, obs.person_id, obs.date
                )));
            }
            by_person[i].push(Test { date: obs.date, cd4: obs.cd4 });
        }

        let mut duplicates = Vec::new();
        for (i, tests) in by_person.iter_mut().enumerate() {
            tests.sort_by_key(|t| t.date);
            for w in tests.windows(2) {
                if w[0].date == w[1].date {
                    duplicates.push(format!("({}, {})", persons[i].person_id, w[0].date));
                }
            }
        }
        if !duplicates.is_empty() {
            let shown = duplicates.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
            return Err(Error::data(format!(
                "{} duplicate (person_id, date) keys: {shown}{}",
                duplicates.len(),
                if duplicates.len() > 10 { ", ..." } else { "" }
            )));
        }

        for (p, tests) in persons.iter().zip(&by_person) {
            for t in tests {
                let age = p.age_at(t.date);
                if !(10.0..=110.0).contains(&age) {
                    return Err(Error::data(format!(
                        "person {:?} would be {age:.1} years old on {}",
                        p.person_id, t.date
                    )));
                }
            }
        }

        let mut kept_persons = Vec::new();
        let mut histories = Vec::new();
        let mut intervals = Vec::new();
        for (p, tests) in persons.iter().zip(by_person) {
            if tests.len() < MIN_OBSERVATIONS {
                continue;
            }
            if tests.len() > usize::from(u16::MAX) {
                return Err(Error::data(format!("person {:?} has too many tests", p.person_id)));
            }
            let idx = PersonIdx(kept_persons.len() as u32);
            for (k, w) in tests.windows(2).enumerate() {
                intervals.push(make_interval(idx, k as u16, p, w[0], w[1]));
            }
            kept_persons.push(p.clone());
            histories.push(tests);
        }

        let mut basis: Vec<f64> = intervals.iter().map(|iv| iv.annualized_change).collect();
        basis.sort_by(f64::total_cmp);

        let provenance = Provenance {
            persons_input: persons.len(),
            observations_input: observations.len(),
            persons_dropped_min_obs: persons.len() - kept_persons.len(),
            persons_retained: kept_persons.len(),
            intervals_built: intervals.len(),
            ..Provenance::default()
        };
        Ok(PanelDataset {
            persons: kept_persons.into(),
            histories: histories.into(),
            intervals,
            trim_basis: basis.into(),
            provenance,
        })
    }

    pub fn persons(&self) -> &[PersonRecord] {
        &self.persons
    }

    pub fn person(&self, idx: PersonIdx) -> &PersonRecord {
        &self.persons[idx.get()]
    }

    /// Date-sorted tests of a retained person.
    pub fn history(&self, idx: PersonIdx) -> &[Test] {
        &self.histories[idx.get()]
    }

    pub fn intervals(&self) -> &[IntervalRecord] {
        &self.intervals
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Number of distinct persons with at least one interval.
    pub fn n_individuals(&self) -> usize {
        let mut seen = vec![false; self.persons.len()];
        self.intervals.iter().filter(|iv| !std::mem::replace(&mut seen[iv.person.get()], true)).count()
    }

    fn with_intervals(&self, intervals: Vec<IntervalRecord>, provenance: Provenance) -> Self {
        PanelDataset {
            persons: Arc::clone(&self.persons),
            histories: Arc::clone(&self.histories),
            intervals,
            trim_basis: Arc::clone(&self.trim_basis),
            provenance,
        }
    }

    /// Drop intervals in the tails of the pooled annualized-change
    /// distribution.
    ///
    /// Cutoffs are nearest-rank percentiles of the dataset as built. An
    /// interval is removed when its change is at or below the lower cutoff
    /// (skipped when `lower_pct` is 0) or strictly above the upper cutoff, so
    /// each tail loses `ceil(pct/100 * n)` ranks. Because the cutoffs never
    /// move, trimming twice with the same percentiles is a no-op.
    pub fn trim_outliers(&self, lower_pct: f64, upper_pct: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&lower_pct) || !(0.0..=100.0).contains(&upper_pct) {
            return Err(Error::config("trim percentiles must lie in [0, 100]"));
        }
        if lower_pct >= upper_pct {
            return Err(Error::config(format!(
                "lower trim percentile {lower_pct} must be below upper {upper_pct}"
            )));
        }
        if self.trim_basis.is_empty() {
            return Err(Error::data("cannot trim an empty dataset"));
        }
        let lower_cutoff = (lower_pct > 0.0).then(|| nearest_rank(&self.trim_basis, lower_pct));
        let upper_cutoff = nearest_rank(&self.trim_basis, upper_pct);

        let mut log = TrimLog { lower_pct, upper_pct, lower_cutoff, upper_cutoff, ..TrimLog::default() };
        let kept: Vec<IntervalRecord> = self
            .intervals
            .iter()
            .filter(|iv| {
                let x = iv.annualized_change;
                if lower_cutoff.is_some_and(|lo| x <= lo) {
                    log.removed_low += 1;
                    false
                } else if x > upper_cutoff {
                    log.removed_high += 1;
                    false
                } else {
                    true
                }
            })
            .cloned()
            .collect();

        let mut provenance = self.provenance.clone();
        provenance.trim = Some(match provenance.trim.take() {
            // Re-trimming accumulates removal counts.
            Some(prev) if prev.lower_pct == lower_pct && prev.upper_pct == upper_pct => TrimLog {
                removed_low: prev.removed_low + log.removed_low,
                removed_high: prev.removed_high + log.removed_high,
                ..log
            },
            _ => log,
        });
        Ok(self.with_intervals(kept, provenance))
    }

    /// Assign start bins and the first-after-crossing flag.
    ///
    /// A person's flagged interval is the one starting at their first test
    /// above `threshold` that follows an earlier test at or below it. Only
    /// that first upward crossing is flagged; later re-crossings are counted
    /// in the provenance.
    pub fn annotate(&self, threshold: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::config(format!("bin width must be positive, got {bin_width}")));
        }
        let mut crossing: Vec<Option<u16>> = Vec::with_capacity(self.histories.len());
        let mut repeaters = 0;
        for tests in self.histories.iter() {
            let mut seen_below = false;
            let mut first = None;
            let mut repeat = false;
            for (k, test) in tests.iter().enumerate() {
                if test.cd4 > threshold {
                    if seen_below {
                        if first.is_none() {
                            first = Some(k as u16);
                        } else if tests[k - 1].cd4 <= threshold {
                            repeat = true;
                        }
                    }
                } else {
                    seen_below = true;
                }
            }
            repeaters += usize::from(repeat);
            crossing.push(first);
        }

        let mut flagged = 0;
        let intervals: Vec<IntervalRecord> = self
            .intervals
            .iter()
            .map(|iv| {
                let first_after_crossing = crossing[iv.person.get()] == Some(iv.seq);
                flagged += usize::from(first_after_crossing);
                IntervalRecord {
                    start_bin: bin_index(iv.start_cd4, bin_width),
                    first_after_crossing,
                    ..iv.clone()
                }
            })
            .collect();

        let mut provenance = self.provenance.clone();
        provenance.annotation = Some(AnnotationLog {
            threshold,
            bin_width,
            first_after_crossing_flagged: flagged,
            persons_with_repeat_crossings: repeaters,
        });
        Ok(self.with_intervals(intervals, provenance))
    }

    /// Restrict to a population. An empty result is logged, not an error.
    pub fn filter(&self, which: Population) -> Self {
        if which == Population::All {
            return self.clone();
        }
        let intervals: Vec<IntervalRecord> =
            self.intervals.iter().filter(|iv| self.in_population(iv, which)).cloned().collect();
        let mut provenance = self.provenance.clone();
        provenance.filters.push(FilterLog {
            filter: which.tag(),
            kept: intervals.len(),
            removed: self.intervals.len() - intervals.len(),
        });
        self.with_intervals(intervals, provenance)
    }

    pub fn in_population(&self, iv: &IntervalRecord, which: Population) -> bool {
        match which {
            Population::All => true,
            Population::PostInitiation => iv.post_initiation,
            Population::PreInitiation => {
                !iv.post_initiation && self.person(iv.person).art_init_date.is_some()
            }
            Population::DateWindow { start, end } => {
                start <= iv.start_date && iv.end_date <= end
            }
        }
    }

    /// Intervals grouped by person, in dataset order.
    pub fn intervals_by_person(&self) -> BTreeMap<PersonIdx, Vec<&IntervalRecord>> {
        let mut map: BTreeMap<PersonIdx, Vec<&IntervalRecord>> = BTreeMap::new();
        for iv in &self.intervals {
            map.entry(iv.person).or_default().push(iv);
        }
        map
    }
}

fn make_interval(person: PersonIdx, seq: u16, p: &PersonRecord, start: Test, end: Test) -> IntervalRecord {
    let delta_days = (end.date - start.date).num_days() as f64;
    IntervalRecord {
        person,
        seq,
        start_date: start.date,
        end_date: end.date,
        start_cd4: start.cd4,
        end_cd4: end.cd4,
        delta_days,
        delta_years: delta_days / DAYS_PER_YEAR,
        annualized_change: annualize(start.cd4, end.cd4, delta_days),
        post_initiation: p.art_init_date.is_some_and(|init| start.date >= init),
        first_after_crossing: false,
        calendar_year: start.date.year(),
        start_bin: bin_index(start.cd4, 25.0),
    }
}

#[cfg(test)]
mod tests;
