//! Group descriptives of a panel: recipients against non-recipients, with
//! Welch tests of the difference.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{IntervalRecord, PanelDataset, PersonIdx, Sex};
use crate::stats::{mean, sample_sd, welch_t_test, WelchTest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of the mean; clustered by person for interval variables.
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Person,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescribeRow {
    pub variable: &'static str,
    pub level: Level,
    pub all: GroupStats,
    pub non_dg: GroupStats,
    pub dg: GroupStats,
    /// Recipients minus non-recipients.
    pub test: WelchTest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptives {
    pub n_persons: usize,
    pub n_intervals: usize,
    pub dg_share: f64,
    pub rows: Vec<DescribeRow>,
}

impl Descriptives {
    pub fn row(&self, variable: &str) -> Option<&DescribeRow> {
        self.rows.iter().find(|r| r.variable == variable)
    }

    /// Plain-text table of means with SDs in parentheses.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "persons {}  intervals {}  received grant {:.3}", self.n_persons, self.n_intervals, self.dg_share);
        let _ = writeln!(
            s,
            "{:<20} {:>18} {:>18} {:>18} {:>10} {:>8}",
            "variable", "all", "non-recipients", "recipients", "diff", "p"
        );
        let cell = |g: &GroupStats| format!("{:.2} ({:.2})", g.mean, g.sd);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>18} {:>18} {:>18} {:>10.2} {:>8.4}",
                r.variable,
                cell(&r.all),
                cell(&r.non_dg),
                cell(&r.dg),
                r.test.difference,
                r.test.p_value
            );
        }
        s
    }
}

fn person_stats(x: &[f64]) -> GroupStats {
    let sd = sample_sd(x);
    GroupStats { n: x.len(), mean: mean(x), sd, se: sd / (x.len() as f64).sqrt() }
}

/// Mean with a person-clustered standard error (the intercept-only
/// regression's CR1 error).
fn clustered_stats(values: &[(PersonIdx, f64)]) -> GroupStats {
    let x: Vec<f64> = values.iter().map(|v| v.1).collect();
    let m = mean(&x);
    let mut sums: BTreeMap<PersonIdx, f64> = BTreeMap::new();
    for &(p, v) in values {
        *sums.entry(p).or_default() += v - m;
    }
    let g = sums.len() as f64;
    let n = x.len() as f64;
    let meat: f64 = sums.values().map(|s| s * s).sum();
    let se = if g > 1.0 { (g / (g - 1.0) * meat).sqrt() / n } else { f64::NAN };
    GroupStats { n: x.len(), mean: m, sd: sample_sd(&x), se }
}

fn row<T: Copy>(
    variable: &'static str,
    level: Level,
    items: &[(bool, T)],
    stats: impl Fn(&[T]) -> GroupStats,
    value: impl Fn(T) -> f64,
) -> DescribeRow {
    let pick = |keep: Option<bool>| -> Vec<T> {
        items.iter().filter(|(dg, _)| keep.is_none_or(|k| k == *dg)).map(|&(_, v)| v).collect()
    };
    let (all, non, dg) = (pick(None), pick(Some(false)), pick(Some(true)));
    let raw = |v: &[T]| v.iter().map(|&x| value(x)).collect::<Vec<_>>();
    DescribeRow {
        variable,
        level,
        all: stats(&all),
        non_dg: stats(&non),
        dg: stats(&dg),
        test: welch_t_test(&raw(&non), &raw(&dg)),
    }
}

/// Person variables are taken at each person's first test; interval
/// variables pool every interval in the dataset.
pub fn describe(ds: &PanelDataset) -> Result<Descriptives> {
    let by_person = ds.intervals_by_person();
    let dg_of = |p: PersonIdx| ds.person(p).dg_ever;
    let n_dg = by_person.keys().filter(|&&p| dg_of(p)).count();
    if n_dg < 2 || by_person.len() - n_dg < 2 {
        return Err(Error::data("describe needs at least two persons in each grant group"));
    }

    let mut rows = Vec::new();
    let person_var = |f: &dyn Fn(PersonIdx) -> f64| -> Vec<(bool, f64)> {
        by_person.keys().map(|&p| (dg_of(p), f(p))).collect()
    };
    let first_date = |p: PersonIdx| ds.history(p)[0].date;
    let person_rows: [(&'static str, Box<dyn Fn(PersonIdx) -> f64>); 3] = [
        ("age", Box::new(|p| ds.person(p).age_at(first_date(p)))),
        ("female", Box::new(|p| f64::from(u8::from(ds.person(p).sex == Sex::Female)))),
        ("education_years", Box::new(|p| f64::from(ds.person(p).education_years))),
    ];
    for (name, f) in &person_rows {
        rows.push(row(name, Level::Person, &person_var(f.as_ref()), person_stats, |v| v));
    }

    let interval_rows: [(&'static str, fn(&IntervalRecord) -> f64); 4] = [
        ("start_cd4", |iv| iv.start_cd4),
        ("annualized_change", |iv| iv.annualized_change),
        ("delta_days", |iv| iv.delta_days),
        ("post_initiation", |iv| f64::from(u8::from(iv.post_initiation))),
    ];
    for (name, f) in interval_rows {
        let items: Vec<(bool, (PersonIdx, f64))> =
            ds.intervals().iter().map(|iv| (dg_of(iv.person), (iv.person, f(iv)))).collect();
        rows.push(row(name, Level::Interval, &items, clustered_stats, |v| v.1));
    }

    Ok(Descriptives {
        n_persons: by_person.len(),
        n_intervals: ds.len(),
        dg_share: n_dg as f64 / by_person.len() as f64,
        rows,
    })
}
