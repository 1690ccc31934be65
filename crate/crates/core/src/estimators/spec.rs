use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{IntervalRecord, PanelDataset, Population, Sex};

/// A variable resolvable from an interval and its person record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Var {
    AnnualizedChange,
    DeltaDays,
    StartCd4,
    /// Start-value bin of the given width, terminal bin pooled at 500.
    StartBin { width: f64 },
    CalendarYear,
    DgEver,
    DgPreLaw,
    /// Age in years at the interval start.
    Age,
    AgeSquared,
    Sex,
    EducationYears,
    RoadDistance,
    PostInitiation,
    FirstAfterCrossing,
    /// Indicator of `lo <= start_cd4 < hi`.
    Window { lo: f64, hi: f64 },
    /// Indicator of `start_cd4 < cutoff`.
    Below { cutoff: f64 },
    Person,
}

fn indicator(b: bool) -> f64 {
    if b { 1.0 } else { 0.0 }
}

impl Var {
    pub fn value(&self, ds: &PanelDataset, iv: &IntervalRecord) -> Result<f64> {
        let p = ds.person(iv.person);
        Ok(match *self {
            Var::AnnualizedChange => iv.annualized_change,
            Var::DeltaDays => iv.delta_days,
            Var::StartCd4 => iv.start_cd4,
            Var::StartBin { width } => f64::from(crate::panel::bin_index(iv.start_cd4, width)),
            Var::CalendarYear => f64::from(iv.calendar_year),
            Var::DgEver => indicator(p.dg_ever),
            Var::DgPreLaw => match p.dg_pre_law {
                Some(b) => indicator(b),
                None => {
                    return Err(Error::data(format!(
                        "person {:?} has no dg_pre_law value",
                        p.person_id
                    )))
                }
            },
            Var::Age => p.age_at(iv.start_date),
            Var::AgeSquared => p.age_at(iv.start_date).powi(2),
            Var::Sex => indicator(p.sex == Sex::Male),
            Var::EducationYears => f64::from(p.education_years),
            Var::RoadDistance => f64::from(p.road_distance_cat),
            Var::PostInitiation => indicator(iv.post_initiation),
            Var::FirstAfterCrossing => indicator(iv.first_after_crossing),
            Var::Window { lo, hi } => indicator(lo <= iv.start_cd4 && iv.start_cd4 < hi),
            Var::Below { cutoff } => indicator(iv.start_cd4 < cutoff),
            Var::Person => f64::from(iv.person.0),
        })
    }

    /// Whether the variable takes a small set of integer levels and can be
    /// expanded into dummies or used as a group.
    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            Var::AnnualizedChange | Var::DeltaDays | Var::StartCd4 | Var::Age | Var::AgeSquared
        )
    }

    pub fn level(&self, ds: &PanelDataset, iv: &IntervalRecord) -> Result<i64> {
        if !self.is_discrete() {
            return Err(Error::config(format!("{self} is continuous and has no levels")));
        }
        Ok(self.value(ds, iv)? as i64)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::AnnualizedChange => f.write_str("annualized_change"),
            Var::DeltaDays => f.write_str("delta_days"),
            Var::StartCd4 => f.write_str("start_cd4"),
            Var::StartBin { width } => write!(f, "start_bin{width}"),
            Var::CalendarYear => f.write_str("calendar_year"),
            Var::DgEver => f.write_str("dg_ever"),
            Var::DgPreLaw => f.write_str("dg_pre_law"),
            Var::Age => f.write_str("age"),
            Var::AgeSquared => f.write_str("age2"),
            Var::Sex => f.write_str("male"),
            Var::EducationYears => f.write_str("education_years"),
            Var::RoadDistance => f.write_str("road_distance_cat"),
            Var::PostInitiation => f.write_str("post_initiation"),
            Var::FirstAfterCrossing => f.write_str("first_after_crossing"),
            Var::Window { lo, hi } => write!(f, "window[{lo},{hi})"),
            Var::Below { cutoff } => write!(f, "below{cutoff}"),
            Var::Person => f.write_str("person"),
        }
    }
}

impl FromStr for Var {
    type Err = Error;

    /// Parses the names produced by `Display`, plus `window:LO:HI`,
    /// `below:CUTOFF` and `start_bin:WIDTH`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::config(format!("unknown variable name {s:?}"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| unknown());
        let simple = match s {
            "annualized_change" => Some(Var::AnnualizedChange),
            "delta_days" => Some(Var::DeltaDays),
            "start_cd4" => Some(Var::StartCd4),
            "start_bin" => Some(Var::StartBin { width: 25.0 }),
            "calendar_year" => Some(Var::CalendarYear),
            "dg_ever" => Some(Var::DgEver),
            "dg_pre_law" => Some(Var::DgPreLaw),
            "age" => Some(Var::Age),
            "age2" => Some(Var::AgeSquared),
            "sex" | "male" => Some(Var::Sex),
            "education_years" => Some(Var::EducationYears),
            "road_distance_cat" => Some(Var::RoadDistance),
            "post_initiation" => Some(Var::PostInitiation),
            "first_after_crossing" => Some(Var::FirstAfterCrossing),
            "person" | "person_id" => Some(Var::Person),
            _ => None,
        };
        if let Some(v) = simple {
            return Ok(v);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["window", lo, hi] => Ok(Var::Window { lo: num(lo)?, hi: num(hi)? }),
            ["below", c] => Ok(Var::Below { cutoff: num(c)? }),
            ["start_bin", w] => Ok(Var::StartBin { width: num(w)? }),
            _ => Err(unknown()),
        }
    }
}

/// Which level of a dummy-expanded variable is left out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Reference {
    /// The smallest observed level.
    First,
    /// The most frequent level in the sample (smallest on ties).
    MostFrequent,
    Level(i64),
    /// Keep every level; only sensible without an intercept.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Term {
    Continuous(Var),
    Dummies { var: Var, reference: Reference },
    Interaction(Box<Term>, Box<Term>),
}

impl Term {
    pub fn cont(var: Var) -> Self {
        Term::Continuous(var)
    }

    pub fn dummies(var: Var, reference: Reference) -> Self {
        Term::Dummies { var, reference }
    }

    /// Elementwise product with another term.
    pub fn times(self, other: Term) -> Self {
        Term::Interaction(Box::new(self), Box::new(other))
    }
}

/// Declarative description of one regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSpec {
    pub outcome: Var,
    pub terms: Vec<Term>,
    pub intercept: bool,
    /// Group whose fixed effects are absorbed by the within transformation.
    pub absorb: Option<Var>,
    pub cluster: Var,
    pub sample: Population,
}

impl RegressionSpec {
    /// OLS with an intercept, clustered by person, on the whole dataset.
    pub fn new(outcome: Var) -> Self {
        RegressionSpec {
            outcome,
            terms: Vec::new(),
            intercept: true,
            absorb: None,
            cluster: Var::Person,
            sample: Population::All,
        }
    }

    pub fn term(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn terms(mut self, terms: impl IntoIterator<Item = Term>) -> Self {
        self.terms.extend(terms);
        self
    }

    /// Absorb fixed effects of `var`; drops the intercept.
    pub fn absorb(mut self, var: Var) -> Self {
        self.absorb = Some(var);
        self.intercept = false;
        self
    }

    pub fn cluster(mut self, var: Var) -> Self {
        self.cluster = var;
        self
    }

    pub fn sample(mut self, population: Population) -> Self {
        self.sample = population;
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }
}
