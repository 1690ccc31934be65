//! Named analysis recipes built on the estimator engine: the threshold
//! difference-in-differences, binned interaction profiles, placebo-threshold
//! sweeps, time-between-tests models and the 2008 law-change check.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit, ControlFit, FitResult, Model, Reference, RegressionSpec, Term, Var};
use crate::panel::{bin_index, PanelDataset, Population, TERMINAL_BIN_FLOOR};
use crate::par::Execution;
use crate::stats::quantile_linear;

/// Range of start values a window may cover.
pub const WINDOW_DOMAIN: (f64, f64) = (0.0, 600.0);

/// Qualification threshold used for the sweep's bracketing flag and the time-between dummies.
pub const THRESHOLD: f64 = 200.0;

/// How the "near the threshold" indicator is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowDef {
    StartInWindow,
    FirstAfterCrossing,
}

/// The start-value control vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinControls {
    /// Dummies for bins of width 25.
    Width25,
    /// Width-25 dummies plus a linear start-value term.
    Width25Poly,
    /// Width-50 dummies plus a linear start-value term.
    Width50Poly,
}

impl BinControls {
    /// The control vector each model's table uses.
    pub fn default_for(model: Model) -> Self {
        match model {
            Model::Ols => BinControls::Width25,
            Model::Fe => BinControls::Width50Poly,
        }
    }

    fn terms(self) -> Vec<Term> {
        let (width, poly) = match self {
            BinControls::Width25 => (25.0, false),
            BinControls::Width25Poly => (25.0, true),
            BinControls::Width50Poly => (50.0, true),
        };
        let mut terms = vec![Term::dummies(Var::StartBin { width }, Reference::First)];
        if poly {
            terms.push(Term::cont(Var::StartCd4));
        }
        terms
    }
}

/// Options of one difference-in-differences fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DidOptions {
    pub window: (f64, f64),
    pub population: Population,
    pub model: Model,
    pub window_def: WindowDef,
    pub bin_controls: BinControls,
}

impl DidOptions {
    /// Window [150, 250), start-in-window, and the model's own bin controls.
    pub fn new(model: Model, population: Population) -> Self {
        DidOptions {
            window: (150.0, 250.0),
            population,
            model,
            window_def: WindowDef::StartInWindow,
            bin_controls: BinControls::default_for(model),
        }
    }

    pub fn window(mut self, lo: f64, hi: f64) -> Self {
        self.window = (lo, hi);
        self
    }

    pub fn window_def(mut self, def: WindowDef) -> Self {
        self.window_def = def;
        self
    }

    pub fn bin_controls(mut self, controls: BinControls) -> Self {
        self.bin_controls = controls;
        self
    }

    fn indicator(&self) -> Var {
        match self.window_def {
            WindowDef::StartInWindow => Var::Window { lo: self.window.0, hi: self.window.1 },
            WindowDef::FirstAfterCrossing => Var::FirstAfterCrossing,
        }
    }

    /// Label of the coefficient of interest.
    pub fn interaction_label(&self) -> String {
        format!("{}:{}", self.indicator(), Var::DgEver)
    }
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    let (min, max) = WINDOW_DOMAIN;
    if !(lo.is_finite() && hi.is_finite()) || lo < min || hi > max || lo >= hi {
        return Err(Error::config(format!(
            "window [{lo}, {hi}) must be a non-empty range inside [{min}, {max}]"
        )));
    }
    Ok(())
}

/// Demographic controls: age and age squared, plus for OLS education
/// dummies, sex and road-distance dummies (most frequent level omitted).
fn demographics(model: Model) -> Vec<Term> {
    let mut terms = vec![Term::cont(Var::Age), Term::cont(Var::AgeSquared)];
    if model == Model::Ols {
        terms.extend([
            Term::dummies(Var::EducationYears, Reference::MostFrequent),
            Term::cont(Var::Sex),
            Term::dummies(Var::RoadDistance, Reference::MostFrequent),
        ]);
    }
    terms
}

/// Full control spec for `outcome`: group main effect (OLS only), bin
/// controls, year effects and demographics, with person effects absorbed
/// for FE.
fn control_spec(outcome: Var, model: Model, bins: BinControls, population: Population) -> RegressionSpec {
    let mut spec = RegressionSpec::new(outcome).sample(population);
    if model == Model::Fe {
        spec = spec.absorb(Var::Person);
    } else {
        spec = spec.term(Term::cont(Var::DgEver));
    }
    spec.terms(bins.terms())
        .term(Term::dummies(Var::CalendarYear, Reference::First))
        .terms(demographics(model))
}

fn did_controls(opts: &DidOptions) -> RegressionSpec {
    control_spec(Var::AnnualizedChange, opts.model, opts.bin_controls, opts.population)
}

fn did_terms(opts: &DidOptions) -> Vec<Term> {
    let ind = opts.indicator();
    vec![Term::cont(ind), Term::cont(ind).times(Term::cont(Var::DgEver))]
}

/// The full regression spec `run_did` fits.
pub fn did_spec(opts: &DidOptions) -> RegressionSpec {
    did_controls(opts).terms(did_terms(opts))
}

/// Difference-in-differences of annualized change: the window (or
/// first-after-crossing) indicator interacted with ever receiving the grant.
pub fn run_did(ds: &PanelDataset, opts: &DidOptions) -> Result<FitResult> {
    if opts.window_def == WindowDef::StartInWindow {
        check_window(opts.window.0, opts.window.1)?;
    }
    fit(&did_spec(opts), ds)
}

/// One placebo window of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window_lo: f64,
    pub window_hi: f64,
    /// Interaction estimate; absent when the interaction was dropped.
    pub coef: Option<f64>,
    pub se: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub n_obs: usize,
    /// Whether the window contains the qualification threshold.
    pub contains_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub model: Model,
    pub population: Population,
    pub width: f64,
    pub step: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Row with the most negative estimate.
    pub fn min_row(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.coef.is_some())
            .min_by(|a, b| a.coef.unwrap().total_cmp(&b.coef.unwrap()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window_lo", "window_hi", "coef", "se", "t", "p", "n_obs", "contains_threshold"])?;
        for r in &self.rows {
            out.write_record([
                r.window_lo.to_string(),
                r.window_hi.to_string(),
                opt(r.coef),
                opt(r.se),
                opt(r.t),
                opt(r.p),
                r.n_obs.to_string(),
                u8::from(r.contains_threshold).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Placebo-threshold sweep settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub width: f64,
    pub step: f64,
    pub range: (f64, f64),
    pub threshold: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { width: 100.0, step: 10.0, range: WINDOW_DOMAIN, threshold: THRESHOLD }
    }
}

impl SweepOptions {
    /// Window lower edges `range.0, range.0 + step, ...` with the window
    /// inside the range.
    pub fn windows(&self) -> Result<Vec<(f64, f64)>> {
        let (lo, hi) = self.range;
        if !(self.width > 0.0 && self.step > 0.0) {
            return Err(Error::config("sweep width and step must be positive"));
        }
        check_window(lo, hi)?;
        let aligned = |x: f64| ((x / self.step).round() * self.step - x).abs() < 1e-9;
        if !aligned(lo) || !aligned(hi) {
            return Err(Error::config(format!(
                "sweep range [{lo}, {hi}] must be a multiple of the step {}",
                self.step
            )));
        }
        let n = ((hi - lo - self.width) / self.step + 1e-9).floor();
        if n < 0.0 {
            return Err(Error::config("sweep window is wider than the range"));
        }
        Ok((0..=n as usize)
            .map(|k| {
                let w = lo + k as f64 * self.step;
                (w, w + self.width)
            })
            .collect())
    }
}

/// Fit the DID once per placebo window, each an independent regression.
///
/// `base` supplies model, population and bin controls; its window is
/// ignored. Results do not depend on `exec`.
pub fn run_threshold_sweep(
    ds: &PanelDataset,
    base: &DidOptions,
    sweep: &SweepOptions,
    exec: Execution,
) -> Result<SweepResult> {
    let windows = sweep.windows()?;
    let base = base.window_def(WindowDef::StartInWindow);
    let controls = ControlFit::new(&did_controls(&base), ds)?;
    let fits = exec.map(&windows, |&(lo, hi)| {
        let opts = base.window(lo, hi);
        controls.fit_with(&did_terms(&opts)).map(|f| (opts, f))
    });
    let mut rows = Vec::with_capacity(windows.len());
    for r in fits {
        let (opts, f) = r?;
        let c = f.get(&opts.interaction_label());
        rows.push(SweepRow {
            window_lo: opts.window.0,
            window_hi: opts.window.1,
            coef: c.map(|c| c.estimate),
            se: c.map(|c| c.robust_se),
            t: c.map(|c| c.t_stat),
            p: c.map(|c| c.p_value),
            n_obs: f.n_obs,
            contains_threshold: opts.window.0 <= sweep.threshold && sweep.threshold < opts.window.1,
        });
    }
    Ok(SweepResult {
        model: base.model,
        population: base.population,
        width: sweep.width,
        step: sweep.step,
        rows,
    })
}

/// Width of the bins in profiles.
pub const PROFILE_BIN_WIDTH: f64 = 25.0;

/// One start-value bin of a profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub bin: u32,
    pub bin_lo: f64,
    /// Upper edge; absent for the terminal bin.
    pub bin_hi: Option<f64>,
    /// The omitted reference bin of an interaction profile.
    pub reference: bool,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n: usize,
    pub n_dg: usize,
}

/// Per-bin coefficients or means with 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinProfile {
    /// "interaction" or "mean".
    pub kind: String,
    pub outcome: String,
    pub population: Population,
    pub rows: Vec<BinRow>,
}

impl BinProfile {
    pub fn row(&self, bin: u32) -> Option<&BinRow> {
        self.rows.iter().find(|r| r.bin == bin)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "reference", "estimate", "se", "ci_lo", "ci_hi", "n", "n_dg"])?;
        for r in &self.rows {
            out.write_record([
                r.bin_lo.to_string(),
                opt(r.bin_hi),
                u8::from(r.reference).to_string(),
                opt(r.estimate),
                opt(r.se),
                opt(r.ci_lo),
                opt(r.ci_hi),
                r.n.to_string(),
                r.n_dg.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn bin_edges(bin: u32) -> (f64, Option<f64>) {
    let lo = f64::from(bin) * PROFILE_BIN_WIDTH;
    let hi = (lo < TERMINAL_BIN_FLOOR).then_some(lo + PROFILE_BIN_WIDTH);
    (lo, hi)
}

/// Row counts per observed bin, total and among grant recipients.
fn bin_counts(ds: &PanelDataset, population: Population) -> Vec<(u32, usize, usize)> {
    let terminal = bin_index(TERMINAL_BIN_FLOOR, PROFILE_BIN_WIDTH) as usize;
    let mut counts = vec![(0usize, 0usize); terminal + 1];
    for iv in ds.intervals().iter().filter(|iv| ds.in_population(iv, population)) {
        let b = bin_index(iv.start_cd4, PROFILE_BIN_WIDTH) as usize;
        counts[b].0 += 1;
        if ds.person(iv.person).dg_ever {
            counts[b].1 += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0)
        .map(|(b, (n, d))| (b as u32, n, d))
        .collect()
}

fn profile_row(f: &FitResult, label: &str, bin: u32, n: usize, n_dg: usize, reference: bool) -> BinRow {
    let (bin_lo, bin_hi) = bin_edges(bin);
    let c = f.get(label);
    let ci = f.ci(label, 0.05);
    BinRow {
        bin,
        bin_lo,
        bin_hi,
        reference,
        estimate: c.map(|c| c.estimate),
        se: c.map(|c| c.robust_se),
        ci_lo: ci.map(|c| c.0),
        ci_hi: ci.map(|c| c.1),
        n,
        n_dg,
    }
}

/// Bin dummies, the grant dummy and their interactions with no other
/// controls; returns each bin's interaction with a 95% interval. The
/// lowest observed bin is the reference.
pub fn run_binned_interactions(ds: &PanelDataset, outcome: Var, population: Population) -> Result<BinProfile> {
    let bins = Var::StartBin { width: PROFILE_BIN_WIDTH };
    let spec = RegressionSpec::new(outcome)
        .sample(population)
        .term(Term::dummies(bins, Reference::First))
        .term(Term::cont(Var::DgEver))
        .term(Term::dummies(bins, Reference::First).times(Term::cont(Var::DgEver)));
    let f = fit(&spec, ds)?;
    let counts = bin_counts(ds, population);
    let first = counts.first().map(|c| c.0);
    let rows = counts
        .into_iter()
        .map(|(b, n, d)| {
            let label = format!("{bins}={b}:{}", Var::DgEver);
            profile_row(&f, &label, b, n, d, Some(b) == first)
        })
        .collect();
    Ok(BinProfile { kind: "interaction".into(), outcome: outcome.to_string(), population, rows })
}

/// Distribution of the outcome within one bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileRow {
    pub bin_lo: f64,
    pub bin_hi: Option<f64>,
    pub n: usize,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
}

pub fn write_percentiles_csv<W: Write>(rows: &[PercentileRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_lo", "bin_hi", "n", "p10", "p25", "median", "p75", "p90"])?;
    for r in rows {
        out.write_record([
            r.bin_lo.to_string(),
            opt(r.bin_hi),
            r.n.to_string(),
            r.p10.to_string(),
            r.p25.to_string(),
            r.median.to_string(),
            r.p75.to_string(),
            r.p90.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-bin mean annualized change with cluster-robust 95% intervals (a
/// regression on the bin dummies alone), and per-bin percentiles.
pub fn run_bin_recovery_stats(ds: &PanelDataset, population: Population) -> Result<(BinProfile, Vec<PercentileRow>)> {
    let bins = Var::StartBin { width: PROFILE_BIN_WIDTH };
    let spec = RegressionSpec::new(Var::AnnualizedChange)
        .sample(population)
        .without_intercept()
        .term(Term::dummies(bins, Reference::None));
    let f = fit(&spec, ds)?;
    let rows = bin_counts(ds, population)
        .into_iter()
        .map(|(b, n, d)| profile_row(&f, &format!("{bins}={b}"), b, n, d, false))
        .collect();

    let terminal = bin_index(TERMINAL_BIN_FLOOR, PROFILE_BIN_WIDTH) as usize;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); terminal + 1];
    for iv in ds.intervals().iter().filter(|iv| ds.in_population(iv, population)) {
        values[bin_index(iv.start_cd4, PROFILE_BIN_WIDTH) as usize].push(iv.annualized_change);
    }
    let percentiles = values
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(b, mut v)| {
            v.sort_by(f64::total_cmp);
            let (bin_lo, bin_hi) = bin_edges(b as u32);
            PercentileRow {
                bin_lo,
                bin_hi,
                n: v.len(),
                p10: quantile_linear(&v, 0.10),
                p25: quantile_linear(&v, 0.25),
                median: quantile_linear(&v, 0.50),
                p75: quantile_linear(&v, 0.75),
                p90: quantile_linear(&v, 0.90),
            }
        })
        .collect();
    Ok((
        BinProfile { kind: "mean".into(), outcome: Var::AnnualizedChange.to_string(), population, rows },
        percentiles,
    ))
}

/// Time-between-tests models: column 0 is the unconditional group gap,
/// columns 1-6 the table's specifications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeBetweenSpec {
    pub column: u8,
    pub description: &'static str,
    pub spec: RegressionSpec,
    /// Labels of the coefficients the column is about.
    pub key: Vec<String>,
}

pub fn time_between_spec(column: u8) -> Result<TimeBetweenSpec> {
    let y = Var::DeltaDays;
    let dg = || Term::cont(Var::DgEver);
    let below = Var::Below { cutoff: THRESHOLD };
    let near = Var::Window { lo: THRESHOLD, hi: THRESHOLD + 50.0 };
    let fac = Var::FirstAfterCrossing;
    let fe = |population| control_spec(y, Model::Fe, BinControls::Width25Poly, population);
    let pair = |v: Var| vec![Term::cont(v), Term::cont(v).times(dg())];
    let label = |parts: &[Var]| parts.iter().map(Var::to_string).collect::<Vec<_>>().join(":");

    let (description, spec, key) = match column {
        0 => (
            "unconditional gap by grant receipt",
            RegressionSpec::new(y).term(dg()),
            vec![label(&[Var::DgEver])],
        ),
        1 => (
            "OLS, all: grant receipt with full controls",
            control_spec(y, Model::Ols, BinControls::Width25Poly, Population::All),
            vec![label(&[Var::DgEver])],
        ),
        2 => (
            "FE, all: currently qualified (start < 200) x grant",
            fe(Population::All).terms(pair(below)),
            vec![label(&[below, Var::DgEver])],
        ),
        3 | 4 => (
            if column == 3 {
                "FE, pre-initiation: start in [200, 250) x grant"
            } else {
                "FE, post-initiation: start in [200, 250) x grant"
            },
            fe(if column == 3 { Population::PreInitiation } else { Population::PostInitiation })
                .terms(pair(near)),
            vec![label(&[near, Var::DgEver])],
        ),
        5 | 6 => {
            let population = if column == 5 { Population::All } else { Population::PostInitiation };
            let fac_near = Term::cont(fac).times(Term::cont(near));
            let spec = fe(population)
                .terms(pair(fac))
                .terms(pair(near))
                .term(fac_near.clone())
                .term(fac_near.times(dg()));
            (
                if column == 5 {
                    "FE, all: first after crossing x [200, 250) x grant"
                } else {
                    "FE, post-initiation: first after crossing x [200, 250) x grant"
                },
                spec,
                vec![
                    label(&[fac, Var::DgEver]),
                    label(&[near, Var::DgEver]),
                    label(&[fac, near, Var::DgEver]),
                ],
            )
        }
        _ => return Err(Error::config(format!("time-between column must be 0-6, got {column}"))),
    };
    Ok(TimeBetweenSpec { column, description, spec, key })
}

/// Fit one time-between-tests column (outcome: days between tests).
pub fn run_time_between(ds: &PanelDataset, column: u8) -> Result<FitResult> {
    fit(&time_between_spec(column)?.spec, ds)
}

/// Date range of the pre-law-change era.
pub fn law_change_era() -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date"),
        NaiveDate::from_ymd_opt(2008, 12, 31).expect("valid date"),
    )
}

/// One column of the law-change check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawChangeColumn {
    pub column: u8,
    pub description: &'static str,
    pub fit: FitResult,
}

/// Six fits contrasting grant receipt recorded before the 2008 law change
/// with receipt at any time: main effects, window interactions on the
/// pre-2009 sample, and the pooled triple interaction. Needs the persons'
/// `dg_pre_law` column.
pub fn run_law_change(ds: &PanelDataset) -> Result<Vec<LawChangeColumn>> {
    if ds.persons().iter().any(|p| p.dg_pre_law.is_none()) {
        return Err(Error::data("law-change models need dg_pre_law for every person"));
    }
    let (start, end) = law_change_era();
    let era = ds.filter(Population::DateWindow { start, end });
    let window = Var::Window { lo: 150.0, hi: 250.0 };
    let pre = || Term::cont(Var::DgPreLaw);
    let fe_controls = |population| {
        control_spec(Var::AnnualizedChange, Model::Fe, BinControls::Width50Poly, population)
    };
    let triple = |spec: RegressionSpec| {
        spec.term(Term::cont(window))
            .term(Term::cont(window).times(Term::cont(Var::DgEver)))
            .term(Term::cont(window).times(Term::cont(Var::DgEver)).times(pre()))
    };

    let specs: Vec<(u8, &'static str, &PanelDataset, RegressionSpec)> = vec![
        (
            1,
            "OLS, all: grant ever and grant pre-law",
            ds,
            RegressionSpec::new(Var::AnnualizedChange).term(Term::cont(Var::DgEver)).term(pre()),
        ),
        (2, "OLS, 2003-2008: grant pre-law", &era, RegressionSpec::new(Var::AnnualizedChange).term(pre())),
        (
            3,
            "FE, 2003-2008: [150, 250) x grant pre-law",
            &era,
            fe_controls(Population::All).term(Term::cont(window)).term(Term::cont(window).times(pre())),
        ),
        (
            4,
            "FE, 2003-2008 post-initiation: [150, 250) x grant pre-law",
            &era,
            fe_controls(Population::PostInitiation)
                .term(Term::cont(window))
                .term(Term::cont(window).times(pre())),
        ),
        (
            5,
            "OLS, all: [150, 250) x grant x pre-law",
            ds,
            triple(control_spec(Var::AnnualizedChange, Model::Ols, BinControls::Width25, Population::All).term(pre())),
        ),
        (6, "FE, all: [150, 250) x grant x pre-law", ds, triple(fe_controls(Population::All))),
    ];
    specs
        .into_iter()
        .map(|(column, description, data, spec)| {
            Ok(LawChangeColumn { column, description, fit: fit(&spec, data)? })
        })
        .collect()
}

/// Label of the pooled triple interaction in law-change columns 5 and 6.
pub fn law_change_triple_label() -> String {
    format!("{}:{}:{}", Var::Window { lo: 150.0, hi: 250.0 }, Var::DgEver, Var::DgPreLaw)
}
