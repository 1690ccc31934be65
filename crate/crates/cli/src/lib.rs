//! The `threshold-gap` command line: every pipeline stage as a subcommand
//! writing JSON and CSV artifacts under `--out`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use threshold_gap::density::{build_histogram, mccrary_test, write_histogram_csv, McCraryOptions};
use threshold_gap::describe::describe;
use threshold_gap::did::{
    run_bin_recovery_stats, run_binned_interactions, run_did, run_law_change, run_threshold_sweep,
    run_time_between, time_between_spec, write_percentiles_csv, BinControls, DidOptions, SweepOptions, WindowDef,
};
use threshold_gap::estimators::{render_table, FitResult, Model, Var};
use threshold_gap::panel::{read_observations, read_persons, write_intervals, write_observations, write_persons};
use threshold_gap::panel::{PanelDataset, Population};
use threshold_gap::par::Execution;
use threshold_gap::synthgen::{describe_truth, generate_panel, write_truth, SimConfig};
use threshold_gap::Error;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "THRESHOLD_GAP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "threshold-gap", version, about = "Detect threshold-induced manipulation in longitudinal panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known manipulation.
    Simulate(SimulateArgs),
    /// Build, trim and annotate intervals; writes intervals.csv.
    Intervals(DataArgs),
    /// Group means and SDs with Welch tests of recipient differences.
    Describe(DescribeArgs),
    /// Difference-in-differences of annualized change around the threshold.
    Did(DidArgs),
    /// Per-bin interaction profiles, or per-bin means and percentiles.
    Binned(BinnedArgs),
    /// Placebo-threshold sweep over sliding windows.
    Sweep(SweepArgs),
    /// Models of the number of days between tests.
    TimeBetween(TimeBetweenArgs),
    /// Grant receipt before and after the 2008 law change.
    LawChange(DataArgs),
    /// Histograms and the McCrary density test of start values.
    Density(DensityArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON file overriding simulation defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw; required.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n_individuals: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Directory holding persons.csv and observations.csv.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    #[arg(long)]
    persons: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    threshold: f64,
    #[arg(long, default_value_t = 25.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 1.0)]
    trim_lower: f64,
    #[arg(long, default_value_t = 99.0)]
    trim_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PopulationArg {
    All,
    PreInit,
    PostInit,
}

impl From<PopulationArg> for Population {
    fn from(p: PopulationArg) -> Self {
        match p {
            PopulationArg::All => Population::All,
            PopulationArg::PreInit => Population::PreInitiation,
            PopulationArg::PostInit => Population::PostInitiation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Ols,
    Fe,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ols => Model::Ols,
            ModelArg::Fe => Model::Fe,
        }
    }
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = PopulationArg::All)]
    population: PopulationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowDefArg {
    StartInWindow,
    FirstAfterCrossing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BinsArg {
    Width25,
    Width25Poly,
    Width50Poly,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Ols)]
    model: ModelArg,
    #[arg(long, value_enum, default_value_t = PopulationArg::All)]
    population: PopulationArg,
    /// Start-value controls; defaults to width 25 for OLS and width 50 plus
    /// a linear term for FE.
    #[arg(long, value_enum)]
    bins: Option<BinsArg>,
}

impl ModelArgs {
    fn options(&self) -> DidOptions {
        let mut opts = DidOptions::new(self.model.into(), self.population.into());
        if let Some(b) = self.bins {
            opts = opts.bin_controls(match b {
                BinsArg::Width25 => BinControls::Width25,
                BinsArg::Width25Poly => BinControls::Width25Poly,
                BinsArg::Width50Poly => BinControls::Width50Poly,
            });
        }
        opts
    }
}

#[derive(Debug, Args)]
struct DidArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 150.0)]
    window_lo: f64,
    #[arg(long, default_value_t = 250.0)]
    window_hi: f64,
    #[arg(long, value_enum, default_value_t = WindowDefArg::StartInWindow)]
    window_def: WindowDefArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutcomeArg {
    AnnualizedChange,
    DeltaDays,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileKind {
    /// Recipient-minus-non-recipient interaction per bin.
    Interactions,
    /// Mean annualized change per bin, with percentiles.
    Means,
}

#[derive(Debug, Args)]
struct BinnedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = ProfileKind::Interactions)]
    kind: ProfileKind,
    /// Outcome of the interaction profile.
    #[arg(long, value_enum, default_value_t = OutcomeArg::AnnualizedChange)]
    outcome: OutcomeArg,
    #[arg(long, value_enum, default_value_t = PopulationArg::All)]
    population: PopulationArg,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100.0)]
    width: f64,
    #[arg(long, default_value_t = 10.0)]
    step: f64,
    #[arg(long, default_value_t = 0.0)]
    range_lo: f64,
    #[arg(long, default_value_t = 600.0)]
    range_hi: f64,
}

#[derive(Debug, Args)]
struct TimeBetweenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Column 0-6; all columns when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=6))]
    column: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DensityValues {
    /// Start value of every interval.
    Start,
    /// Each person's first test.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    All,
    Dg,
    NonDg,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = PopulationArg::All)]
    population: PopulationArg,
    #[arg(long, value_enum, default_value_t = DensityValues::Start)]
    values: DensityValues,
    /// Which persons' values enter the test.
    #[arg(long, value_enum, default_value_t = GroupArg::All)]
    group: GroupArg,
    #[arg(long, default_value_t = 50.0)]
    bandwidth: f64,
    /// Histogram bin size of the test; defaults to 2 SD / sqrt(n).
    #[arg(long)]
    bin_size: Option<f64>,
    /// Bin width of the written histogram.
    #[arg(long, default_value_t = 25.0)]
    hist_width: f64,
}

/// Parse `args` (including the program name), run the subcommand and return
/// the process exit code: 0 on success, 1 on data errors, 2 on
/// configuration or usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("threshold-gap: {e}");
            if e.is_config() { 2 } else { 1 }
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // The global pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Intervals(a) => {
            let ds = load(&a)?;
            write_atomic(&a.out, "intervals.csv", |w| write_intervals(w, &ds))?;
            let p = ds.provenance();
            println!(
                "persons {} (dropped {} with fewer than 3 tests), intervals built {}, kept {}",
                p.persons_retained,
                p.persons_dropped_min_obs,
                p.intervals_built,
                ds.len()
            );
            Ok(())
        }
        Command::Describe(a) => {
            let population: Population = a.population.into();
            let ds = load(&a.data)?.filter(population);
            let d = describe(&ds)?;
            write_json(&a.data.out, &artifact("describe", population, None, "json"), &d)?;
            print!("{}", d.render());
            Ok(())
        }
        Command::Did(a) => did(&a),
        Command::Binned(a) => binned(&a),
        Command::Sweep(a) => sweep(&a),
        Command::TimeBetween(a) => time_between(&a),
        Command::LawChange(a) => law_change(&a),
        Command::Density(a) => density(&a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.n_individuals {
        cfg.n_individuals = n;
    }
    let out = generate_panel(&cfg, Execution::Parallel)?;
    write_atomic(&a.out, "persons.csv", |w| write_persons(w, &out.persons))?;
    write_atomic(&a.out, "observations.csv", |w| write_observations(w, &out.observations))?;
    write_atomic(&a.out, "truth.csv", |w| write_truth(w, &out.truth))?;
    write_json(&a.out, "truth_summary.json", &describe_truth(&out.truth, cfg.threshold))?;
    write_json(&a.out, "sim_config.json", &cfg)?;
    println!(
        "{} persons, {} tests, {} intervals written to {}",
        out.persons.len(),
        out.observations.len(),
        out.truth.len(),
        a.out.display()
    );
    Ok(())
}

fn did(a: &DidArgs) -> Result<(), Error> {
    let def = match a.window_def {
        WindowDefArg::StartInWindow => WindowDef::StartInWindow,
        WindowDefArg::FirstAfterCrossing => WindowDef::FirstAfterCrossing,
    };
    let opts = a.model.options().window(a.window_lo, a.window_hi).window_def(def);
    let ds = load(&a.data)?;
    let fit = run_did(&ds, &opts)?;
    #[derive(Serialize)]
    struct Out<'a> {
        options: &'a DidOptions,
        interaction: String,
        fit: &'a FitResult,
    }
    let name = artifact("did", opts.population, Some(opts.model), "json");
    write_json(&a.data.out, &name, &Out { options: &opts, interaction: opts.interaction_label(), fit: &fit })?;
    let label = opts.interaction_label();
    print!("{}", render_table(&[(opts.population.tag(), &fit)], &[label.as_str()]));
    if !fit.dropped.is_empty() {
        println!("dropped as collinear: {}", fit.dropped.join(", "));
    }
    Ok(())
}

fn binned(a: &BinnedArgs) -> Result<(), Error> {
    let population: Population = a.population.into();
    let ds = load(&a.data)?;
    let out = &a.data.out;
    match a.kind {
        ProfileKind::Interactions => {
            let outcome = match a.outcome {
                OutcomeArg::AnnualizedChange => Var::AnnualizedChange,
                OutcomeArg::DeltaDays => Var::DeltaDays,
            };
            let profile = run_binned_interactions(&ds, outcome, population)?;
            let recipe = format!("binned-{}", outcome.to_string().replace('_', "-"));
            write_atomic(out, &artifact(&recipe, population, Some(Model::Ols), "csv"), |w| profile.write_csv(w))?;
            write_json(out, &artifact(&recipe, population, Some(Model::Ols), "json"), &profile)?;
            println!("{} bins written", profile.rows.len());
        }
        ProfileKind::Means => {
            let (means, percentiles) = run_bin_recovery_stats(&ds, population)?;
            write_atomic(out, &artifact("binned-means", population, Some(Model::Ols), "csv"), |w| means.write_csv(w))?;
            write_json(out, &artifact("binned-means", population, Some(Model::Ols), "json"), &means)?;
            write_atomic(out, &artifact("binned-percentiles", population, None, "csv"), |w| {
                write_percentiles_csv(&percentiles, w)
            })?;
            println!("{} bins written", means.rows.len());
        }
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<(), Error> {
    let opts = a.model.options();
    let sweep = SweepOptions {
        width: a.width,
        step: a.step,
        range: (a.range_lo, a.range_hi),
        threshold: a.data.threshold,
    };
    let ds = load(&a.data)?;
    let result = run_threshold_sweep(&ds, &opts, &sweep, Execution::Parallel)?;
    let out = &a.data.out;
    write_atomic(out, &artifact("sweep", opts.population, Some(opts.model), "csv"), |w| result.write_csv(w))?;
    write_json(out, &artifact("sweep", opts.population, Some(opts.model), "json"), &result)?;
    let significant = result.rows.iter().filter(|r| r.p.is_some_and(|p| p < 0.05)).count();
    print!("{} windows, {} with p < 0.05", result.rows.len(), significant);
    if let Some(m) = result.min_row() {
        print!("; most negative [{}, {}): {:.2}", m.window_lo, m.window_hi, m.coef.unwrap_or(f64::NAN));
    }
    println!();
    Ok(())
}

fn time_between(a: &TimeBetweenArgs) -> Result<(), Error> {
    let ds = load(&a.data)?;
    let columns: Vec<u8> = match a.column {
        Some(c) => vec![c],
        None => (0..=6).collect(),
    };
    let mut fits = Vec::new();
    let mut keys = Vec::new();
    for c in columns {
        let spec = time_between_spec(c)?;
        let fit = run_time_between(&ds, c)?;
        let name = artifact(&format!("time-between-col{c}"), spec.spec.sample, Some(fit.model), "json");
        write_json(&a.data.out, &name, &fit)?;
        for k in &spec.key {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
        fits.push((format!("({c})"), fit));
    }
    let columns: Vec<(String, &FitResult)> = fits.iter().map(|(h, f)| (h.clone(), f)).collect();
    let rows: Vec<&str> = keys.iter().map(String::as_str).collect();
    print!("{}", render_table(&columns, &rows));
    Ok(())
}

fn law_change(a: &DataArgs) -> Result<(), Error> {
    let ds = load(a)?;
    let columns = run_law_change(&ds)?;
    for c in &columns {
        let population = match c.column {
            1 | 5 | 6 => "all",
            4 => "2003-2008-post-init",
            _ => "2003-2008",
        };
        let name = format!("law-change-col{}_{population}_{}.json", c.column, c.fit.model.tag());
        write_json(&a.out, &name, c)?;
    }
    let table: Vec<(String, &FitResult)> = columns.iter().map(|c| (format!("({})", c.column), &c.fit)).collect();
    let mut rows: Vec<&str> = Vec::new();
    for c in &columns {
        for coef in &c.fit.coefficients {
            if coef.label.contains("dg_") && !rows.contains(&coef.label.as_str()) {
                rows.push(&coef.label);
            }
        }
    }
    print!("{}", render_table(&table, &rows));
    Ok(())
}

fn density(a: &DensityArgs) -> Result<(), Error> {
    let population: Population = a.population.into();
    let ds = load(&a.data)?.filter(population);
    let keep = |dg: bool| match a.group {
        GroupArg::All => true,
        GroupArg::Dg => dg,
        GroupArg::NonDg => !dg,
    };
    let mut by_group: Vec<(bool, f64)> = Vec::new();
    match a.values {
        DensityValues::Start => {
            by_group.extend(ds.intervals().iter().map(|iv| (ds.person(iv.person).dg_ever, iv.start_cd4)));
        }
        DensityValues::First => {
            for &p in ds.intervals_by_person().keys() {
                by_group.push((ds.person(p).dg_ever, ds.history(p)[0].cd4));
            }
        }
    }
    let values: Vec<f64> = by_group.iter().filter(|(dg, _)| keep(*dg)).map(|v| v.1).collect();
    let opts = McCraryOptions { cutoff: a.data.threshold, bin_size: a.bin_size, bandwidth: a.bandwidth };
    let result = mccrary_test(&values, &opts)?;

    let hi = by_group.iter().map(|v| v.1).fold(0.0, f64::max) + a.hist_width;
    let hist = |pred: &dyn Fn(bool) -> bool| {
        let v: Vec<f64> = by_group.iter().filter(|(dg, _)| pred(*dg)).map(|v| v.1).collect();
        build_histogram(&v, a.hist_width, (0.0, hi))
    };
    let (all, non, dg) = (hist(&|_| true)?, hist(&|d| !d)?, hist(&|d| d)?);
    let groups = [("all", all.as_slice()), ("non-dg", non.as_slice()), ("dg", dg.as_slice())];
    write_atomic(&a.data.out, &artifact("density-histogram", population, None, "csv"), |w| {
        write_histogram_csv(&groups, w)
    })?;
    write_json(&a.data.out, &format!("density_{}_mccrary.json", population.tag()), &result)?;
    println!(
        "McCrary at {}: theta {:.4} (SE {:.4}), z {:.3}, p {:.4}, n {} left / {} right",
        opts.cutoff, result.theta, result.se, result.z, result.p, result.n_left, result.n_right
    );
    println!("note: the Cattaneo-Jansson-Ma excess-mass test is not implemented here; see the rddensity package.");
    Ok(())
}

/// `<recipe>_<population>_<model>.<ext>`, or without the model part.
fn artifact(recipe: &str, population: Population, model: Option<Model>, ext: &str) -> String {
    match model {
        Some(m) => format!("{recipe}_{}_{}.{ext}", population.tag(), m.tag()),
        None => format!("{recipe}_{}.{ext}", population.tag()),
    }
}

fn load(a: &DataArgs) -> Result<PanelDataset, Error> {
    let persons = a.persons.clone().unwrap_or_else(|| a.data.join("persons.csv"));
    let observations = a.observations.clone().unwrap_or_else(|| a.data.join("observations.csv"));
    let persons = read_persons(&persons).map_err(|e| with_path(e, &persons))?;
    let observations = read_observations(&observations).map_err(|e| with_path(e, &observations))?;
    PanelDataset::build(&observations, &persons)?
        .trim_outliers(a.trim_lower, a.trim_upper)?
        .annotate(a.threshold, a.bin_width)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Data(format!("cannot read {}: {io}", path.display())),
        other => other,
    }
}

/// Write `dir/name` through a temporary file in `dir`, renamed into place
/// once complete.
fn write_atomic<F>(dir: &Path, name: &str, body: F) -> Result<(), Error>
where
    F: FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> Result<(), Error>,
{
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Error> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}
