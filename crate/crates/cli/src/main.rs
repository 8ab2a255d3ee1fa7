//! `dsips`: fit, span, bench and analyze-alpha over JSON/CSV files.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 a fit that did not converge.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsips::experiment::{self, ExperimentPlan};
use dsips::io::{self as dio, CountTable};
use dsips::local::{self, alpha_grid, figure1_curves};
use dsips::{
    fit_conventional, fit_cycle_table, fit_submodel_ips, greedy_spanning, validate_spanning, AlphaPolicy, FitConfig,
    FitReport, GeneratingClass, Schema, SpanningFamily, StepUnit,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "dsips", version, about = "Iterative proportional scaling via decomposable submodels")]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a hierarchical log-linear model to a contingency table.
    Fit(FitArgs),
    /// Build a spanning family of decomposable submodels for a model.
    Span(SpanArgs),
    /// Run the cycle-model convergence experiment.
    Bench(BenchArgs),
    /// Emit step-size curves and exponent diagnostics near the MLE.
    AnalyzeAlpha(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Algorithm {
    Conventional,
    Submodel,
    SubmodelAlpha0,
    SubmodelFixed(f64),
    CycleTree,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    match s {
        "conventional" => Ok(Algorithm::Conventional),
        "submodel" => Ok(Algorithm::Submodel),
        "submodel-alpha0" => Ok(Algorithm::SubmodelAlpha0),
        "cycle-tree" => Ok(Algorithm::CycleTree),
        _ => match s.strip_prefix("submodel-fixed:") {
            Some(a) => {
                let alpha: f64 = a.parse().map_err(|_| format!("invalid exponent `{a}`"))?;
                if alpha.is_finite() && alpha >= 0.0 {
                    Ok(Algorithm::SubmodelFixed(alpha))
                } else {
                    Err(format!("exponent must be finite and nonnegative, got {a}"))
                }
            }
            None => Err(format!(
                "unknown algorithm `{s}` (expected conventional, submodel, submodel-alpha0, submodel-fixed:<alpha> or cycle-tree)"
            )),
        },
    }
}

/// Inputs shared by `fit` and `analyze-alpha`.
#[derive(Args, Debug)]
struct ModelInput {
    /// Table file, JSON or CSV (by extension).
    #[arg(long)]
    data: PathBuf,
    /// Model JSON: a list of generators, each a list of variable names.
    #[arg(long)]
    model: PathBuf,
    /// Spanning family JSON: a list of model JSONs.
    #[arg(long, conflicts_with = "auto_span")]
    submodels: Option<PathBuf>,
    /// Build the spanning family greedily (the default when --submodels is absent).
    #[arg(long)]
    auto_span: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: ModelInput,
    /// conventional | submodel | submodel-alpha0 | submodel-fixed:<alpha> | cycle-tree
    #[arg(long, value_parser = parse_algorithm, default_value = "submodel")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_cycles: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json writes the full report, csv the fitted cells.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
struct SpanArgs {
    #[arg(long)]
    model: PathBuf,
    /// Family JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validation report as JSON to this path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Cycle lengths: `4..8` (inclusive), `4,6,8` or `5`.
    #[arg(long, default_value = "4..8")]
    dims: String,
    /// Levels per variable, comma separated.
    #[arg(long, default_value = "2,3,4", value_delimiter = ',')]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_cycles: usize,
    /// Count one full pass as a step instead of one update.
    #[arg(long)]
    per_pass: bool,
    /// Run replicates on one thread.
    #[arg(long)]
    serial: bool,
    /// Summary output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Per-replicate records as CSV.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Summary as a markdown table.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Index of the family member to analyse.
    #[arg(long, default_value_t = 0)]
    member: usize,
    /// Perturbation size applied to the MLE.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of grid points.
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Upper end of the grid; defaults to 1.5 times the largest exponent.
    #[arg(long)]
    alpha_max: Option<f64>,
    /// Curve output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Diagnostics JSON; stderr when absent.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    let quiet = cli.quiet;
    let outcome = match cli.command {
        Command::Fit(a) => run_fit(a, quiet),
        Command::Span(a) => run_span(a).map(|_| true),
        Command::Bench(a) => run_bench(a, quiet),
        Command::AnalyzeAlpha(a) => run_analyze(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

struct Loaded {
    table: CountTable,
    model: GeneratingClass,
    family: Option<SpanningFamily>,
}

fn load(input: &ModelInput, needs_family: bool) -> Result<Loaded> {
    let table = dio::read_table(&input.data).with_context(|| format!("reading {}", input.data.display()))?;
    let model = dio::read_model_json(open(&input.model)?, &table.schema)
        .with_context(|| format!("reading {}", input.model.display()))?;
    let family = if !needs_family {
        None
    } else if let Some(path) = &input.submodels {
        let members = dio::read_family_json(open(path)?, &table.schema)
            .with_context(|| format!("reading {}", path.display()))?;
        Some(SpanningFamily::new(&model, members)?)
    } else {
        Some(greedy_spanning(&model))
    };
    Ok(Loaded { table, model, family })
}

fn run_fit(a: FitArgs, quiet: bool) -> Result<bool> {
    let needs_family = !matches!(a.algorithm, Algorithm::Conventional | Algorithm::CycleTree);
    let Loaded { table, model, family } = load(&a.input, needs_family)?;
    let r = table.frequencies()?;
    let mut cfg = FitConfig::default().with_tolerance(a.tol);
    cfg.max_cycles = a.max_cycles;
    let report = match a.algorithm {
        Algorithm::Conventional => fit_conventional(&r, &model, &cfg)?,
        Algorithm::CycleTree => {
            if model.cycle_order().is_none() {
                bail!("--algorithm cycle-tree needs a cycle model");
            }
            fit_cycle_table(&r, &model, &cfg)?
        }
        alg => {
            let policy = match alg {
                Algorithm::SubmodelAlpha0 => AlphaPolicy::MassPreserving,
                Algorithm::SubmodelFixed(x) => AlphaPolicy::Fixed(x),
                _ => AlphaPolicy::Unit,
            };
            let family = family.expect("family loaded for submodel algorithms");
            fit_submodel_ips(&r, &model, &family, &cfg.with_alpha(policy))?
        }
    };
    write_fit(&report, &table.schema, a.out.as_deref(), a.format)?;
    if !quiet {
        let last = report.trace.last().map_or(f64::NAN, |t| t.criterion);
        eprintln!(
            "{} after {} cycles ({} steps), criterion {:.3e}",
            if report.converged { "converged" } else { "did not converge" },
            report.cycles,
            report.steps,
            last
        );
    }
    Ok(report.converged)
}

fn write_fit(report: &FitReport, schema: &Schema, out: Option<&Path>, format: Format) -> Result<()> {
    let mut w = sink(out)?;
    match format {
        Format::Json => {
            dio::write_report_json(report, &mut w)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(&mut w);
            let mut header: Vec<&str> = schema.variables().iter().map(|v| v.name.as_str()).collect();
            header.push("fitted");
            c.write_record(&header)?;
            for (flat, v) in report.fitted.values().iter().enumerate() {
                let mut rec: Vec<String> = schema.cell_of(flat).levels.iter().map(|l| l.to_string()).collect();
                rec.push(format!("{v:e}"));
                c.write_record(&rec)?;
            }
            c.flush()?;
        }
        Format::Markdown => bail!("fit output supports json or csv"),
    }
    w.flush()?;
    Ok(())
}

fn run_span(a: SpanArgs) -> Result<()> {
    let names: Vec<Vec<String>> =
        serde_json::from_reader(open(&a.model)?).with_context(|| format!("reading {}", a.model.display()))?;
    let schema = dio::schema_from_model_names(&names, 2)?;
    let model = GeneratingClass::from_names(&schema, &names)?;
    let family = greedy_spanning(&model).classes();
    let report = validate_spanning(&model, &family);
    let mut w = sink(a.out.as_deref())?;
    dio::write_family_json(&family, &schema, &mut w)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(path) = &a.report {
        let f = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        serde_json::to_writer_pretty(f, &report)?;
    }
    eprintln!("{} members; {}", family.len(), report.summary());
    if !report.pass {
        bail!("spanning family failed validation");
    }
    Ok(())
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let bad = || anyhow!("invalid --dims `{s}`");
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        s.split(',').map(|d| d.trim().parse().map_err(|_| bad())).collect()
    }
}

fn run_bench(a: BenchArgs, quiet: bool) -> Result<bool> {
    let plan = ExperimentPlan {
        dims: parse_dims(&a.dims)?,
        levels: a.levels,
        replicates: a.replicates,
        seed: a.seed,
        tolerance: a.tol,
        max_cycles: a.max_cycles,
        step_unit: if a.per_pass { StepUnit::Cycle } else { StepUnit::Update },
        parallel: !a.serial,
        ..ExperimentPlan::default()
    };
    plan.validate()?;
    let records = experiment::run_experiment(&plan)?;
    let rows = experiment::summarize(&records);
    if let Some(path) = &a.records {
        experiment::write_records_csv(&records, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &a.markdown {
        std::fs::write(path, experiment::summary_markdown(&rows))?;
    }
    let mut w = sink(a.out.as_deref())?;
    match a.format {
        Format::Csv => experiment::write_summary_csv(&rows, &mut w)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &rows)?;
            writeln!(w)?;
        }
        Format::Markdown => write!(w, "{}", experiment::summary_markdown(&rows))?,
    }
    w.flush()?;
    let converged = rows.iter().all(|r| r.all_converged);
    if !quiet && !converged {
        eprintln!("some replicates did not converge");
    }
    Ok(converged)
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let Loaded { table, model, family } = load(&a.input, true)?;
    let family = family.expect("family loaded");
    let cj = family
        .members()
        .get(a.member)
        .ok_or_else(|| anyhow!("--member {} out of range: family has {} members", a.member, family.len()))?;
    let r = table.frequencies()?;
    let reference = fit_conventional(&r, &model, &FitConfig::default().with_tolerance(1e-12))?;
    if !reference.converged {
        bail!("reference fit did not converge");
    }
    let p_star = reference.fitted;
    let p = local::perturb(&p_star, a.delta, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let diag = local::diagnose(&p_star, &p, &r, &model, &family, cj)?;
    let hi = match a.alpha_max {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => bail!("--alpha-max must be positive, got {h}"),
        None => 1.5 * diag.alpha2.max(diag.alpha1).max(diag.alpha0_exact),
    };
    let curves = figure1_curves(&p_star, &p, &r, cj, &alpha_grid(hi, a.points))?;
    let mut w = sink(a.out.as_deref())?;
    match a.format {
        Format::Csv => {
            let mut c = csv::Writer::from_writer(&mut w);
            for pt in &curves {
                c.serialize(pt)?;
            }
            c.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &curves)?;
            writeln!(w)?;
        }
        Format::Markdown => bail!("curve output supports csv or json"),
    }
    w.flush()?;
    let text = serde_json::to_string_pretty(&diag)?;
    match &a.diagnostics {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => eprintln!("{text}"),
    }
    Ok(())
}
