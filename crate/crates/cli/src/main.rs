use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fabc_core::bounds::{
    epsilon_upper_conditional, epsilon_upper_devroye, epsilon_upper_exponential,
    epsilon_upper_unconditional, ToleranceBound,
};
use fabc_core::calibration::{
    build_quantile_table, select_tolerance, select_tolerance_auto, standardized_probes,
    QuantileTable, ToleranceChoice,
};
use fabc_core::experiments::{
    distribution_matcher, observed_sample, run, ExperimentConfig, ExperimentId, ObservedSource,
    RunReport, LABEL_CANDIDATES,
};
use fabc_core::inference::{
    abc_reject, extend_abc_to_fabc, fabc, ExtendScope, FabcMode, FabcOptions, PosteriorMode,
    PosteriorStatus,
};
use fabc_core::{Error, GenerativeModel, MatchSpec, Parameter, Posterior, Streams};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_EMPTY_POSTERIOR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fabc",
    version,
    about = "Likelihood-free inference with matching-support weights"
)]
struct Cli {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files; without it the main result goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate distance quantiles at probe parameters and pick a tolerance.
    Calibrate(CalibrateArgs),
    /// Print analytic tolerance bounds across confidence levels.
    Bounds(BoundsArgs),
    /// Rejection ABC with one pseudo-sample per candidate.
    Abc(RunArgs),
    /// F-ABC keeping candidates with p_match >= alpha.
    Fabc(FabcArgs),
    /// F-ABC keeping every candidate with weight p_match.
    FabcAll(RunArgs),
    /// Add pseudo-samples to the candidates of an earlier `abc` run.
    Extend(ExtendArgs),
    /// Run a simulation study.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// TOML configuration; omitted keys take the defaults of its `id`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.sd=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Observed sample as CSV, one row per observation. Without it the sample
    /// is drawn as configured.
    #[arg(long)]
    observed: Option<PathBuf>,
    /// True (or base) parameter, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
    /// Observed sample size.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Matching tolerance on the sample distance.
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    /// Pseudo-samples per candidate.
    #[arg(long)]
    m: Option<usize>,
    /// Candidates drawn from the prior.
    #[arg(long)]
    n_star: Option<usize>,
    /// Projection directions for multivariate samples.
    #[arg(long)]
    directions: Option<usize>,
}

#[derive(Args)]
struct FabcArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Minimum matching probability for a candidate to be kept.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct ExtendArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Atom CSV written by `abc` with the same seed and settings.
    #[arg(long)]
    abc_atoms: PathBuf,
    /// Extend the rejected candidates as well.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Probe parameters (1-D), comma separated. Defaults to steps of half a
    /// standard deviation from theta.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    probes: Option<Vec<f64>>,
    /// Pseudo-samples per probe.
    #[arg(long, default_value_t = 500)]
    m: usize,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Projection directions for multivariate samples.
    #[arg(long)]
    directions: Option<usize>,
    /// Level to read the tolerance at.
    #[arg(long)]
    select_alpha: Option<f64>,
    /// Probe to read the tolerance at (1-D).
    #[arg(long, allow_negative_numbers = true)]
    select_probe: Option<f64>,
    /// Use the farthest probe within this parameter distance of theta.
    #[arg(long, conflicts_with = "select_probe")]
    auto: Option<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Observed sample size.
    #[arg(long)]
    n: usize,
    /// Dimension used by the multivariate bound.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Distance between the true and model distributions, or between empirical CDFs.
    #[arg(long, default_value_t = 0.0)]
    discrepancy: f64,
    /// Confidence levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.8,0.9,0.95,0.99")]
    alpha: Vec<f64>,
    /// Constants of the exponential form `c1 * exp(-n * c2 * eps^2)`.
    #[arg(long, requires = "c2")]
    c1: Option<f64>,
    #[arg(long, requires = "c1")]
    c2: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_parser = parse_id)]
    id: ExperimentId,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Published run counts for the MSE race.
    #[arg(long)]
    paper_scale: bool,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

fn parse_id(s: &str) -> std::result::Result<ExperimentId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure that maps to a specific exit status.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building the thread pool")
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(Exit(code)) = err.downcast_ref::<Exit>() {
                return ExitCode::from(*code);
            }
            let broken_pipe = err
                .chain()
                .filter_map(|cause| cause.downcast_ref::<std::io::Error>())
                .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe);
            if broken_pipe {
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {err:#}");
            let invalid = err.downcast_ref::<Error>().is_some_and(|e| {
                matches!(
                    e,
                    Error::Config(_) | Error::Domain(_) | Error::ParameterShape { .. }
                )
            });
            ExitCode::from(if invalid { EXIT_INVALID } else { EXIT_FAILURE })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(args) => calibrate(cli, args),
        Command::Bounds(args) => bounds(cli, args),
        Command::Abc(args) => {
            let config = run_config(cli, args)?;
            let (x, spec, streams) = inputs(&config)?;
            let post = abc_reject(
                &config.model,
                &config.prior,
                &x,
                &spec,
                config.n_star,
                &streams,
            )?;
            emit_posterior(cli, &config, &post)
        }
        Command::Fabc(args) => {
            let mut config = run_config(cli, &args.run)?;
            if let Some(alpha) = args.alpha {
                config.alpha = alpha;
            }
            config.mode = FabcMode::Filtered;
            config.validate()?;
            fabc_command(cli, &config)
        }
        Command::FabcAll(args) => {
            let mut config = run_config(cli, args)?;
            config.mode = FabcMode::ForAll;
            fabc_command(cli, &config)
        }
        Command::Extend(args) => extend(cli, args),
        Command::Experiment(args) => experiment(cli, args),
    }
}

fn base_config(
    cli: &Cli,
    id: ExperimentId,
    path: Option<&Path>,
    sets: &[String],
) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => ExperimentConfig::defaults(id),
    };
    config.seed = cli.seed;
    for assignment in sets {
        config.assign(assignment)?;
    }
    Ok(config)
}

fn apply_model_args(config: &mut ExperimentConfig, args: &ModelArgs) {
    if let Some(path) = &args.observed {
        config.observed = ObservedSource::File { path: path.clone() };
    }
    if let Some(theta) = &args.theta {
        config.theta = theta.clone();
    }
    if let Some(n) = args.n {
        config.n = n;
    }
}

fn run_config(cli: &Cli, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = base_config(
        cli,
        ExperimentId::Custom,
        args.model.config.as_deref(),
        &args.model.set,
    )?;
    apply_model_args(&mut config, &args.model);
    if let Some(epsilon) = args.epsilon {
        config.epsilon = epsilon;
    }
    if let Some(m) = args.m {
        config.m = m;
    }
    if let Some(n_star) = args.n_star {
        config.n_star = n_star;
    }
    if let Some(k) = args.directions {
        config.directions = k;
    }
    config.validate()?;
    Ok(config)
}

/// Observed sample, match specification and candidate streams of a run.
fn inputs(config: &ExperimentConfig) -> Result<(fabc_core::Sample, MatchSpec, Streams)> {
    let master = Streams::new(config.seed);
    let x = observed_sample(config, &master)?;
    let spec = MatchSpec::new(distribution_matcher(config, &master)?, config.epsilon)?;
    Ok((x, spec, master.derive(LABEL_CANDIDATES)))
}

fn fabc_command(cli: &Cli, config: &ExperimentConfig) -> Result<()> {
    let (x, spec, streams) = inputs(config)?;
    let options = FabcOptions {
        m: config.m,
        n_star: config.n_star,
        alpha: config.alpha,
        mode: config.mode,
    };
    let post = fabc(&config.model, &config.prior, &x, &spec, &options, &streams)?;
    emit_posterior(cli, config, &post)
}

fn extend(cli: &Cli, args: &ExtendArgs) -> Result<()> {
    let config = run_config(cli, &args.run)?;
    let (x, spec, streams) = inputs(&config)?;
    let file = fs::File::open(&args.abc_atoms)
        .with_context(|| format!("reading {}", args.abc_atoms.display()))?;
    let atoms = Posterior::read_atoms_csv(file)?;
    if atoms.iter().any(|a| a.m_used != 1) {
        bail!(
            "{} is not the output of a rejection run",
            args.abc_atoms.display()
        );
    }
    check_abc_metadata(&args.abc_atoms, &config, &spec)?;
    let abc = Posterior {
        atoms,
        mode: PosteriorMode::AbcFlat,
        epsilon: spec.epsilon,
        alpha: 1.0,
        m: 1,
        matcher: spec.matcher.clone(),
    };
    let scope = if args.all {
        ExtendScope::All
    } else {
        ExtendScope::Selected
    };
    let post = extend_abc_to_fabc(&config.model, &abc, &x, &spec, config.m, scope, &streams)?;
    emit_posterior(cli, &config, &post)
}

/// Compares the run settings with the `posterior.json` written next to the
/// atom file, when there is one.
fn check_abc_metadata(atoms: &Path, config: &ExperimentConfig, spec: &MatchSpec) -> Result<()> {
    let Some(path) = atoms.parent().map(|dir| dir.join("posterior.json")) else {
        return Ok(());
    };
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(());
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let meta = &value["metadata"];
    let expected = [
        ("mode", serde_json::json!(PosteriorMode::AbcFlat)),
        ("seed", serde_json::json!(config.seed)),
        ("epsilon", serde_json::json!(spec.epsilon)),
        ("n_star", serde_json::json!(config.n_star)),
        ("matcher", serde_json::json!(spec.matcher.to_string())),
    ];
    for (key, want) in expected {
        if meta[key] != want {
            return Err(Error::Config(format!(
                "{key} of the earlier run ({}) differs from this run ({want})",
                meta[key]
            ))
            .into());
        }
    }
    Ok(())
}

fn emit_posterior(cli: &Cli, config: &ExperimentConfig, post: &Posterior) -> Result<()> {
    let json = || {
        serde_json::to_string_pretty(&post.to_json(config.seed, config.n_star)).map(|s| s + "\n")
    };
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            post.write_atoms_csv(fs::File::create(dir.join("atoms.csv"))?)?;
            fs::write(dir.join("posterior.json"), json()?)?;
        }
        None => match cli.format {
            Format::Csv => post.write_atoms_csv(io::stdout().lock())?,
            Format::Json => io::stdout().lock().write_all(json()?.as_bytes())?,
        },
    }
    if post.status() == PosteriorStatus::EmptySelection {
        eprintln!("warning: no candidate was selected");
        return Err(Exit(EXIT_EMPTY_POSTERIOR).into());
    }
    Ok(())
}

fn calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    let mut config = base_config(
        cli,
        ExperimentId::Table1,
        args.model.config.as_deref(),
        &args.model.set,
    )?;
    apply_model_args(&mut config, &args.model);
    config.m_cal = args.m;
    if let Some(levels) = &args.quantiles {
        config.levels = levels.clone();
    }
    if let Some(k) = args.directions {
        config.directions = k;
    }
    if args.model.observed.is_none()
        && config.observed == ObservedSource::Quantiles
        && config.model.dim() > 1
    {
        config.observed = ObservedSource::Simulated;
    }
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let probes = match &args.probes {
        Some(values) => values
            .iter()
            .map(|&v| Parameter::scalar(v))
            .collect::<fabc_core::Result<Vec<_>>>()?,
        None => standardized_probes(
            &theta,
            config.model.marginal_sd()[0],
            config.probe_step,
            config.probe_count,
        )?,
    };
    let x = observed_sample(&config, &master)?;
    let matcher = distribution_matcher(&config, &master)?;
    let table = build_quantile_table(
        &config.model,
        &x,
        &probes,
        config.m_cal,
        &matcher,
        &config.levels,
        &master.derive(LABEL_CANDIDATES),
    )?;
    let choice = match (args.select_alpha, args.select_probe, args.auto) {
        (Some(alpha), Some(probe), _) => {
            Some(select_tolerance(&table, alpha, &Parameter::scalar(probe)?)?)
        }
        (Some(alpha), None, Some(dist)) => {
            Some(select_tolerance_auto(&table, alpha, &theta, dist)?)
        }
        (Some(_), None, None) => bail!("--select-alpha needs --select-probe or --auto"),
        (None, ..) => None,
    };
    emit_calibration(cli, &table, choice.as_ref())
}

fn emit_calibration(
    cli: &Cli,
    table: &QuantileTable,
    choice: Option<&ToleranceChoice>,
) -> Result<()> {
    let mut stdout = io::stdout().lock();
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        table.write_csv(fs::File::create(dir.join("table.csv"))?)?;
        if let Some(choice) = choice {
            fs::write(
                dir.join("choice.json"),
                serde_json::to_string_pretty(choice)? + "\n",
            )?;
        }
        stdout.write_all(table.render().as_bytes())?;
        return Ok(());
    }
    match cli.format {
        Format::Csv => table.write_csv(&mut stdout)?,
        Format::Json => {
            let doc = serde_json::json!({ "table": table, "choice": choice });
            writeln!(stdout, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

fn bounds(cli: &Cli, args: &BoundsArgs) -> Result<()> {
    let mut rows = Vec::new();
    for &alpha in &args.alpha {
        let mut row: Vec<(&str, ToleranceBound)> = vec![
            (
                "unconditional",
                epsilon_upper_unconditional(args.n, alpha, args.discrepancy)?,
            ),
            (
                "conditional",
                epsilon_upper_conditional(args.n, alpha, args.discrepancy)?,
            ),
            (
                "devroye",
                epsilon_upper_devroye(args.n, alpha, args.d, args.discrepancy)?,
            ),
        ];
        if let (Some(c1), Some(c2)) = (args.c1, args.c2) {
            row.push((
                "exponential",
                epsilon_upper_exponential(args.n, alpha, args.discrepancy, c1, c2)?,
            ));
        }
        rows.push((alpha, row));
    }
    let mut out: Box<dyn Write> = match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let name = if cli.format == Format::Csv {
                "bounds.csv"
            } else {
                "bounds.json"
            };
            Box::new(fs::File::create(dir.join(name))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    match cli.format {
        Format::Csv => {
            writeln!(
                out,
                "alpha,regime,epsilon_b,reported,discrepancy_term,confidence_term,valid"
            )?;
            for (alpha, row) in &rows {
                for (name, b) in row {
                    writeln!(
                        out,
                        "{alpha},{name},{},{},{},{},{}",
                        b.epsilon_b,
                        b.reported(),
                        b.discrepancy_term,
                        b.confidence_term,
                        b.valid
                    )?;
                }
            }
        }
        Format::Json => {
            let doc: Vec<_> = rows
                .iter()
                .map(|(alpha, row)| {
                    let entries: serde_json::Map<String, serde_json::Value> = row
                        .iter()
                        .map(|(name, b)| {
                            let mut v = serde_json::to_value(b).expect("bounds serialize");
                            v["reported"] = b.reported().into();
                            (name.to_string(), v)
                        })
                        .collect();
                    serde_json::json!({ "alpha": alpha, "bounds": entries })
                })
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

fn experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let mut config = base_config(cli, args.id, args.config.as_deref(), &args.set)?;
    if config.id != args.id {
        bail!("config file describes {}, not {}", config.id, args.id);
    }
    if args.paper_scale {
        config = config.paper_scale();
    }
    let started = Instant::now();
    let mut report = run(&config)?;
    if args.timing {
        report.elapsed_seconds = Some(started.elapsed().as_secs_f64());
    }
    match &cli.out {
        Some(dir) => {
            for path in report.write_artifacts(dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            let mut stdout = io::stdout().lock();
            match cli.format {
                Format::Json => stdout.write_all((report.to_json()? + "\n").as_bytes())?,
                Format::Csv => write_report_csv(&report, &mut stdout)?,
            }
        }
    }
    Ok(())
}

/// The most informative table of a report as CSV.
fn write_report_csv(report: &RunReport, out: &mut dyn Write) -> Result<()> {
    if let Some(table) = &report.table {
        table.write_csv(out)?;
    } else if let Some(race) = &report.race {
        writeln!(out, "run,t,comparisons,non_terminations")?;
        for (r, (t, nt)) in race.t.iter().zip(&race.non_terminations).enumerate() {
            writeln!(out, "{r},{t},{},{nt}", race.comparisons)?;
        }
    } else {
        let k = report.config.model.param_dim();
        let cols = |p: &str| {
            (1..=k)
                .map(|j| format!("{p}_{j}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            out,
            "arm,epsilon,runs,selected,{},{},mse",
            cols("mean"),
            cols("variance")
        )?;
        for a in &report.aggregate {
            let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                a.arm,
                a.epsilon,
                a.runs,
                a.selected,
                join(&a.mean),
                join(&a.variance),
                a.mse
            )?;
        }
    }
    Ok(())
}
