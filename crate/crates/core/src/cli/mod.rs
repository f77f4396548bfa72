//! Command-line front end. [`run`] parses arguments, dispatches a subcommand, and returns
//! the process exit code: 0 on success, 1 on runtime failure, 2 on usage or config errors.

pub mod config;
mod experiment;
mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attacks::{evaluate_attack, fit_threshold, AttackKind, ThresholdMode, ThresholdModel};
use crate::data::{
    gen_gaussian_mixture_with, load_cifar_binary, load_csv, stratified_four_way, write_csv,
    CifarVariant, SyntheticSpec,
};
use crate::error::Error;
use crate::eval::outliers_from_decisions;
use crate::optim::read_model;
use crate::privacy::{epsilon_report, error_bound, AccountantConfig, Conversion};

pub use experiment::{run_experiment_config, ExperimentOutputs};

#[derive(Debug, Parser)]
#[command(
    name = "miaeval",
    version,
    about = "Membership-inference evaluation of private and non-private training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the (ε, δ) cost of a DP-SGD run.
    Accountant(AccountantArgs),
    /// Print the lower bound on attack error implied by (ε, δ).
    Bound(BoundArgs),
    /// Generate a Gaussian-mixture dataset as CSV.
    Synth(SynthArgs),
    /// Split default train/test sets into member, non-member and shadow sets.
    Split(SplitArgs),
    /// Run a config-driven experiment.
    Experiment(ExperimentArgs),
    /// Run the threshold attack against one checkpoint.
    Attack(AttackArgs),
    /// Report samples whose membership was inferred correctly in every run.
    Outliers(OutliersArgs),
    /// Draw privacy/utility frontiers as SVG.
    FrontierPlot(FrontierPlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConversionArg {
    Classic,
    Improved,
}

#[derive(Debug, Args)]
struct AccountantArgs {
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    epochs: usize,
    /// Training set size.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Sampling rate; defaults to batch / n.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum, default_value_t = ConversionArg::Improved)]
    conversion: ConversionArg,
    /// Also print the optimal Rényi order.
    #[arg(long)]
    show_order: bool,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    /// Seed for the class means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the sample draws; defaults to `--seed`.
    #[arg(long)]
    draw_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataFormat {
    Csv,
    Cifar10,
    Cifar100,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, num_args = 1.., required = true)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    test: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
    format: DataFormat,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    PerClass,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    members: PathBuf,
    #[arg(long)]
    nonmembers: PathBuf,
    /// Set whose mean loss fixes the threshold; defaults to the members.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Global)]
    mode: ModeArg,
    /// Use this global threshold instead of fitting one.
    #[arg(long, conflicts_with_all = ["fit", "mode"])]
    tau: Option<f64>,
}

#[derive(Debug, Args)]
struct OutliersArgs {
    /// A `decisions.csv` written by `experiment`.
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long, default_value = "threshold")]
    attack: String,
    /// Restrict to one epoch; all epochs by default.
    #[arg(long)]
    epoch: Option<usize>,
    /// Also list the outlier positions.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct FrontierPlotArgs {
    /// Frontier CSVs, one series each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Format { .. } => CliError::Usage(e.to_string()),
            Error::InvalidInput(_) | Error::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Accountant(a) => cmd_accountant(&a, out),
        Command::Bound(a) => cmd_bound(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Split(a) => cmd_split(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out),
        Command::Attack(a) => cmd_attack(&a, out),
        Command::Outliers(a) => cmd_outliers(&a, out),
        Command::FrontierPlot(a) => cmd_frontier_plot(&a, out),
    }
}

/// Formats `x` with `digits` significant digits, dropping trailing zeros.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    let digits = digits.max(1) as i32;
    let decimals = (digits - 1 - exponent).max(0) as usize;
    let text = if exponent >= digits {
        let scale = 10f64.powi(exponent - digits + 1);
        format!("{:.0}", (x / scale).round() * scale)
    } else {
        format!("{x:.decimals$}")
    };
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    }
}

fn cmd_accountant(a: &AccountantArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.sigma >= 0.0) {
        return usage(format!("--sigma must be >= 0, got {}", a.sigma));
    }
    if a.n == 0 || a.batch == 0 || a.epochs == 0 {
        return usage("--n, --batch and --epochs must be positive");
    }
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return usage(format!("--delta must be in (0, 1), got {}", a.delta));
    }
    let mut config = AccountantConfig::for_training(a.n, a.batch, a.epochs, a.sigma, a.delta);
    if let Some(q) = a.q {
        if !(q > 0.0 && q <= 1.0) {
            return usage(format!("--q must be in (0, 1], got {q}"));
        }
        config.sampling_rate = q;
    }
    config.conversion = match a.conversion {
        ConversionArg::Classic => Conversion::Classic,
        ConversionArg::Improved => Conversion::Improved,
    };
    if a.sigma == 0.0 {
        writeln!(out, "inf")?;
        return Ok(());
    }
    let report = epsilon_report(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.show_order {
        let order = report
            .order
            .map_or_else(|| "none".to_string(), |a| a.to_string());
        writeln!(
            out,
            "{} (order {order})",
            format_significant(report.epsilon, 6)
        )?;
    } else {
        writeln!(out, "{}", format_significant(report.epsilon, 6))?;
    }
    Ok(())
}

fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(a.epsilon >= 0.0) {
        return usage(format!("--epsilon must be >= 0, got {}", a.epsilon));
    }
    if !(0.0..=1.0).contains(&a.delta) {
        return usage(format!("--delta must be in [0, 1], got {}", a.delta));
    }
    writeln!(out, "{:.4}", error_bound(a.epsilon, a.delta))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let spec = SyntheticSpec {
        num_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        separation: a.separation,
        noise_std: a.noise_std,
        seed: a.seed,
    };
    let ds = gen_gaussian_mixture_with(&spec, a.draw_seed.unwrap_or(a.seed))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write_csv(&ds, &a.out)?;
    writeln!(out, "wrote {} samples to {}", ds.len(), a.out.display())?;
    Ok(())
}

fn load_set(paths: &[PathBuf], format: DataFormat) -> CliResult<crate::nn::Dataset> {
    let variant = match format {
        DataFormat::Csv => {
            if paths.len() != 1 {
                return usage("csv input takes exactly one file per set");
            }
            return Ok(load_csv(&paths[0])?);
        }
        DataFormat::Cifar10 => CifarVariant::Ten,
        DataFormat::Cifar100 => CifarVariant::Hundred,
    };
    let parts = paths
        .iter()
        .map(|p| load_cifar_binary(p, variant))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(config::concat(parts)?)
}

fn cmd_split(a: &SplitArgs, out: &mut dyn Write) -> CliResult<()> {
    let train = load_set(&a.train, a.format)?;
    let test = load_set(&a.test, a.format)?;
    let k = train.num_classes().max(test.num_classes());
    let train = config::with_classes(train, k)?;
    let test = config::with_classes(test, k)?;
    let split =
        stratified_four_way(&train, &test, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, set) in [
        ("target_train", &split.target_train),
        ("target_test", &split.target_test),
        ("shadow_train", &split.shadow_train),
        ("shadow_test", &split.shadow_test),
    ] {
        let path = a.out_dir.join(format!("{name}.csv"));
        write_csv(set, &path)?;
        writeln!(out, "{name}: {} samples", set.len())?;
    }
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> CliResult<()> {
    let outputs = run_experiment_config(&a.config, a.out.as_deref())?;
    writeln!(
        out,
        "wrote {} runs x {} epochs to {}",
        outputs.runs,
        outputs.epochs,
        outputs.dir.display()
    )?;
    Ok(())
}

fn load_for_model(path: &Path, k: usize) -> CliResult<crate::nn::Dataset> {
    let ds = load_csv(path)?;
    if ds.num_classes() > k {
        return usage(format!(
            "{}: label {} exceeds the checkpoint's {k} classes",
            path.display(),
            ds.num_classes() - 1
        ));
    }
    Ok(config::with_classes(ds, k)?)
}

fn cmd_attack(a: &AttackArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = read_model(&a.checkpoint)?;
    let k = model.num_classes();
    let members = load_for_model(&a.members, k)?;
    let nonmembers = load_for_model(&a.nonmembers, k)?;
    for (path, set) in [(&a.members, &members), (&a.nonmembers, &nonmembers)] {
        if set.dim() != model.input_dim() {
            return usage(format!(
                "{}: {} features, checkpoint expects {}",
                path.display(),
                set.dim(),
                model.input_dim()
            ));
        }
    }
    let threshold = match a.tau {
        Some(tau) => ThresholdModel::global(tau),
        None => {
            let fit_set = match &a.fit {
                Some(p) => load_for_model(p, k)?,
                None => members.clone(),
            };
            let mode = match a.mode {
                ModeArg::Global => ThresholdMode::Global,
                ModeArg::PerClass => ThresholdMode::PerClass,
            };
            fit_threshold(&model, &fit_set, mode)?
        }
    };
    let ev = evaluate_attack(|s| threshold.decide(&model, s), &members, &nonmembers)?;
    writeln!(out, "fpr,fnr,p_err")?;
    writeln!(out, "{},{},{}", ev.fpr, ev.fnr, ev.p_err)?;
    Ok(())
}

/// Decisions of one (epoch, attack, population) cell, indexed by run.
type DecisionTable = BTreeMap<(usize, String, String), BTreeMap<usize, Vec<bool>>>;

fn read_decisions(path: &Path) -> CliResult<DecisionTable> {
    let format_err = |row: usize, msg: String| {
        CliError::from(Error::Format {
            path: path.to_path_buf(),
            message: format!("row {row}: {msg}"),
        })
    };
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != experiment::DECISIONS_HEADER {
        return Err(format_err(
            1,
            format!("expected header {}", experiment::DECISIONS_HEADER.join(",")),
        ));
    }
    let mut table = DecisionTable::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| format_err(row, e.to_string()))?;
        let num = |col: usize| -> CliResult<usize> {
            record[col].parse().map_err(|_| {
                format_err(
                    row,
                    format!("'{}' is not a non-negative integer", &record[col]),
                )
            })
        };
        let (run, epoch) = (num(0)?, num(1)?);
        let bits = record[4]
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(format_err(row, format!("decision '{other}' is not 0 or 1"))),
            })
            .collect::<CliResult<Vec<bool>>>()?;
        table
            .entry((epoch, record[2].to_string(), record[3].to_string()))
            .or_default()
            .insert(run, bits);
    }
    Ok(table)
}

fn cmd_outliers(a: &OutliersArgs, out: &mut dyn Write) -> CliResult<()> {
    let attack: AttackKind = a.attack.parse()?;
    let attack = attack.to_string();
    let table = read_decisions(&a.decisions)?;
    let mut epochs: Vec<usize> = table
        .keys()
        .filter(|(_, att, _)| *att == attack)
        .map(|(e, _, _)| *e)
        .collect();
    epochs.dedup();
    if let Some(e) = a.epoch {
        if !epochs.contains(&e) {
            return usage(format!("no {attack} decisions recorded at epoch {e}"));
        }
        epochs = vec![e];
    }
    if epochs.is_empty() {
        return usage(format!(
            "no {attack} decisions in {}",
            a.decisions.display()
        ));
    }
    writeln!(out, "epoch,population,fraction")?;
    for epoch in epochs {
        let runs = |population: &str| -> CliResult<Vec<&[bool]>> {
            table
                .get(&(epoch, attack.clone(), population.to_string()))
                .map(|by_run| by_run.values().map(Vec::as_slice).collect())
                .ok_or_else(|| {
                    CliError::Usage(format!("epoch {epoch} lacks {population} decisions"))
                })
        };
        let report = outliers_from_decisions(epoch, &runs("member")?, &runs("nonmember")?)?;
        writeln!(out, "{epoch},member,{}", report.member_outlier_fraction)?;
        writeln!(
            out,
            "{epoch},nonmember,{}",
            report.nonmember_outlier_fraction
        )?;
        writeln!(out, "{epoch},average,{}", report.average_fraction)?;
        if a.list {
            let join = |ids: &[usize]| {
                ids.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(
                out,
                "# epoch {epoch} member outliers: {}",
                join(&report.member_outliers)
            )?;
            writeln!(
                out,
                "# epoch {epoch} nonmember outliers: {}",
                join(&report.nonmember_outliers)
            )?;
        }
    }
    Ok(())
}

fn cmd_frontier_plot(a: &FrontierPlotArgs, out: &mut dyn Write) -> CliResult<()> {
    let series = a
        .inputs
        .iter()
        .map(|p| plot::read_frontier(p).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    let svg = plot::render_svg(&series, a.title.as_deref());
    std::fs::write(&a.out, svg)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}
