//! File formats and subcommands behind the `robsig` binary.

pub mod presets;
pub mod scenario_file;
pub mod strategy_file;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use robsig::design::{design_with, DesignOptions};
use robsig::evaluate::reference::{is_tight, reference_table, relative_error, LOOSE_TOL, TIGHT_TOL};
use robsig::evaluate::{benchmark_design_sets, cost_table, simulate, SimulationReport};
use robsig::lqr::design_inputs;
use robsig::sdp::ToleranceSettings;
use robsig::synthesis::synthesize_for;
use robsig::sysmodel::{MeasurementMode, Scenario};

use scenario_file::ScenarioFile;
use strategy_file::StrategyFile;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] robsig::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Core(robsig::Error::InvalidInput(_)) => EXIT_INPUT,
            CliError::Core(_) => EXIT_SOLVER,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "robsig", version, about = "Robust sensor signaling design for LQG control")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalFlags {
    /// Relative feasibility tolerance of the SDP solver.
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub tol_feas: f64,
    /// Relative duality-gap tolerance of the SDP solver.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol_gap: f64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Add full-precision columns to CSV output.
    #[arg(long, global = true)]
    pub full_precision: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(conflicts_with = "preset", required_unless_present = "preset")]
    pub scenario: Option<PathBuf>,
    /// Bundled scenario instead of a file.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the robust design and optionally write the strategy.
    Design {
        #[command(flatten)]
        source: ScenarioSource,
        /// `all` or a comma-separated list of type names; overrides the file.
        #[arg(long)]
        design_set: Option<String>,
        /// Where to write the strategy JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a benchmark cost table and compare it with the reference.
    Reproduce {
        table: Table,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo cost of a strategy against one controller type.
    Simulate {
        #[command(flatten)]
        source: ScenarioSource,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long = "type")]
        actual_type: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a bundled scenario as a scenario file.
    Preset { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    /// Perfect measurements.
    Table1,
    /// Noisy measurements.
    Table2,
}

impl Table {
    pub fn mode(self) -> MeasurementMode {
        match self {
            Table::Table1 => MeasurementMode::Perfect,
            Table::Table2 => MeasurementMode::Imperfect,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<output>"),
        source: e,
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = read(path)?;
    ScenarioFile::parse(&text)
        .and_then(|f| f.to_scenario())
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn resolve(source: &ScenarioSource) -> Result<Scenario, CliError> {
    match (&source.scenario, &source.preset) {
        (Some(p), _) => load_scenario(p),
        (None, Some(name)) => presets::preset(name),
        (None, None) => Err(CliError::Parse("no scenario given".into())),
    }
}

fn options(flags: &GlobalFlags) -> Result<DesignOptions, CliError> {
    for (name, v) in [("--tol-feas", flags.tol_feas), ("--tol-gap", flags.tol_gap)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::Parse(format!("{name} must be positive")));
        }
    }
    Ok(DesignOptions {
        tol: ToleranceSettings {
            feas: flags.tol_feas,
            gap: flags.tol_gap,
            ..ToleranceSettings::default()
        },
        parallel: flags.threads != 1,
    })
}

/// Runs a parsed command line, writing results to `out` and diagnostics to
/// `err`, and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    if cli.global.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global();
    }
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    match &cli.command {
        Command::Design { source, design_set, out: path } => {
            cmd_design(source, design_set.as_deref(), path.as_deref(), &cli.global, out)
        }
        Command::Reproduce { table, out: path } => cmd_reproduce(*table, path.as_deref(), &cli.global, out, err),
        Command::Simulate {
            source,
            strategy,
            actual_type,
            trials,
            seed,
        } => cmd_simulate(source, strategy, actual_type, *trials, *seed, out),
        Command::Preset { name } => {
            let sc = presets::preset(name)?;
            writeln!(out, "{}", ScenarioFile::from_scenario(&sc).to_json()).map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}

fn parse_design_set(spec: &str, scenario: &Scenario) -> Vec<String> {
    if spec.trim() == "all" {
        scenario.types.iter().map(|t| t.label.clone()).collect()
    } else {
        spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    }
}

pub fn cmd_design(
    source: &ScenarioSource,
    design_set: Option<&str>,
    out_path: Option<&Path>,
    flags: &GlobalFlags,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut scenario = resolve(source)?;
    if let Some(spec) = design_set {
        scenario = scenario.with_design_set(parse_design_set(spec, &scenario))?;
    }
    let opts = options(flags)?;
    let result = design_with(&scenario, &opts)?;
    writeln!(out, "mu = {:.6}", result.mu).map_err(io)?;
    writeln!(out, "winner = {}", result.winner).map_err(io)?;
    for p in &result.per_type {
        let value = p.value.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "pivot {}: {:?} {} ({} iterations)", p.label, p.status, value, p.iterations).map_err(io)?;
    }
    let mass = 1.0 / result.worst_support.len() as f64;
    let dist: Vec<String> = scenario
        .design_set
        .iter()
        .map(|l| {
            let p = if result.worst_support.contains(l) { mass } else { 0.0 };
            format!("{l} {p:.4}")
        })
        .collect();
    writeln!(out, "worst-case prior: {}", dist.join(", ")).map_err(io)?;
    let (costs, _) = design_inputs(&scenario)?;
    for (t, c) in scenario.types.iter().zip(&costs) {
        writeln!(out, "cost[{}] = {:.6}", t.label, c.value(&result.s_star)).map_err(io)?;
    }
    if let Some(path) = out_path {
        let strategy = synthesize_for(&scenario, &result.s_star)?;
        write_file(path, &StrategyFile::new(&strategy, Some(&result)).to_json())?;
        writeln!(out, "strategy written to {}", path.display()).map_err(io)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_reproduce(
    table: Table,
    out_path: Option<&Path>,
    flags: &GlobalFlags,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let mode = table.mode();
    let scenario = presets::preset(match mode {
        MeasurementMode::Perfect => "tracking-perfect",
        MeasurementMode::Imperfect => "tracking-imperfect",
    })?;
    let computed = cost_table(&scenario, &benchmark_design_sets(), &options(flags)?)?;
    let csv = computed.to_csv(flags.full_precision);
    match out_path {
        Some(p) => write_file(p, &csv)?,
        None => out.write_all(csv.as_bytes()).map_err(io)?,
    }

    let reference = reference_table(mode);
    let (mut tight_ok, mut tight_miss, mut loose_ok, mut notes) = (0, 0, 0, 0);
    writeln!(err, "row,column,computed,reference,rel_err,class,status").map_err(io)?;
    for (i, (row, want)) in computed.rows.iter().zip(reference.iter()).enumerate() {
        let name = row.design_set.join("+");
        let cells = row.cells.iter().zip(&want.cells).enumerate().map(|(j, (g, w))| {
            (computed.columns[j].as_str(), *g, *w, is_tight(i, j))
        });
        for (col, got, want, tight) in cells.chain(std::iter::once(("Max", row.max, want.max, false))) {
            let rel = relative_error(got, want);
            let (class, status) = if tight {
                if rel <= TIGHT_TOL {
                    tight_ok += 1;
                    ("tight", "ok")
                } else {
                    tight_miss += 1;
                    ("tight", "MISS")
                }
            } else if rel <= LOOSE_TOL {
                loose_ok += 1;
                ("loose", "ok")
            } else {
                notes += 1;
                ("loose", "note")
            };
            writeln!(err, "{name},{col},{got:.2},{want:.2},{rel:.4},{class},{status}").map_err(io)?;
        }
    }
    writeln!(
        err,
        "summary: {tight_ok} tight ok, {tight_miss} tight miss, {loose_ok} loose ok, {notes} loose notes"
    )
    .map_err(io)?;
    Ok(if tight_miss > 0 { EXIT_MISMATCH } else { EXIT_OK })
}

#[derive(Serialize)]
struct SimulateOutput {
    #[serde(flatten)]
    report: SimulationReport,
    /// Model-predicted cost, when the strategy file records its design.
    analytic_cost: Option<f64>,
}

pub fn cmd_simulate(
    source: &ScenarioSource,
    strategy_path: &Path,
    actual_type: &str,
    trials: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let scenario = resolve(source)?;
    let file = StrategyFile::parse(&read(strategy_path)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", strategy_path.display())))?;
    let strategy = file.to_strategy()?;
    let report = simulate(&scenario, &strategy, actual_type, trials, seed)?;
    let analytic_cost = match &file.design {
        Some(d) => {
            let s = d
                .s_star
                .iter()
                .enumerate()
                .map(|(k, b)| scenario_file::to_matrix(b, &format!("design.s_star[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let (costs, _) = design_inputs(&scenario)?;
            let w = scenario.types.iter().position(|t| t.label == actual_type).expect("type checked by simulate");
            Some(robsig::evaluate::analytic_cost(&s, &costs[w])?)
        }
        None => None,
    };
    let text = serde_json::to_string_pretty(&SimulateOutput { report, analytic_cost }).expect("report serializes");
    writeln!(out, "{text}").map_err(io)?;
    Ok(EXIT_OK)
}
