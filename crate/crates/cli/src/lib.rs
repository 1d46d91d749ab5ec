//! The `flowrca` command line: simulate windows, localise a change, run
//! repeated experiments and re-render stored reports.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use flowrca::report::{report_markdown, report_svg, summary_markdown, summary_svg};
use flowrca::simulator::SimulationManifest;
use flowrca::{
    attribute_change, load_window, parse_graph, run_experiment, simulate, AttributionConfig, AttributionReport,
    ExperimentSummary, FaultSpec, Pipeline, PlayerPolicy, ShapleyMode, WindowLabel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "flowrca", version, about = "Root-cause localisation of distribution shifts in dataflow graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attribute the change in a target stream between two windows.
    Localize {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `exact` or `perm:M` for M sampled permutations.
        #[arg(long, default_value = "exact", value_parser = parse_shapley)]
        shapley: ShapleyMode,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Players::All)]
        players: Players,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
    },
    /// Simulate one window of a reference pipeline.
    Simulate {
        #[arg(long, value_parser = parse_pipeline)]
        pipeline: Pipeline,
        /// `kind:location[:params]`, e.g. `bug:classify_claim_complexity_op`.
        #[arg(long, value_parser = parse_fault)]
        fault: Option<FaultSpec>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Dataset CSV; the graph and a manifest are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat simulate-and-localise runs and test the winner with Welch's t-test.
    Experiment {
        #[arg(long, value_parser = parse_pipeline)]
        pipeline: Pipeline,
        /// Omit for a fault-free (null) experiment.
        #[arg(long, value_parser = parse_fault)]
        fault: Option<FaultSpec>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Re-render a stored report or experiment summary to standard output.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: RenderFormat,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Players {
    All,
    Changed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Md,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RenderFormat {
    Md,
    Svg,
}

fn parse_shapley(s: &str) -> Result<ShapleyMode, String> {
    if s == "exact" {
        return Ok(ShapleyMode::Exact);
    }
    match s.strip_prefix("perm:").map(str::parse::<usize>) {
        Some(Ok(samples)) if samples > 0 => Ok(ShapleyMode::Permutation { samples }),
        _ => Err(format!("expected `exact` or `perm:M` with M > 0, got `{s}`")),
    }
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    s.parse().map_err(|e: flowrca::Error| e.to_string())
}

fn parse_fault(s: &str) -> Result<FaultSpec, String> {
    s.parse().map_err(|e: flowrca::Error| e.to_string())
}

/// A failure after argument parsing. Validation errors map to exit 1, the
/// rest to exit 2.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<flowrca::Error> for Failure {
    fn from(e: flowrca::Error) -> Self {
        use flowrca::Error as E;
        match e {
            E::Config(_) | E::InvalidFault(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

/// Write through a temporary file in the destination directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(path, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| io_failure(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_failure(path, e))?;
    tmp.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

/// `dir/name.csv` -> `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Parse `args` (program name first) and run the subcommand. Normal output goes
/// to `out`, diagnostics to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Localize {
            graph,
            old,
            new,
            target,
            seed,
            shapley,
            alpha,
            players,
            out: out_path,
            format,
        } => {
            let graph = parse_graph(&read(&graph)?)?;
            if !graph.contains_stream(&target) {
                return Err(Failure::Usage(format!("--target `{target}` is not a stream of the graph")));
            }
            let old = load_window(&read(&old)?, &graph, WindowLabel::Old)?;
            let new = load_window(&read(&new)?, &graph, WindowLabel::New)?;
            let config = AttributionConfig {
                shapley_mode: shapley,
                alpha,
                master_seed: seed,
                player_policy: match players {
                    Players::All => PlayerPolicy::AllAncestors,
                    Players::Changed => PlayerPolicy::ChangedOnly,
                },
                ..AttributionConfig::default()
            };
            config.validate()?;
            let report = attribute_change(&graph, &old, &new, &target, &config)?;
            let text = match format {
                ReportFormat::Json => report.to_json() + "\n",
                ReportFormat::Md => report_markdown(&report),
            };
            emit(out, out_path.as_deref(), &text)
        }
        Command::Simulate {
            pipeline,
            fault,
            n,
            seed,
            out: out_path,
        } => {
            let spec = pipeline.spec();
            let ds = simulate(&spec, fault.as_ref(), n, seed)?;
            let graph_path = sibling(&out_path, "graph.json");
            let manifest = SimulationManifest {
                pipeline,
                fault: fault.as_ref().map(ToString::to_string),
                seed,
                n_units: n,
                target: spec.target().to_string(),
                dataset: file_name(&out_path),
                graph: file_name(&graph_path),
            };
            let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
            write_atomic(&out_path, &ds.to_csv())?;
            write_atomic(&graph_path, &(spec.graph.to_json() + "\n"))?;
            write_atomic(&sibling(&out_path, "manifest.json"), &(manifest + "\n"))
        }
        Command::Experiment {
            pipeline,
            fault,
            repeats,
            seed,
            out: out_path,
            svg,
        } => {
            let spec = pipeline.spec();
            let config = AttributionConfig::default().with_seed(seed);
            let summary = run_experiment(&spec, fault.as_ref(), repeats, spec.default_units, &config)?;
            write_atomic(&out_path, &(summary.to_json() + "\n"))?;
            if let Some(svg) = svg {
                write_atomic(&svg, &summary_svg(&summary))?;
            }
            let _ = write!(out, "{}", summary_markdown(&summary));
            Ok(())
        }
        Command::Report { input, format } => {
            let text = read(&input)?;
            let rendered = if let Ok(report) = AttributionReport::from_json(&text) {
                match format {
                    RenderFormat::Md => report_markdown(&report),
                    RenderFormat::Svg => report_svg(&report),
                }
            } else if let Ok(summary) = ExperimentSummary::from_json(&text) {
                match format {
                    RenderFormat::Md => summary_markdown(&summary),
                    RenderFormat::Svg => summary_svg(&summary),
                }
            } else {
                return Err(Failure::Runtime(format!(
                    "{}: neither an attribution report nor an experiment summary",
                    input.display()
                )));
            };
            emit(out, None, &rendered)
        }
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_atomic(p, text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(format!("standard output: {e}"))),
    }
}
