//! `sparse-arx`: simulate ARX networks, identify them from data and run the
//! randomized benchmark.
//!
//! Exit codes: 0 success, 2 usage, 3 data or I/O error, 4 solver failure,
//! 5 partial result (some nodes or trials failed).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_arx::arx::{simulate, InputKind, NetworkGenerator};
use sparse_arx::cccp::{LambdaMode, SolveConfig};
use sparse_arx::dictionary::EntrySpec;
use sparse_arx::harness::{benchmark, identify, to_dot, BenchmarkConfig, IdentifyConfig, SolverKind};
use sparse_arx::io::{read_time_series, write_network, write_time_series};
use sparse_arx::objective::PriorMode;
use sparse_arx::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_PARTIAL: u8 = 5;

/// Default grid for `--lambda grid`.
const DEFAULT_LAMBDA_GRID: [f64; 9] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

#[derive(Parser, Debug)]
#[command(name = "sparse-arx", version, about = "Sparse ARX network identification")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (default: logical CPUs).
    #[arg(long, global = true, env = "ARX_SBL_JOBS")]
    jobs: Option<usize>,

    /// key=value file; its settings act as defaults for the subcommand flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random stable network and simulate it.
    Simulate(SimulateArgs),
    /// Identify every node of a network from a data CSV.
    Identify(IdentifyArgs),
    /// Randomized recovery benchmark across prior modes.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    inputs: usize,
    /// Maximum polynomial order of the true network.
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    #[arg(long, default_value_t = 0.5)]
    coeff_scale: f64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0.01)]
    noise_var: f64,
    #[arg(long, default_value_t = 1.0)]
    input_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth network JSON output.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Cccp,
    Em,
    Admm,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Cccp => SolverKind::Cccp,
            SolverArg::Em => SolverKind::Em,
            SolverArg::Admm => SolverKind::Admm,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Combined,
    Element,
    Group,
}

impl From<ModeArg> for PriorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Combined => PriorMode::Combined,
            ModeArg::Element => PriorMode::ElementOnly,
            ModeArg::Group => PriorMode::GroupOnly,
        }
    }
}

/// `estimate`, `fixed:<v>`, `grid` or `grid:<v1>,<v2>,...`.
fn parse_lambda(s: &str) -> Result<LambdaMode, String> {
    let bad = |v: &str| format!("invalid lambda value '{v}'");
    match s.split_once(':') {
        None if s == "estimate" => Ok(LambdaMode::Estimate),
        None if s == "grid" => Ok(LambdaMode::Grid(DEFAULT_LAMBDA_GRID.to_vec())),
        Some(("fixed", v)) => v.trim().parse().map(LambdaMode::Fixed).map_err(|_| bad(v)),
        Some(("grid", vs)) => vs
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(v)))
            .collect::<Result<Vec<_>, _>>()
            .map(LambdaMode::Grid),
        _ => Err(format!(
            "expected estimate, fixed:<v>, grid or grid:<v1>,<v2>,..., got '{s}'"
        )),
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "cccp")]
    solver: SolverArg,
    /// Noise variance handling: estimate, fixed:<v>, grid[:<v1>,...].
    #[arg(long, value_parser = parse_lambda, default_value = "estimate")]
    lambda: LambdaMode,
    /// Also apply the group prior to the self-feedback group.
    #[arg(long)]
    penalize_self_group: bool,
    /// Starts per node; the lowest final objective wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Outer iteration limit.
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Disable pruning of vanishing variances.
    #[arg(long)]
    no_prune: bool,
}

impl SolverArgs {
    fn solve_config(&self, mode: PriorMode) -> SolveConfig {
        SolveConfig {
            mode,
            lambda_mode: self.lambda.clone(),
            penalize_self_group: self.penalize_self_group,
            max_outer: self.max_iter,
            prune: !self.no_prune,
            seed: self.seed,
            ..SolveConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// Data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Lag order of the regression.
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, value_enum, default_value = "combined")]
    mode: ModeArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// JSON dictionary of nonlinear terms appended to the linear regressors.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Result JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Graphviz output of the detected topology.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    inputs: usize,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    #[arg(long, default_value_t = 0.5)]
    coeff_scale: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_var: f64,
    #[arg(long, default_value_t = 1.0)]
    input_var: f64,
    /// Draw a new topology for every trial.
    #[arg(long)]
    redraw_topology: bool,
    /// Comma-separated prior modes to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "combined,element,group")]
    modes: Vec<ModeArg>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Report JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Markdown tables output (also printed to stdout).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Numerical(_) | Error::Divergence(_) | Error::LayoutMismatch(_) => EXIT_SOLVER,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn run_simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let gen = NetworkGenerator {
        p: a.nodes,
        m: a.inputs,
        max_order: a.order,
        density: a.density,
        coeff_scale: a.coeff_scale,
        noise_var: a.noise_var,
    };
    if a.samples <= a.order {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot cover model order {}",
            a.samples, a.order
        ))
        .into());
    }
    let net = sparse_arx::arx::random_network(&gen, a.seed)?;
    let data = simulate(
        &net,
        a.samples,
        &InputKind::Gaussian {
            variance: a.input_var,
        },
        sparse_arx::harness::derive_seed(a.seed, &[1]),
    )?;
    write_time_series(&a.out, &data)?;
    write_network(&a.truth, &net)?;
    Ok(0)
}

fn run_identify(a: IdentifyArgs) -> Result<u8, Failure> {
    let data = read_time_series(&a.data).map_err(|e| Failure {
        message: format!("{}: {e}", a.data.display()),
        ..Failure::from(e)
    })?;
    let dictionary: Vec<EntrySpec> = match &a.dictionary {
        None => Vec::new(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure {
                code: EXIT_DATA,
                message: format!("{}: {e}", path.display()),
            })?
        }
    };
    let cfg = IdentifyConfig {
        k: a.k,
        solver: a.solver.solver.into(),
        solve: a.solver.solve_config(a.mode.into()),
        restarts: a.solver.restarts,
        seed: a.solver.seed,
        dictionary,
    };
    let result = identify(&data, &cfg)?;
    write(&a.out, &result.to_json())?;
    if let Some(dot) = &a.dot {
        write(dot, &to_dot(&result.topology))?;
    }
    let failed = result.failed_nodes();
    if failed > 0 {
        for n in result.nodes.iter().filter(|n| n.error.is_some()) {
            eprintln!("node {}: {}", n.node, n.error.as_deref().unwrap_or_default());
        }
        eprintln!("{failed} of {} nodes failed", result.p);
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn run_benchmark(a: BenchmarkArgs) -> Result<u8, Failure> {
    let cfg = BenchmarkConfig {
        trials: a.trials,
        p: a.nodes,
        m: a.inputs,
        max_order: a.order,
        k: a.k,
        samples: a.samples,
        density: a.density,
        coeff_scale: a.coeff_scale,
        noise_var: a.noise_var,
        input_var: a.input_var,
        seed: a.solver.seed,
        redraw_topology: a.redraw_topology,
        solver: a.solver.solver.into(),
        solve: a.solver.solve_config(PriorMode::Combined),
        restarts: a.solver.restarts,
        modes: a.modes.iter().map(|&m| m.into()).collect(),
    };
    let report = benchmark(&cfg)?;
    write(&a.out, &report.to_json())?;
    let tables = report.render_tables();
    if let Some(path) = &a.table {
        write(path, &tables)?;
    }
    print!("{tables}");
    Ok(if report.any_failures() { EXIT_PARTIAL } else { 0 })
}

/// Turns `key=value` lines into flags. `#` starts a comment; `true`/`false`
/// toggle switches.
fn config_args(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure {
                code: EXIT_USAGE,
                message: format!("{}:{}: expected key=value", path.display(), n + 1),
            });
        };
        let flag = format!("--{}", key.trim().trim_start_matches("--").replace('_', "-"));
        match value.trim() {
            "true" => out.push(flag),
            "false" => {}
            v => {
                out.push(flag);
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Inserts config-file flags directly after the subcommand so that flags
/// given on the command line override them.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, Failure> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let extra = config_args(Path::new(&path))?;
    let sub = args
        .iter()
        .position(|a| matches!(a.as_str(), "simulate" | "identify" | "benchmark"));
    let mut out = args;
    let at = sub.map_or(out.len(), |i| i + 1);
    out.splice(at..at, extra);
    Ok(out)
}

fn run() -> Result<u8, Failure> {
    let args = expand_config(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return Ok(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure {
                code: EXIT_USAGE,
                message: format!("cannot size worker pool: {e}"),
            })?;
    }
    match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Identify(a) => run_identify(a),
        Command::Benchmark(a) => run_benchmark(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_specs() {
        assert_eq!(parse_lambda("estimate").unwrap(), LambdaMode::Estimate);
        assert_eq!(parse_lambda("fixed:0.5").unwrap(), LambdaMode::Fixed(0.5));
        assert_eq!(
            parse_lambda("grid:0.1,1").unwrap(),
            LambdaMode::Grid(vec![0.1, 1.0])
        );
        assert!(parse_lambda("fixed:x").is_err());
        assert!(parse_lambda("auto").is_err());
    }

    #[test]
    fn config_goes_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# defaults\nk = 4\npenalize_self_group = true\nno-prune=false\n").unwrap();
        let args: Vec<String> = ["sparse-arx", "--config", path.to_str().unwrap(), "identify", "--k", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_config(args).unwrap();
        assert_eq!(&out[4..], ["--k", "4", "--penalize-self-group", "--k", "2"]);
    }
}
