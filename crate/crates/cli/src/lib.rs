//! The `speckernel` command line.

use std::io::Write;
use std::path::Path;

use clap::{Args, Parser, Subcommand, ValueEnum};

use speckernel::analysis::{LayoutSet, TransformKind};
use speckernel::layout::{random_layout, validate_layout, SlotScheme};
use speckernel::par::{item_rng, with_jobs, Exec};
use speckernel::report::{self, Report};
use speckernel::scenarios::{self, SCENARIOS};
use speckernel::syntax::{parse_system, print};
use speckernel::{Layout, StructuralError, SyscallName, System};

const USAGE_ERROR: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "speckernel", version, about = "Layout randomization and speculative safety checks for a toy kernel")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Worker threads for parallel checks.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run every check on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Master seed for randomized commands.
    #[arg(long, global = true, env = "SPECKERNEL_SEED", default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args, Debug)]
struct SystemArg {
    /// System file, or the name of a built-in fixture.
    #[arg(long)]
    system: String,
}

#[derive(Args, Debug)]
struct LayoutArg {
    /// `canonical`, `random`, or a JSON file mapping identifiers to bases.
    #[arg(long, default_value = "canonical")]
    layout: String,
    /// Use a random layout drawn from the seed.
    #[arg(long, conflicts_with = "layout")]
    sample: bool,
}

impl LayoutArg {
    fn spec(&self) -> &str {
        if self.sample {
            "random"
        } else {
            &self.layout
        }
    }
}

#[derive(Args, Debug)]
struct LayoutSetArg {
    /// Enumerate every layout (the default).
    #[arg(long, conflicts_with = "samples")]
    enumerate: bool,
    /// Check this many random layouts instead of enumerating.
    #[arg(long)]
    samples: Option<usize>,
    /// Refuse to enumerate more layouts than this.
    #[arg(long, default_value_t = 100_000)]
    budget: u128,
}

impl LayoutSetArg {
    fn set(&self, seed: u64) -> LayoutSet {
        match self.samples {
            Some(count) => LayoutSet::Sample { count, seed },
            None => LayoutSet::Enumerate { bound: self.budget },
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an attacker program against a system.
    Run {
        #[command(flatten)]
        system: SystemArg,
        /// Attacker program file, or inline source.
        #[arg(long)]
        attacker: String,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
        /// Record a step-by-step trace.
        #[arg(long)]
        trace: bool,
    },
    /// Check layout non-interference of a system call.
    CheckNi {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long)]
        syscall: String,
        #[command(flatten)]
        layouts: LayoutSetArg,
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
    },
    /// Check speculative layout non-interference of a system call.
    CheckSlni {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long)]
        syscall: String,
        #[command(flatten)]
        layouts: LayoutSetArg,
        #[arg(long, default_value_t = 8)]
        depth: usize,
    },
    /// Estimate how often a kernel address is unallocated under slot layouts.
    EstimateDelta {
        #[command(flatten)]
        system: SystemArg,
        /// Kernel address to probe; defaults to the first kernel address.
        #[arg(long)]
        probe: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Run an attacker against many random slot layouts.
    Experiment {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long)]
        attacker: String,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
    },
    /// Search for directive sequences that reach an unsafe state.
    Search {
        #[command(flatten)]
        system: SystemArg,
        /// Search from this system call only.
        #[arg(long, conflicts_with = "attacker")]
        syscall: Option<String>,
        /// Search from an attacker program instead.
        #[arg(long)]
        attacker: Option<String>,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, default_value_t = 10_000)]
        fuel: u64,
    },
    /// Insert fences into kernel code and check the result.
    Transform {
        #[command(flatten)]
        system: SystemArg,
        /// One fence per run of memory accesses.
        #[arg(long)]
        coalesced: bool,
        /// Write the transformed system here.
        #[arg(long)]
        out: Option<String>,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 500)]
        fuel: u64,
        #[arg(long, default_value_t = 8)]
        depth: usize,
    },
    /// Run a built-in scenario.
    Scenario {
        /// Scenario name; omit to list them.
        name: Option<String>,
    },
    /// Rerun the command recorded in a JSON report and compare.
    Replay {
        report: String,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Structural(StructuralError),
}

impl From<StructuralError> for CliError {
    fn from(e: StructuralError) -> Self {
        CliError::Structural(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_system(arg: &str) -> Result<System, CliError> {
    if let Some(sys) = scenarios::fixture(arg) {
        return Ok(sys);
    }
    let src = std::fs::read_to_string(arg).map_err(|e| usage(format!("{arg}: {e}")))?;
    parse_system(&src).map_err(|e| usage(format!("{arg}:{e}")))
}

fn source(arg: &str) -> Result<String, CliError> {
    if arg == "-" {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut s).map_err(|e| usage(e.to_string()))?;
        Ok(s)
    } else if Path::new(arg).is_file() {
        std::fs::read_to_string(arg).map_err(|e| usage(format!("{arg}: {e}")))
    } else {
        Ok(arg.to_string())
    }
}

fn check_attacker(sys: &System, src: &str) -> Result<(), CliError> {
    speckernel::syntax::parse_attacker(src, sys).map(|_| ()).map_err(|e| usage(format!("attacker:{e}")))
}

fn load_layout(arg: &str, sys: &System, seed: u64) -> Result<Layout, CliError> {
    let l = match arg {
        "canonical" => Layout::canonical(sys),
        "random" => random_layout(sys, &mut item_rng(seed, 0))?,
        path => {
            let s = std::fs::read_to_string(path).map_err(|e| usage(format!("{path}: {e}")))?;
            serde_json::from_str(&s).map_err(|e| usage(format!("{path}: {e}")))?
        }
    };
    let bad = validate_layout(&l, sys);
    if !bad.is_empty() {
        return Err(usage(format!("invalid layout: {bad:?}")));
    }
    Ok(l)
}

fn syscall(sys: &System, name: &str) -> Result<SyscallName, CliError> {
    let s = SyscallName::new(name);
    if sys.syscalls.contains_key(&s) {
        Ok(s)
    } else {
        Err(usage(format!("no system call `{name}`")))
    }
}

fn emit(out: &mut dyn Write, format: Format, r: &Report) {
    let _ = match format {
        Format::Json => writeln!(out, "{}", r.to_json()),
        Format::Text => write!(out, "{}", r.to_text()),
    };
}

fn execute(cli: &Cli, exec: Exec, out: &mut dyn Write) -> Result<i32, CliError> {
    let seed = cli.seed;
    let report = match &cli.command {
        Command::Run { system, attacker, layout, fuel, trace } => {
            let sys = load_system(&system.system)?;
            let src = source(attacker)?;
            check_attacker(&sys, &src)?;
            let l = load_layout(layout.spec(), &sys, seed)?;
            report::run_report(&sys, &src, &l, *fuel, *trace)?
        }
        Command::CheckNi { system, syscall: s, layouts, fuel } => {
            let sys = load_system(&system.system)?;
            let s = syscall(&sys, s)?;
            report::ni_report(&sys, &s, layouts.set(seed), *fuel, exec)?
        }
        Command::CheckSlni { system, syscall: s, layouts, depth } => {
            let sys = load_system(&system.system)?;
            let s = syscall(&sys, s)?;
            report::slni_report(&sys, &s, layouts.set(seed), *depth, exec)?
        }
        Command::EstimateDelta { system, probe, trials } => {
            let sys = load_system(&system.system)?;
            let scheme = SlotScheme::for_system(&sys)?;
            report::delta_report(&sys, &scheme, *probe, *trials, seed, exec)?
        }
        Command::Experiment { system, attacker, trials, fuel } => {
            let sys = load_system(&system.system)?;
            let src = source(attacker)?;
            check_attacker(&sys, &src)?;
            let scheme = SlotScheme::for_system(&sys)?;
            report::experiment_report(&sys, &src, &scheme, *trials, *fuel, seed, exec)?
        }
        Command::Search { system, syscall: s, attacker, layout, depth, fuel } => {
            let sys = load_system(&system.system)?;
            let s = s.as_deref().map(|n| syscall(&sys, n)).transpose()?;
            let src = attacker.as_deref().map(source).transpose()?;
            if let Some(src) = &src {
                check_attacker(&sys, src)?;
            }
            let l = load_layout(layout.spec(), &sys, seed)?;
            report::search_report(&sys, s.as_ref(), src.as_deref(), &l, *depth, *fuel, exec)?
        }
        Command::Transform { system, coalesced, out: path, trials, fuel, depth } => {
            let sys = load_system(&system.system)?;
            let kind = if *coalesced { TransformKind::Coalesced } else { TransformKind::Fence };
            let (r, t) = report::transform_report(&sys, kind, *trials, *fuel, *depth, seed, exec)?;
            if let Some(path) = path {
                std::fs::write(path, print::system(&t)).map_err(|e| usage(format!("{path}: {e}")))?;
            }
            r
        }
        Command::Scenario { name: None } => {
            for s in SCENARIOS {
                let _ = writeln!(out, "{:<18} {}", s.name, s.about);
            }
            return Ok(0);
        }
        Command::Scenario { name: Some(name) } => {
            if scenarios::scenario(name).is_none() {
                return Err(usage(format!("unknown scenario `{name}`")));
            }
            scenarios::run_scenario(name, exec)?
        }
        Command::Replay { report: path } => {
            let s = std::fs::read_to_string(path).map_err(|e| usage(format!("{path}: {e}")))?;
            let r = Report::from_json(&s).map_err(|e| usage(format!("{path}: {e}")))?;
            let check = report::replay(&r, exec)?;
            match cli.format {
                Format::Json => {
                    let v = serde_json::json!({ "matches": check.matches, "details": check.details });
                    let _ = writeln!(out, "{v}");
                }
                Format::Text if check.matches => {
                    let _ = writeln!(out, "replay matches");
                }
                Format::Text => {
                    for d in &check.details {
                        let _ = writeln!(out, "mismatch: {d}");
                    }
                }
            }
            return Ok(if check.matches { 0 } else { 1 });
        }
    };
    emit(out, cli.format, &report);
    Ok(report.exit_code())
}

/// Runs the command line `argv` (including the program name), writing
/// results to `out` and diagnostics to stderr. Returns the exit status.
pub fn run_cli_with(argv: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match with_jobs(cli.jobs, || {
        let mut buf = Vec::new();
        let r = execute(&cli, exec, &mut buf);
        (r, buf)
    }) {
        (Ok(code), buf) => {
            let _ = out.write_all(&buf);
            code
        }
        (Err(CliError::Usage(msg)), _) => {
            eprintln!("error: {msg}");
            USAGE_ERROR
        }
        (Err(CliError::Structural(e)), _) => {
            eprintln!("error: {e}");
            USAGE_ERROR
        }
    }
}

pub fn run_cli(argv: &[String]) -> i32 {
    run_cli_with(argv, &mut std::io::stdout().lock())
}
