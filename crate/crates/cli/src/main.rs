use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qnetsim::backends::BackendKind;
use qnetsim::scenario::{self, Overrides, ScenarioConfig, SweepSpec};
use qnetsim::Error;

#[derive(Parser)]
#[command(name = "qnetsim", version, about = "Run quantum network scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        /// Stop time, overriding the scenario's t_end.
        #[arg(long)]
        until: Option<f64>,
        /// Metrics CSV path.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Event trace path (newline-delimited JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Repeat a scenario over a grid of values for one numeric parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted path into the scenario, e.g. link.fidelity.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        grid: Vec<f64>,
        /// kind.field, e.g. purify.fidelity or datagram-success.latency.
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(scenario::exit_code(e) as u8)
}

fn run(path: PathBuf, ov: Overrides) -> ExitCode {
    let mut cfg = match ScenarioConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    ov.apply(&mut cfg);
    let report = match scenario::run(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = scenario::write_outputs(&cfg, &report) {
        return fail(&e);
    }
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &report.metrics {
        *kinds.entry(m.kind.as_str()).or_default() += 1;
    }
    println!("{}: stopped at t={} ({}), {} events", cfg.name, report.end_time, report.stop, report.events);
    for (k, n) in kinds {
        println!("  {k}: {n}");
    }
    if report.breaches.is_empty() {
        return ExitCode::SUCCESS;
    }
    for b in &report.breaches {
        eprintln!("invariant breach: {b}");
    }
    ExitCode::from(2)
}

fn sweep(path: PathBuf, spec: SweepSpec, out: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return fail(&Error::Io(format!("{}: {e}", path.display()))),
    };
    let rows = match scenario::sweep(&text, &spec) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let res = match out {
        Some(p) => std::fs::File::create(&p)
            .map_err(|e| Error::Io(format!("{}: {e}", p.display())))
            .and_then(|f| scenario::write_sweep(&spec.param, &rows, f)),
        None => scenario::write_sweep(&spec.param, &rows, std::io::stdout()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, backend, until, metrics, trace } => {
            run(scenario, Overrides { seed, backend, t_end: until, metrics, trace })
        }
        Cmd::Sweep { scenario, param, grid, metric, repeats, out } => {
            sweep(scenario, SweepSpec { param, grid, metric, repeats }, out)
        }
    }
}
