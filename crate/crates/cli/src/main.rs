use std::path::PathBuf;
use std::process::ExitCode;

use afgauge::scenario::{self, RunStatus, Scenario};
use clap::Parser;

/// Runs one scenario file and writes its CSV/JSON outputs.
#[derive(Parser, Debug)]
#[command(name = "afgauge", version)]
struct Args {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,

    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads; falls back to NCGFT_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,

    /// Minimize every path point independently.
    #[arg(long)]
    no_warm_start: bool,
}

const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

fn fail(kind: &str, message: String) -> ExitCode {
    let err = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{err}");
    ExitCode::from(EXIT_INVALID)
}

fn threads(args: &Args) -> Result<Option<usize>, String> {
    if let Some(n) = args.threads {
        return Ok(Some(n));
    }
    match std::env::var("NCGFT_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("NCGFT_THREADS is not a count: {v:?}")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();

    match threads(&args) {
        Ok(Some(0)) => return fail("invalid", "thread count must be positive".into()),
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                return fail("invalid", e.to_string());
            }
        }
        Ok(None) => {}
        Err(e) => return fail("invalid", e),
    }

    let mut sc = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return fail("scenario", e.to_string()),
    };
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(out) = args.out {
        sc.out = out;
    }
    if args.no_warm_start {
        sc.minimizer.warm_start = Some(false);
    }

    match scenario::run(&sc) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            match outcome.status {
                RunStatus::Ok => ExitCode::SUCCESS,
                RunStatus::NotConverged => {
                    eprintln!(
                        "{}",
                        serde_json::json!({ "error": "not-converged", "message": "some minimizations did not converge" })
                    );
                    ExitCode::from(EXIT_NOT_CONVERGED)
                }
                RunStatus::CheckFailed => fail("check-failed", "consistency checks reported violations".into()),
            }
        }
        Err(e) => fail("run", e.to_string()),
    }
}
