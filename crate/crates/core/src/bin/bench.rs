use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use minidb::bench::{self, Fragment, Status, WorkloadParams};
use minidb::JoinImpl;

/// Time a join workload against a running server.
///
/// Without `--baseline` the run's timings are written to `--out`. With
/// `--baseline <file>` (a previous nested-loop run) the two are compared,
/// the feedback sentence is printed and the comparison is written to `--out`.
#[derive(Debug, Parser)]
#[command(name = "minidb-bench", version)]
struct Args {
    #[arg(long, default_value = minidb::server::DEFAULT_LISTEN)]
    server: String,
    /// join_small, join_300 or join_1k; sizes can be overridden below.
    #[arg(long, default_value = "join_small")]
    workload: String,
    /// Join implementation the server was started with.
    #[arg(long, default_value = "nested")]
    variant: JoinImpl,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    rows_a: Option<usize>,
    #[arg(long)]
    rows_b: Option<usize>,
    #[arg(long)]
    match_rate: Option<f64>,
    /// Fragment file of a nested-loop run to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "report.txt")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut params = bench::named_workload(&args.workload).unwrap_or(WorkloadParams {
        rows_a: 100,
        rows_b: 100,
        match_rate: 1.0,
        repetitions: bench::DEFAULT_REPETITIONS,
    });
    if let Some(n) = args.rows_a {
        params.rows_a = n;
    }
    if let Some(n) = args.rows_b {
        params.rows_b = n;
    }
    if let Some(r) = args.match_rate {
        params.match_rate = r;
    }
    if let Some(k) = args.reps {
        params.repetitions = k;
    }

    let baseline = match &args.baseline {
        Some(path) => match std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| Fragment::from_kv(&t).map_err(|e| e.to_string()))
        {
            Ok(f) => Some(f),
            Err(e) => {
                eprintln!("error: cannot load baseline {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        },
        None => None,
    };

    let workload = bench::generate_workload(&args.workload, &params, args.seed);
    let fragment = match bench::run(&workload, &args.server, args.variant) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    let (text, ok) = match baseline {
        None => {
            println!(
                "workload={} variant={} median_ms={:.3} status={:?}",
                fragment.workload,
                fragment.variant,
                fragment.median_ms(),
                fragment.status
            );
            (fragment.to_kv(), fragment.status == Status::Ok)
        }
        Some(base) => match bench::report(&[base, fragment]) {
            Ok(reports) => {
                let r = &reports[0];
                println!("{}", r.sentence);
                (r.to_kv(), r.status == Status::Ok)
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        },
    };
    if let Err(e) = std::fs::write(&args.out, text) {
        eprintln!("error: cannot write {}: {e}", args.out.display());
        return ExitCode::FAILURE;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
