use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;

use minidb::server::{self, ShutdownHandle, DEFAULT_LISTEN};
use minidb::{Database, DbConfig, JoinImpl, LockPolicy};

/// Serve a minidb data directory over TCP.
#[derive(Debug, Parser)]
#[command(name = "minidb-server", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = DEFAULT_LISTEN)]
    listen: String,
    /// Directory holding the catalog and table files.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Number of buffers in the pool.
    #[arg(long, default_value_t = minidb::buffer::DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// `global` (one system-wide lock per statement) or `table`.
    #[arg(long, default_value = "global")]
    lock_mode: LockPolicy,
    /// Re-check interval for blocked pins and locks, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    poll_ms: u64,
    /// Give up on a blocked pin or lock after this many milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Join algorithm for two-table selects.
    #[arg(long, default_value = "nested")]
    join_impl: JoinImpl,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut config = DbConfig::new(&args.data_dir);
    config.pool_size = args.pool_size;
    config.lock_policy = args.lock_mode;
    config.join_impl = args.join_impl;
    config.poll_interval = Duration::from_millis(args.poll_ms);
    config.wait_timeout = Duration::from_millis(args.timeout_ms);

    let db = match Database::open(config) {
        Ok(db) => db,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let shutdown = ShutdownHandle::default();
    let on_signal = shutdown.clone();
    if let Err(e) = ctrlc::set_handler(move || on_signal.shutdown()) {
        eprintln!("error: cannot install signal handler: {e}");
        return ExitCode::FAILURE;
    }
    match server::serve(&args.listen, db, Some(shutdown)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
