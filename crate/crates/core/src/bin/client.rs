use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use minidb::client;
use minidb::server::DEFAULT_LISTEN;

/// Terminal client for minidb-server.
#[derive(Debug, Parser)]
#[command(name = "minidb-client", version)]
struct Args {
    /// Server address.
    #[arg(long, default_value = DEFAULT_LISTEN)]
    server: String,
    /// Print responses exactly as received on the wire.
    #[arg(long)]
    raw: bool,
    /// Run the statements in this file instead of reading from the terminal.
    #[arg(long)]
    file: Option<PathBuf>,
    /// In batch mode, keep running after an error.
    #[arg(long)]
    keep_going: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut out = io::stdout().lock();
    let code = match &args.file {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(script) => client::batch(&args.server, &script, &mut out, args.keep_going),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                1
            }
        },
        None => client::repl(
            &args.server,
            BufReader::new(io::stdin().lock()),
            &mut out,
            args.raw,
        ),
    };
    ExitCode::from(code as u8)
}
