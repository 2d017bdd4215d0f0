//! Line-oriented socket server.
//!
//! Each connection is a session. A request is one line of statement text
//! (a trailing `;` is allowed). The statement runs as its own transaction
//! and the response is written before the next request is read:
//!
//! ```text
//! OK <n>                 n = rows returned, rows affected, or 0 for DDL
//! <col>\t<col>...        only for result sets
//! <val>\t<val>...        n rows, only for result sets
//! .
//! ```
//!
//! or a single line `ERR <message>`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::db::{Database, Error};
use crate::engine::ExecutionOutcome;
use crate::parser;
use crate::txn::TxnId;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";
pub const TERMINATOR: &str = ".";
/// Longest accepted request line, newline excluded.
pub const MAX_REQUEST_BYTES: usize = 64 * 1024;

const ACCEPT_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Default)]
pub struct SessionState {
    pub id: u64,
    pub peer: Option<SocketAddr>,
    /// Transaction of the statement being executed, if any.
    pub current_txn: Option<TxnId>,
    pub requests: u64,
}

impl SessionState {
    pub fn new(id: u64, peer: Option<SocketAddr>) -> Self {
        SessionState {
            id,
            peer,
            ..Default::default()
        }
    }
}

fn one_line(message: &str) -> String {
    message.replace(['\n', '\r'], " ")
}

pub fn render_error(message: &str) -> String {
    format!("ERR {}\n", one_line(message))
}

pub fn render_outcome(outcome: &ExecutionOutcome) -> String {
    match outcome {
        ExecutionOutcome::Ok => format!("OK 0\n{TERMINATOR}\n"),
        ExecutionOutcome::RowsAffected(n) => format!("OK {n}\n{TERMINATOR}\n"),
        ExecutionOutcome::Results(rs) => {
            let mut out = format!("OK {}\n{}\n", rs.rows.len(), rs.columns.join("\t"));
            for row in &rs.rows {
                let cells: Vec<String> = row.iter().map(|c| c.to_plain()).collect();
                out.push_str(&cells.join("\t"));
                out.push('\n');
            }
            out.push_str(TERMINATOR);
            out.push('\n');
            out
        }
    }
}

pub fn render_result(result: &Result<ExecutionOutcome, Error>) -> String {
    match result {
        Ok(outcome) => render_outcome(outcome),
        Err(e) => render_error(&e.to_string()),
    }
}

/// Turns one request line into response bytes. Never panics on bad input.
pub fn handle_request(db: &Database, session: &mut SessionState, line: &[u8]) -> Vec<u8> {
    session.requests += 1;
    let text = match std::str::from_utf8(line) {
        Ok(t) => t,
        Err(_) => return render_error("invalid request: not valid UTF-8").into_bytes(),
    };
    let mut text = text.trim();
    if let Some(stripped) = text.strip_suffix(';') {
        text = stripped.trim_end();
    }
    let stmt = match parser::parse(text) {
        Ok(s) => s,
        Err(e) => return render_error(&e.to_string()).into_bytes(),
    };
    let mut txn = db.transactions().begin();
    session.current_txn = Some(txn.id());
    let result = db.run_in(&mut txn, &stmt);
    session.current_txn = None;
    render_result(&result).into_bytes()
}

/// Stops a running [`Server`] from another thread.
#[derive(Debug, Clone, Default)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_shutdown(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct Server {
    listener: TcpListener,
    db: Arc<Database>,
    shutdown: ShutdownHandle,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, db: Arc<Database>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Server {
            listener,
            db,
            shutdown: ShutdownHandle::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.shutdown.clone()
    }

    pub fn database(&self) -> &Arc<Database> {
        &self.db
    }

    /// Accepts connections until shut down, then lets in-flight statements
    /// finish, closes every session and flushes the pool.
    pub fn run(self) -> io::Result<()> {
        let next_session = AtomicU64::new(0);
        let mut sessions: Vec<(JoinHandle<()>, TcpStream)> = Vec::new();
        while !self.shutdown.is_shutdown() {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let id = next_session.fetch_add(1, Ordering::Relaxed);
                    let control = stream.try_clone()?;
                    let db = self.db.clone();
                    let handle = thread::Builder::new()
                        .name(format!("session-{id}"))
                        .spawn(move || {
                            let mut state = SessionState::new(id, Some(peer));
                            if let Err(e) = run_session(&db, &mut state, stream) {
                                log::debug!("session {id} ended: {e}");
                            }
                        })?;
                    log::info!("session {id} connected from {peer}");
                    sessions.push((handle, control));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    thread::sleep(ACCEPT_POLL);
                }
            }
            sessions.retain(|(h, _)| !h.is_finished());
        }
        for (_, control) in &sessions {
            let _ = control.shutdown(Shutdown::Read);
        }
        for (handle, _) in sessions {
            let _ = handle.join();
        }
        self.db
            .close()
            .map_err(|e| io::Error::other(e.to_string()))?;
        log::info!("server stopped");
        Ok(())
    }
}

fn run_session(db: &Database, state: &mut SessionState, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = (&mut reader)
            .take(MAX_REQUEST_BYTES as u64 + 1)
            .read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(());
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        } else if line.len() > MAX_REQUEST_BYTES {
            writer.write_all(render_error("request too long").as_bytes())?;
            let _ = writer.shutdown(Shutdown::Both);
            return Ok(());
        }
        let response = handle_request(db, state, &line);
        writer.write_all(&response)?;
        writer.flush()?;
    }
}

/// Opens the database and serves until `shutdown` fires.
pub fn serve(
    listen: &str,
    db: Database,
    shutdown: Option<ShutdownHandle>,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut server = Server::bind(listen, Arc::new(db))?;
    if let Some(handle) = shutdown {
        server.shutdown = handle;
    }
    log::info!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}
