//! Terminal client: an interactive prompt and a batch runner, both speaking
//! the server's line protocol over one connection.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;

use thiserror::Error;

use crate::server::TERMINATOR;

pub const PROMPT: &str = "minidb> ";
pub const QUIT: &str = "\\q";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("connection lost: {0}")]
    Io(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("a request must be a single line")]
    MultiLine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok {
        count: u64,
        table: Option<ResultTable>,
    },
    Err(String),
}

/// A decoded response together with the exact bytes received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub raw: String,
    pub reply: Reply,
}

impl Response {
    pub fn is_err(&self) -> bool {
        matches!(self.reply, Reply::Err(_))
    }
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(|source| ClientError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    pub fn request(&mut self, sql: &str) -> Result<Response, ClientError> {
        if sql.contains('\n') {
            return Err(ClientError::MultiLine);
        }
        self.writer.write_all(format!("{sql}\n").as_bytes())?;
        self.writer.flush()?;
        read_response(&mut self.reader)
    }
}

fn read_line(reader: &mut impl BufRead, raw: &mut String) -> Result<String, ClientError> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(ClientError::Io(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "server closed the connection",
        )));
    }
    raw.push_str(&line);
    if line.ends_with('\n') {
        line.pop();
    }
    Ok(line)
}

/// Reads exactly one response from `reader`.
pub fn read_response(reader: &mut impl BufRead) -> Result<Response, ClientError> {
    let mut raw = String::new();
    let status = read_line(reader, &mut raw)?;
    if let Some(msg) = status.strip_prefix("ERR ") {
        let reply = Reply::Err(msg.to_string());
        return Ok(Response { raw, reply });
    }
    let count: u64 = status
        .strip_prefix("OK ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| ClientError::Protocol(format!("unexpected status line {status:?}")))?;
    let next = read_line(reader, &mut raw)?;
    if next == TERMINATOR {
        let reply = Reply::Ok { count, table: None };
        return Ok(Response { raw, reply });
    }
    let columns: Vec<String> = next.split('\t').map(str::to_string).collect();
    let mut rows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let line = read_line(reader, &mut raw)?;
        rows.push(line.split('\t').map(str::to_string).collect());
    }
    let end = read_line(reader, &mut raw)?;
    if end != TERMINATOR {
        return Err(ClientError::Protocol(format!(
            "expected terminator, found {end:?}"
        )));
    }
    let reply = Reply::Ok {
        count,
        table: Some(ResultTable { columns, rows }),
    };
    Ok(Response { raw, reply })
}

fn plural(n: u64) -> String {
    format!("{n} row(s)")
}

/// Pads every column to its widest cell, with a rule under the header.
pub fn render_table(table: &ResultTable) -> String {
    let mut widths: Vec<usize> = table.columns.iter().map(|c| c.len()).collect();
    for row in &table.rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let last = cells.len().saturating_sub(1);
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == last { c.clone() } else { format!("{c:<w$}") })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = line(&table.columns);
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-"),
    );
    out.push('\n');
    for row in &table.rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Human-readable form of a reply.
pub fn render_reply(reply: &Reply) -> String {
    match reply {
        Reply::Err(msg) => format!("error: {msg}\n"),
        Reply::Ok { count, table: None } => format!("{}\n", plural(*count)),
        Reply::Ok {
            count,
            table: Some(t),
        } => format!("{}{}\n", render_table(t), plural(*count)),
    }
}

/// Interactive loop. Returns the process exit code.
pub fn repl(addr: &str, input: impl BufRead, out: &mut impl Write, raw: bool) -> i32 {
    let mut client = match Client::connect(addr) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return 1;
        }
    };
    let mut lines = input.lines();
    loop {
        if !raw {
            let _ = write!(out, "{PROMPT}");
            let _ = out.flush();
        }
        let line = match lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => {
                let _ = writeln!(out, "error: {e}");
                return 1;
            }
            None => return 0,
        };
        let stmt = line.trim();
        if stmt.is_empty() {
            continue;
        }
        if stmt == QUIT {
            return 0;
        }
        match client.request(stmt) {
            Ok(resp) if raw => {
                let _ = write!(out, "{}", resp.raw);
            }
            Ok(resp) => {
                let _ = write!(out, "{}", render_reply(&resp.reply));
            }
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
                return 1;
            }
        }
    }
}

/// Runs a script of one statement per line (`--` lines and blank lines are
/// skipped), printing raw responses. Stops at the first error unless
/// `keep_going`. Exit code is 1 if any statement failed.
pub fn batch(addr: &str, script: &str, out: &mut impl Write, keep_going: bool) -> i32 {
    let mut client = match Client::connect(addr) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return 1;
        }
    };
    let mut failed = false;
    for line in script.lines() {
        let stmt = line.trim();
        if stmt.is_empty() || stmt.starts_with("--") {
            continue;
        }
        match client.request(stmt) {
            Ok(resp) => {
                let _ = write!(out, "{}", resp.raw);
                if resp.is_err() {
                    failed = true;
                    if !keep_going {
                        return 1;
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
                return 1;
            }
        }
    }
    i32::from(failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str) -> Response {
        read_response(&mut raw.as_bytes()).unwrap()
    }

    #[test]
    fn decode_variants() {
        assert_eq!(
            parse("OK 0\n.\n").reply,
            Reply::Ok {
                count: 0,
                table: None
            }
        );
        assert_eq!(parse("ERR boom\n").reply, Reply::Err("boom".into()));
        let r = parse("OK 2\na\tb\n1\t\n.\t.\n.\n");
        assert_eq!(r.raw, "OK 2\na\tb\n1\t\n.\t.\n.\n");
        assert_eq!(
            r.reply,
            Reply::Ok {
                count: 2,
                table: Some(ResultTable {
                    columns: vec!["a".into(), "b".into()],
                    rows: vec![
                        vec!["1".into(), "".into()],
                        vec![".".into(), ".".into()]
                    ],
                })
            }
        );
        // a row that is just "." is still a row because the count says so
        let r = parse("OK 1\ns\n.\n.\n");
        assert!(matches!(r.reply, Reply::Ok { table: Some(ref t), .. } if t.rows == vec![vec![".".to_string()]]));
    }

    #[test]
    fn decode_errors() {
        assert!(read_response(&mut "WHAT\n".as_bytes()).is_err());
        assert!(read_response(&mut "OK 1\na\n1\n".as_bytes()).is_err());
        assert!(read_response(&mut "OK 1\na\n1\nx\n".as_bytes()).is_err());
        assert!(read_response(&mut "".as_bytes()).is_err());
    }

    #[test]
    fn table_rendering() {
        let t = ResultTable {
            columns: vec!["id".into(), "name".into()],
            rows: vec![
                vec!["1".into(), "alice".into()],
                vec!["100".into(), "bo".into()],
            ],
        };
        assert_eq!(
            render_reply(&Reply::Ok {
                count: 2,
                table: Some(t)
            }),
            "id  | name\n----+------\n1   | alice\n100 | bo\n2 row(s)\n"
        );
        assert_eq!(
            render_reply(&Reply::Ok {
                count: 1,
                table: None
            }),
            "1 row(s)\n"
        );
        assert_eq!(render_reply(&Reply::Err("x".into())), "error: x\n");
    }

    #[test]
    fn unreachable_server() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let mut out = Vec::new();
        assert_eq!(repl(&addr, "".as_bytes(), &mut out, false), 1);
        assert!(String::from_utf8(out).unwrap().starts_with("error: cannot connect"));
    }
}
