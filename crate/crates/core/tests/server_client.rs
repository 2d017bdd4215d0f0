mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use common::*;
use minidb::bench::{self, Status, WorkloadParams};
use minidb::client::{read_response, Client, Reply};
use minidb::locks::{LockMode, LockTarget};
use minidb::{JoinImpl, LockPolicy};

fn client_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_minidb-client"))
}

#[test]
fn wire_format() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(config(dir.path()));
    let mut c = Client::connect(&server.addr()).unwrap();
    let raw = |c: &mut Client, sql: &str| c.request(sql).unwrap().raw;
    assert_eq!(raw(&mut c, "CREATE TABLE t (a INT, b VARCHAR)"), "OK 0\n.\n");
    assert_eq!(raw(&mut c, "SELECT * FROM t"), "OK 0\na\tb\n.\n");
    assert_eq!(raw(&mut c, "INSERT INTO t VALUES (1, \"x y\");"), "OK 1\n.\n");
    assert_eq!(raw(&mut c, "SELECT b, a FROM t"), "OK 1\nb\ta\nx y\t1\n.\n");
    let bad = raw(&mut c, "SELECT FROM");
    assert!(bad.starts_with("ERR invalid query: ") && bad.ends_with('\n'));
    assert_eq!(bad.matches('\n').count(), 1);
    // the connection is still usable
    assert_eq!(raw(&mut c, "UPDATE t SET a = 2"), "OK 1\n.\n");
}

#[test]
fn pipelined_requests_are_answered_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(config(dir.path()));
    let mut stream = TcpStream::connect(server.addr).unwrap();
    let mut batch = String::from("CREATE TABLE t (a INT)\n");
    for i in 0..50 {
        batch.push_str(&format!("INSERT INTO t VALUES ({i})\nSELECT a FROM t WHERE a = {i}\n"));
    }
    stream.write_all(batch.as_bytes()).unwrap();
    let mut reader = BufReader::new(stream);
    assert_eq!(read_response(&mut reader).unwrap().raw, "OK 0\n.\n");
    for i in 0..50 {
        assert_eq!(read_response(&mut reader).unwrap().raw, "OK 1\n.\n");
        assert_eq!(read_response(&mut reader).unwrap().raw, format!("OK 1\na\n{i}\n.\n"));
    }
}

#[test]
fn readers_share_a_table_in_table_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_with(dir.path(), LockPolicy::Table, JoinImpl::Nested);
    cfg.wait_timeout = Duration::from_millis(200);
    let server = TestServer::start(cfg);
    let db = server.db.clone();
    db.execute_sql("CREATE TABLE t (a INT)").unwrap();
    db.execute_sql("INSERT INTO t VALUES (1)").unwrap();

    // Another session is in the middle of reading t.
    let reader = db.transactions().begin();
    db.locks()
        .acquire(reader.id(), LockTarget::Table("t".into()), LockMode::Shared)
        .unwrap();

    let mut a = Client::connect(&server.addr()).unwrap();
    let mut b = Client::connect(&server.addr()).unwrap();
    for c in [&mut a, &mut b] {
        let started = Instant::now();
        assert_eq!(c.request("SELECT * FROM t").unwrap().raw, "OK 1\na\n1\n.\n");
        assert!(started.elapsed() < Duration::from_millis(200));
    }
    let w = a.request("INSERT INTO t VALUES (2)").unwrap();
    assert_eq!(w.raw, "ERR Lock Manager Abort: lock timeout\n");
    db.locks().release_all(reader.id());
    assert_eq!(a.request("INSERT INTO t VALUES (2)").unwrap().raw, "OK 1\n.\n");
}

#[test]
fn client_batch_mode() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(config(dir.path()));
    let scripts = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = scripts.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };

    let ok = write(
        "ok.sql",
        "-- setup\nCREATE TABLE t (a INT)\n\nINSERT INTO t VALUES (1)\nSELECT * FROM t\n",
    );
    let out = client_bin()
        .args(["--server", &server.addr(), "--file"])
        .arg(&ok)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "OK 0\n.\nOK 1\n.\nOK 1\na\n1\n.\n"
    );

    let bad = write("bad.sql", "INSERT INTO t VALUES (2)\nSELECT x FROM t\nINSERT INTO t VALUES (3)\n");
    let out = client_bin()
        .args(["--server", &server.addr(), "--file"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "OK 1\n.\nERR unknown column x\n"
    );

    let out = client_bin()
        .args(["--server", &server.addr(), "--keep-going", "--file"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 5);

    let empty = write("empty.sql", "");
    let out = client_bin()
        .args(["--server", &server.addr(), "--file"])
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

fn repl(addr: &str, input: &str, raw: bool) -> (Option<i32>, String) {
    let mut cmd = client_bin();
    cmd.args(["--server", addr]);
    if raw {
        cmd.arg("--raw");
    }
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    (out.status.code(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn client_interactive_mode() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(config(dir.path()));
    let db = server.db.clone();
    db.execute_sql("CREATE TABLE t (id INT, name VARCHAR)").unwrap();
    db.execute_sql("INSERT INTO t VALUES (1, \"alice\")").unwrap();
    db.execute_sql("INSERT INTO t VALUES (100, \"bo\")").unwrap();

    let (code, out) = repl(&server.addr(), "SELECT * FROM t\n\\q\nSELECT * FROM t\n", false);
    assert_eq!(code, Some(0));
    assert_eq!(
        out,
        "minidb> id  | name\n----+------\n1   | alice\n100 | bo\n2 row(s)\nminidb> "
    );

    let (code, out) = repl(&server.addr(), "SELECT name FROM t WHERE id = 1\nSELEC\n", true);
    assert_eq!(code, Some(0));
    assert!(out.starts_with("OK 1\nname\nalice\n.\nERR invalid query: "), "{out}");

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    let (code, out) = repl(&dead, "", false);
    assert_eq!(code, Some(1));
    assert!(out.starts_with("error: cannot connect"), "{out}");
}

#[test]
fn server_binary_shuts_down_cleanly_on_sigint() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_minidb-server"))
        .args(["--listen", "127.0.0.1:0", "--lock-mode", "table", "--join-impl", "hash", "--data-dir"])
        .arg(dir.path())
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = lines
        .by_ref()
        .map_while(Result::ok)
        .find_map(|l| l.split_once("listening on ").map(|(_, a)| a.trim().to_string()))
        .unwrap();
    let mut c = Client::connect(&addr).unwrap();
    assert_eq!(c.request("CREATE TABLE t (a INT)").unwrap().raw, "OK 0\n.\n");
    drop(c);
    // SIGINT triggers the shutdown path
    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let code = child.wait().unwrap();
    assert!(code.success(), "{code:?}");
    assert!(dir.path().join("t.tbl").exists());
    assert!(std::fs::read_to_string(dir.path().join("catalog.edb"))
        .unwrap()
        .contains("t|a:INT"));
}

#[test]
fn bench_cardinality_and_checksums() {
    let nested_dir = tempfile::tempdir().unwrap();
    let hash_dir = tempfile::tempdir().unwrap();
    let nested = TestServer::start(config_with(nested_dir.path(), LockPolicy::Global, JoinImpl::Nested));
    let hash = TestServer::start(config_with(hash_dir.path(), LockPolicy::Global, JoinImpl::Hash));

    let params = WorkloadParams {
        rows_a: 300,
        rows_b: 300,
        match_rate: 1.0,
        repetitions: 5,
    };
    let w = bench::generate_workload("join_300", &params, 42);
    let n = bench::run(&w, &nested.addr(), JoinImpl::Nested).unwrap();
    let h = bench::run(&w, &hash.addr(), JoinImpl::Hash).unwrap();
    assert_eq!(n.status, Status::Ok);
    assert_eq!(h.status, Status::Ok);
    assert_eq!(n.samples_ms.len(), 5);
    assert_eq!(n.rows, 300);
    assert_eq!(n.checksum, h.checksum);
    let report = bench::report(&[n, h]).unwrap();
    assert_eq!(report[0].status, Status::Ok);

    // partial matches: count keys of b present in a, straight from the script
    let params = WorkloadParams {
        rows_a: 80,
        rows_b: 50,
        match_rate: 0.4,
        repetitions: 1,
    };
    let w = bench::generate_workload("partial", &params, 7);
    let keys = |table: &str| -> std::collections::HashSet<String> {
        w.setup
            .iter()
            .filter_map(|s| s.strip_prefix(&format!("INSERT INTO {table} VALUES (")))
            .map(|rest| rest.split(',').next().unwrap().to_string())
            .collect()
    };
    let expected = keys(bench::TABLE_A).intersection(&keys(bench::TABLE_B)).count();
    assert_eq!(expected, 20);
    let f = bench::run(&w, &hash.addr(), JoinImpl::Hash).unwrap();
    assert_eq!(f.rows as usize, expected);

    let mut c = Client::connect(&hash.addr()).unwrap();
    assert!(matches!(
        c.request("SELECT * FROM bench_a WHERE id < 0").unwrap().reply,
        Reply::Ok { count: 0, .. }
    ));
}
