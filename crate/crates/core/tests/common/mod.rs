//! Shared test support: an in-process server harness and a naive in-memory
//! model of the database that the real engine is checked against.
//!
//! The model never touches the library's parser or executor. It keeps rows
//! as plain vectors, generates its own operations, renders them to SQL text
//! and computes the expected response by brute force.

#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;

use minidb::client::{Reply, ResultTable};
use minidb::server::{Server, ShutdownHandle};
use minidb::{Database, DbConfig, JoinImpl, LockPolicy};

// ---------------------------------------------------------------- server

pub struct TestServer {
    pub addr: SocketAddr,
    pub db: Arc<Database>,
    shutdown: ShutdownHandle,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(config: DbConfig) -> Self {
        let db = Arc::new(Database::open(config).expect("open database"));
        let server = Server::bind("127.0.0.1:0", db.clone()).expect("bind");
        let addr = server.local_addr().unwrap();
        let shutdown = server.shutdown_handle();
        let thread = std::thread::spawn(move || server.run().expect("server run"));
        TestServer {
            addr,
            db,
            shutdown,
            thread: Some(thread),
        }
    }

    pub fn addr(&self) -> String {
        self.addr.to_string()
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.shutdown.shutdown();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn config(dir: &Path) -> DbConfig {
    let mut c = DbConfig::new(dir);
    c.poll_interval = Duration::from_millis(1);
    c.wait_timeout = Duration::from_secs(2);
    c
}

pub fn config_with(dir: &Path, policy: LockPolicy, join: JoinImpl) -> DbConfig {
    let mut c = config(dir);
    c.lock_policy = policy;
    c.join_impl = join;
    c
}

// ---------------------------------------------------------------- model

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Val {
    I(i32),
    S(String),
}

impl Val {
    pub fn sql(&self) -> String {
        match self {
            Val::I(n) => n.to_string(),
            Val::S(s) => format!("\"{s}\""),
        }
    }

    pub fn plain(&self) -> String {
        match self {
            Val::I(n) => n.to_string(),
            Val::S(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Col {
    pub name: String,
    pub int: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Table {
    pub name: String,
    pub cols: Vec<Col>,
    pub rows: Vec<Vec<Val>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Gt,
}

impl Cmp {
    fn sym(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Ne => "<>",
            Cmp::Lt => "<",
            Cmp::Gt => ">",
        }
    }

    fn test(self, a: &Val, b: &Val) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rhs {
    Const(Val),
    Col(usize),
}

/// `col <op> rhs` over one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub col: usize,
    pub op: Cmp,
    pub rhs: Rhs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Insert {
        table: String,
        vals: Vec<Val>,
    },
    Update {
        table: String,
        col: usize,
        val: Val,
        conds: Vec<Cond>,
    },
    Select {
        table: String,
        cols: Option<Vec<usize>>,
        conds: Vec<Cond>,
    },
    /// Equi-join on `keys` (column of a, column of b) plus filters on `a`.
    Join {
        a: String,
        b: String,
        keys: Vec<(usize, usize)>,
        filter_a: Vec<Cond>,
    },
}

impl Op {
    pub fn is_read(&self) -> bool {
        matches!(self, Op::Select { .. } | Op::Join { .. })
    }
}

/// What the server should answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Count(u64),
    Rows {
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
        ordered: bool,
    },
}

impl Expect {
    /// Compares against a decoded reply. Unordered results compare as
    /// multisets.
    pub fn matches(&self, reply: &Reply) -> bool {
        match (self, reply) {
            (Expect::Count(n), Reply::Ok { count, table: None }) => n == count,
            (
                Expect::Rows {
                    columns,
                    rows,
                    ordered,
                },
                Reply::Ok {
                    count,
                    table: Some(ResultTable { columns: c, rows: r }),
                },
            ) => {
                if columns != c || *count as usize != rows.len() {
                    return false;
                }
                if *ordered {
                    rows == r
                } else {
                    let mut x = rows.clone();
                    let mut y = r.clone();
                    x.sort();
                    y.sort();
                    x == y
                }
            }
            _ => false,
        }
    }
}

fn where_sql(table: &Table, conds: &[Cond], qualify: bool) -> Vec<String> {
    let name = |i: usize| {
        if qualify {
            format!("{}.{}", table.name, table.cols[i].name)
        } else {
            table.cols[i].name.clone()
        }
    };
    conds
        .iter()
        .map(|c| {
            let rhs = match &c.rhs {
                Rhs::Const(v) => v.sql(),
                Rhs::Col(j) => name(*j),
            };
            format!("{} {} {}", name(c.col), c.op.sym(), rhs)
        })
        .collect()
}

fn holds(conds: &[Cond], row: &[Val]) -> bool {
    conds.iter().all(|c| {
        let rhs = match &c.rhs {
            Rhs::Const(v) => v,
            Rhs::Col(j) => &row[*j],
        };
        c.op.test(&row[c.col], rhs)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Model {
    pub tables: BTreeMap<String, Table>,
}

impl Model {
    pub fn create(&mut self, name: &str, cols: Vec<Col>) -> String {
        let fields: Vec<String> = cols
            .iter()
            .map(|c| format!("{} {}", c.name, if c.int { "INT" } else { "VARCHAR" }))
            .collect();
        self.tables.insert(
            name.to_string(),
            Table {
                name: name.to_string(),
                cols,
                rows: Vec::new(),
            },
        );
        format!("CREATE TABLE {name} ({})", fields.join(", "))
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    pub fn sql(&self, op: &Op) -> String {
        match op {
            Op::Insert { table, vals } => {
                let v: Vec<String> = vals.iter().map(Val::sql).collect();
                format!("INSERT INTO {table} VALUES ({})", v.join(", "))
            }
            Op::Update {
                table,
                col,
                val,
                conds,
            } => {
                let t = &self.tables[table];
                let mut s = format!("UPDATE {table} SET {} = {}", t.cols[*col].name, val.sql());
                let w = where_sql(t, conds, false);
                if !w.is_empty() {
                    s.push_str(" WHERE ");
                    s.push_str(&w.join(" AND "));
                }
                s
            }
            Op::Select { table, cols, conds } => {
                let t = &self.tables[table];
                let proj = match cols {
                    None => "*".to_string(),
                    Some(cs) => cs
                        .iter()
                        .map(|&i| t.cols[i].name.clone())
                        .collect::<Vec<_>>()
                        .join(", "),
                };
                let mut s = format!("SELECT {proj} FROM {table}");
                let w = where_sql(t, conds, false);
                if !w.is_empty() {
                    s.push_str(" WHERE ");
                    s.push_str(&w.join(" AND "));
                }
                s
            }
            Op::Join {
                a,
                b,
                keys,
                filter_a,
            } => {
                let (ta, tb) = (&self.tables[a], &self.tables[b]);
                let mut w: Vec<String> = keys
                    .iter()
                    .map(|&(x, y)| format!("{a}.{} = {b}.{}", ta.cols[x].name, tb.cols[y].name))
                    .collect();
                w.extend(where_sql(ta, filter_a, true));
                let mut s = format!("SELECT * FROM {a}, {b}");
                if !w.is_empty() {
                    s.push_str(" WHERE ");
                    s.push_str(&w.join(" AND "));
                }
                s
            }
        }
    }

    /// Applies `op` and returns the expected answer.
    pub fn apply(&mut self, op: &Op) -> Expect {
        match op {
            Op::Insert { table, vals } => {
                self.tables.get_mut(table).unwrap().rows.push(vals.clone());
                Expect::Count(1)
            }
            Op::Update {
                table,
                col,
                val,
                conds,
            } => {
                let t = self.tables.get_mut(table).unwrap();
                let mut n = 0;
                for row in &mut t.rows {
                    if holds(conds, row) {
                        row[*col] = val.clone();
                        n += 1;
                    }
                }
                Expect::Count(n)
            }
            Op::Select { table, cols, conds } => {
                let t = &self.tables[table];
                let idx: Vec<usize> = match cols {
                    None => (0..t.cols.len()).collect(),
                    Some(c) => c.clone(),
                };
                Expect::Rows {
                    columns: idx.iter().map(|&i| t.cols[i].name.clone()).collect(),
                    rows: t
                        .rows
                        .iter()
                        .filter(|r| holds(conds, r))
                        .map(|r| idx.iter().map(|&i| r[i].plain()).collect())
                        .collect(),
                    ordered: true,
                }
            }
            Op::Join {
                a,
                b,
                keys,
                filter_a,
            } => {
                let (ta, tb) = (&self.tables[a], &self.tables[b]);
                let mut columns: Vec<String> =
                    ta.cols.iter().map(|c| format!("{a}.{}", c.name)).collect();
                columns.extend(tb.cols.iter().map(|c| format!("{b}.{}", c.name)));
                let mut rows = Vec::new();
                for ra in &ta.rows {
                    if !holds(filter_a, ra) {
                        continue;
                    }
                    for rb in &tb.rows {
                        if keys.iter().all(|&(x, y)| ra[x] == rb[y]) {
                            rows.push(ra.iter().chain(rb).map(Val::plain).collect());
                        }
                    }
                }
                Expect::Rows {
                    columns,
                    rows,
                    ordered: false,
                }
            }
        }
    }
}

// ---------------------------------------------------------------- generators

const LETTERS: &[u8] = b"abcxyz";

pub fn random_string(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(0..=4);
    (0..len)
        .map(|_| *LETTERS.choose(rng).unwrap() as char)
        .collect()
}

/// Values drawn from a small domain so that predicates hit and miss.
pub fn random_val(rng: &mut impl Rng, int: bool) -> Val {
    if int {
        if rng.gen_bool(0.1) {
            Val::I(rng.gen())
        } else {
            Val::I(rng.gen_range(-8..8))
        }
    } else {
        Val::S(random_string(rng))
    }
}

pub fn random_cols(rng: &mut impl Rng, prefix: &str) -> Vec<Col> {
    let n = rng.gen_range(1..=4);
    (0..n)
        .map(|i| Col {
            name: format!("{prefix}{i}"),
            int: rng.gen_bool(0.6),
        })
        .collect()
}

pub fn random_row(rng: &mut impl Rng, cols: &[Col]) -> Vec<Val> {
    cols.iter().map(|c| random_val(rng, c.int)).collect()
}

pub fn random_conds(rng: &mut impl Rng, cols: &[Col]) -> Vec<Cond> {
    let n = rng.gen_range(0..=2);
    (0..n)
        .map(|_| {
            let col = rng.gen_range(0..cols.len());
            let op = *[Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Gt].choose(rng).unwrap();
            let same_type: Vec<usize> = (0..cols.len())
                .filter(|&j| cols[j].int == cols[col].int)
                .collect();
            let rhs = if rng.gen_bool(0.25) {
                Rhs::Col(*same_type.choose(rng).unwrap())
            } else {
                Rhs::Const(random_val(rng, cols[col].int))
            };
            Cond { col, op, rhs }
        })
        .collect()
}

pub fn random_update(rng: &mut impl Rng, t: &Table) -> Op {
    let col = rng.gen_range(0..t.cols.len());
    Op::Update {
        table: t.name.clone(),
        col,
        val: random_val(rng, t.cols[col].int),
        conds: random_conds(rng, &t.cols),
    }
}

pub fn random_select(rng: &mut impl Rng, t: &Table) -> Op {
    let cols = if rng.gen_bool(0.5) {
        None
    } else {
        let k = rng.gen_range(1..=t.cols.len());
        Some((0..k).map(|_| rng.gen_range(0..t.cols.len())).collect())
    };
    Op::Select {
        table: t.name.clone(),
        cols,
        conds: random_conds(rng, &t.cols),
    }
}

/// A join on one or two same-typed column pairs. Returns `None` when the
/// schemas share no column type.
pub fn random_join(rng: &mut impl Rng, a: &Table, b: &Table) -> Option<Op> {
    let pairs: Vec<(usize, usize)> = (0..a.cols.len())
        .flat_map(|x| (0..b.cols.len()).map(move |y| (x, y)))
        .filter(|&(x, y)| a.cols[x].int == b.cols[y].int)
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let k = rng.gen_range(1..=2.min(pairs.len()));
    let keys = pairs.choose_multiple(rng, k).copied().collect();
    let filter_a = if rng.gen_bool(0.3) {
        random_conds(rng, &a.cols)
    } else {
        Vec::new()
    };
    Some(Op::Join {
        a: a.name.clone(),
        b: b.name.clone(),
        keys,
        filter_a,
    })
}
