//! A small relational database: six SQL statements over paged binary table
//! files, a fixed-size buffer pool, a lock table, a line-oriented socket
//! server with a terminal client, and a join benchmark runner.

pub mod bench;
pub mod buffer;
pub mod catalog;
pub mod client;
pub mod db;
pub mod engine;
pub mod locks;
pub mod parser;
pub mod server;
pub mod storage;
pub mod txn;

pub use db::{Database, DbConfig, Error};
pub use engine::{ExecutionOutcome, JoinImpl, LockPolicy, ResultSet};
pub use parser::{parse, Constant, Statement};
