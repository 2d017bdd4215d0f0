//! Wires storage, buffer pool, catalog, lock table and executor together
//! and runs statements as single-statement transactions.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::buffer::{BufferPool, DEFAULT_POLL_INTERVAL, DEFAULT_POOL_SIZE, DEFAULT_WAIT_TIMEOUT};
use crate::catalog::{Catalog, CatalogError};
use crate::engine::{ExecError, ExecutionOutcome, Executor, JoinImpl, LockPolicy};
use crate::locks::LockTable;
use crate::parser::{self, ParseError, Statement};
use crate::storage::{FileManager, StorageError, DEFAULT_BLOCK_SIZE};
use crate::txn::{Transaction, TransactionManager, TxnError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("startup error: {0}")]
    Startup(String),
}

#[derive(Debug, Clone)]
pub struct DbConfig {
    pub data_dir: PathBuf,
    pub block_size: usize,
    pub pool_size: usize,
    /// Re-check interval for blocked pins and lock requests.
    pub poll_interval: Duration,
    /// How long a blocked pin or lock request waits before aborting.
    pub wait_timeout: Duration,
    pub lock_policy: LockPolicy,
    pub join_impl: JoinImpl,
}

impl DbConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        DbConfig {
            data_dir: data_dir.into(),
            block_size: DEFAULT_BLOCK_SIZE,
            pool_size: DEFAULT_POOL_SIZE,
            poll_interval: DEFAULT_POLL_INTERVAL,
            wait_timeout: DEFAULT_WAIT_TIMEOUT,
            lock_policy: LockPolicy::default(),
            join_impl: JoinImpl::default(),
        }
    }
}

pub struct Database {
    config: DbConfig,
    storage: Arc<FileManager>,
    pool: Arc<BufferPool>,
    catalog: Arc<Catalog>,
    locks: Arc<LockTable>,
    txns: TransactionManager,
    executor: Executor,
}

impl Database {
    /// Opens the data directory, creating it if needed. Fails if the
    /// catalog and the set of table files disagree.
    pub fn open(config: DbConfig) -> Result<Self, Error> {
        if config.pool_size == 0 {
            return Err(Error::Startup("pool size must be at least 1".into()));
        }
        let storage = Arc::new(FileManager::new(&config.data_dir, config.block_size)?);
        let catalog = Arc::new(Catalog::open(&config.data_dir)?);

        let files = storage.table_files()?;
        let tables = catalog.list_tables();
        if files != tables {
            return Err(Error::Startup(format!(
                "catalog lists tables {tables:?} but data directory holds files for {files:?}"
            )));
        }

        let pool = Arc::new(BufferPool::new(
            storage.clone(),
            config.pool_size,
            config.poll_interval,
            config.wait_timeout,
        ));
        let locks = Arc::new(LockTable::new(config.poll_interval, config.wait_timeout));
        let txns = TransactionManager::new(pool.clone(), locks.clone());
        let executor = Executor::new(
            storage.clone(),
            pool.clone(),
            catalog.clone(),
            locks.clone(),
            config.lock_policy,
            config.join_impl,
        );
        Ok(Database {
            config,
            storage,
            pool,
            catalog,
            locks,
            txns,
            executor,
        })
    }

    pub fn config(&self) -> &DbConfig {
        &self.config
    }

    pub fn storage(&self) -> &Arc<FileManager> {
        &self.storage
    }

    pub fn pool(&self) -> &Arc<BufferPool> {
        &self.pool
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn locks(&self) -> &Arc<LockTable> {
        &self.locks
    }

    pub fn transactions(&self) -> &TransactionManager {
        &self.txns
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    /// Parses and runs one statement in its own transaction: commit on
    /// success, abort (without undo) on any error.
    pub fn execute_sql(&self, sql: &str) -> Result<ExecutionOutcome, Error> {
        let stmt = parser::parse(sql)?;
        self.execute(&stmt)
    }

    pub fn execute(&self, stmt: &Statement) -> Result<ExecutionOutcome, Error> {
        let mut txn = self.txns.begin();
        self.run_in(&mut txn, stmt)
    }

    /// Runs `stmt` inside an already started transaction and finishes it.
    pub fn run_in(&self, txn: &mut Transaction, stmt: &Statement) -> Result<ExecutionOutcome, Error> {
        match self.executor.execute(stmt, txn) {
            Ok(outcome) => {
                self.txns.commit(txn)?;
                Ok(outcome)
            }
            Err(e) => {
                let err = Error::from(e);
                self.txns.abort(txn, &err.to_string());
                Err(err)
            }
        }
    }

    /// Writes back anything still dirty.
    pub fn close(&self) -> Result<(), Error> {
        self.pool
            .flush_all()
            .map_err(|e| Error::Txn(TxnError::Flush(e)))
    }
}
