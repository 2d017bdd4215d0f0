//! Transaction ids plus commit/abort over the buffer pool and lock table.
//!
//! Commit writes every dirty page in the pool, then drops the committing
//! transaction's pins and locks. Abort drops pins and locks only; nothing
//! is undone.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::buffer::{BufferError, BufferPool};
use crate::locks::LockTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Aborted { reason: String },
}

#[derive(Debug)]
pub struct Transaction {
    id: TxnId,
    state: TxnState,
}

impl Transaction {
    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn state(&self) -> &TxnState {
        &self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == TxnState::Active
    }
}

#[derive(Debug, Error)]
pub enum TxnError {
    #[error("transaction {0} is not active")]
    NotActive(TxnId),
    #[error(transparent)]
    Flush(#[from] BufferError),
}

#[derive(Debug)]
pub struct TransactionManager {
    next_id: AtomicU64,
    pool: Arc<BufferPool>,
    locks: Arc<LockTable>,
}

impl TransactionManager {
    pub fn new(pool: Arc<BufferPool>, locks: Arc<LockTable>) -> Self {
        TransactionManager {
            next_id: AtomicU64::new(0),
            pool,
            locks,
        }
    }

    /// Ids start at 0 and go up by one per call, across all sessions.
    pub fn begin(&self) -> Transaction {
        let id = TxnId(self.next_id.fetch_add(1, Ordering::SeqCst));
        Transaction {
            id,
            state: TxnState::Active,
        }
    }

    /// Flushes the pool, then releases the transaction's pins and locks.
    /// If the flush fails the transaction is aborted with that error.
    pub fn commit(&self, txn: &mut Transaction) -> Result<(), TxnError> {
        if !txn.is_active() {
            return Err(TxnError::NotActive(txn.id));
        }
        if let Err(e) = self.pool.flush_all() {
            self.abort(txn, &e.to_string());
            return Err(e.into());
        }
        self.pool.release_pins(txn.id);
        self.locks.release_all(txn.id);
        txn.state = TxnState::Committed;
        Ok(())
    }

    /// Releases pins and locks. A no-op for a finished transaction.
    pub fn abort(&self, txn: &mut Transaction, reason: &str) {
        if !txn.is_active() {
            return;
        }
        log::debug!("aborting txn {}: {reason}", txn.id);
        self.pool.release_pins(txn.id);
        self.locks.release_all(txn.id);
        txn.state = TxnState::Aborted {
            reason: reason.to_string(),
        };
    }
}
