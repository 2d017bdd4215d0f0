//! Lock table with three modes.
//!
//! | held \ requested | Global | Shared | Exclusive |
//! |------------------|--------|--------|-----------|
//! | Global           | no     | no     | no        |
//! | Shared           | no     | yes    | no        |
//! | Exclusive        | no     | no     | no        |
//!
//! Global locks cover the whole system, Shared and Exclusive cover one
//! table. A conflicting request waits on a condition variable and is
//! aborted after `wait_timeout`. There is no deadlock detection: the
//! timeout is the only way out of a cycle.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::txn::TxnId;

pub const LOCK_TIMEOUT_MESSAGE: &str = "Lock Manager Abort: lock timeout";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockMode {
    Global,
    Shared,
    Exclusive,
}

/// Only two shared locks can be held together.
pub fn compatible(a: LockMode, b: LockMode) -> bool {
    matches!((a, b), (LockMode::Shared, LockMode::Shared))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LockTarget {
    System,
    Table(String),
}

impl fmt::Display for LockTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockTarget::System => f.write_str("system"),
            LockTarget::Table(t) => write!(f, "table {t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LockError {
    #[error("Lock Manager Abort: lock timeout")]
    Timeout,
    #[error("lock usage error: {0:?} cannot be taken on {1}")]
    BadTarget(LockMode, LockTarget),
}

#[derive(Debug)]
pub struct LockTable {
    held: Mutex<HashMap<LockTarget, Vec<(TxnId, LockMode)>>>,
    released: Condvar,
    poll_interval: Duration,
    wait_timeout: Duration,
}

enum Grant {
    Already,
    New,
    Upgrade,
    Wait,
}

impl LockTable {
    pub fn new(poll_interval: Duration, wait_timeout: Duration) -> Self {
        LockTable {
            held: Mutex::new(HashMap::new()),
            released: Condvar::new(),
            poll_interval,
            wait_timeout,
        }
    }

    pub fn acquire(&self, txn: TxnId, target: LockTarget, mode: LockMode) -> Result<(), LockError> {
        match (&target, mode) {
            (LockTarget::System, LockMode::Global)
            | (LockTarget::Table(_), LockMode::Shared | LockMode::Exclusive) => {}
            _ => return Err(LockError::BadTarget(mode, target)),
        }
        let deadline = Instant::now() + self.wait_timeout;
        let mut held = self.held.lock().unwrap();
        loop {
            match Self::decide(&held, txn, &target, mode) {
                Grant::Already => return Ok(()),
                Grant::New => {
                    held.entry(target).or_default().push((txn, mode));
                    return Ok(());
                }
                Grant::Upgrade => {
                    let entry = held.get_mut(&target).unwrap();
                    for h in entry.iter_mut().filter(|h| h.0 == txn) {
                        h.1 = LockMode::Exclusive;
                    }
                    return Ok(());
                }
                Grant::Wait => {}
            }
            let now = Instant::now();
            if now >= deadline {
                log::debug!("txn {txn} timed out waiting for {mode:?} on {target}");
                return Err(LockError::Timeout);
            }
            let wait = self.poll_interval.min(deadline - now);
            held = self.released.wait_timeout(held, wait).unwrap().0;
        }
    }

    fn decide(
        held: &HashMap<LockTarget, Vec<(TxnId, LockMode)>>,
        txn: TxnId,
        target: &LockTarget,
        mode: LockMode,
    ) -> Grant {
        let holders = held.get(target).map(Vec::as_slice).unwrap_or_default();
        let mine = holders.iter().find(|h| h.0 == txn).map(|h| h.1);
        let others = || holders.iter().filter(|h| h.0 != txn);

        match (mine, mode) {
            (Some(m), _) if m == mode => return Grant::Already,
            (Some(LockMode::Exclusive), LockMode::Shared) => return Grant::Already,
            _ => {}
        }

        let foreign_global = held
            .get(&LockTarget::System)
            .is_some_and(|hs| hs.iter().any(|h| h.0 != txn));
        let blocked = match target {
            LockTarget::System => held
                .values()
                .flatten()
                .any(|h| h.0 != txn),
            LockTarget::Table(_) => {
                foreign_global || others().any(|h| !compatible(h.1, mode))
            }
        };
        if blocked {
            return Grant::Wait;
        }
        if mine == Some(LockMode::Shared) && mode == LockMode::Exclusive {
            Grant::Upgrade
        } else {
            Grant::New
        }
    }

    /// Drops every lock held by `txn` and wakes all waiters.
    pub fn release_all(&self, txn: TxnId) {
        let mut held = self.held.lock().unwrap();
        let mut changed = false;
        held.retain(|_, holders| {
            let before = holders.len();
            holders.retain(|h| h.0 != txn);
            changed |= holders.len() != before;
            !holders.is_empty()
        });
        if changed {
            self.released.notify_all();
        }
    }

    pub fn holders(&self, target: &LockTarget) -> Vec<(TxnId, LockMode)> {
        self.held
            .lock()
            .unwrap()
            .get(target)
            .cloned()
            .unwrap_or_default()
    }

    pub fn held_by(&self, txn: TxnId) -> Vec<(LockTarget, LockMode)> {
        let held = self.held.lock().unwrap();
        held.iter()
            .flat_map(|(target, hs)| {
                hs.iter()
                    .filter(|h| h.0 == txn)
                    .map(move |h| (target.clone(), h.1))
            })
            .collect()
    }

    /// Checks that every target's holders are pairwise compatible and that
    /// a global holder excludes all other transactions.
    pub fn is_consistent(&self) -> bool {
        let held = self.held.lock().unwrap();
        let global: Vec<TxnId> = held
            .get(&LockTarget::System)
            .map(|hs| hs.iter().map(|h| h.0).collect())
            .unwrap_or_default();
        if global.len() > 1 {
            return false;
        }
        for hs in held.values() {
            if global.iter().any(|g| hs.iter().any(|h| h.0 != *g)) {
                return false;
            }
            for (i, a) in hs.iter().enumerate() {
                for b in &hs[i + 1..] {
                    if a.0 != b.0 && !compatible(a.1, b.1) {
                        return false;
                    }
                }
            }
        }
        true
    }
}
