//! Fixed-size buffer pool.
//!
//! Every page access goes through [`BufferPool::pin`]. A pin either reuses
//! the buffer already holding the block, claims the lowest-index free
//! buffer (writing back its old page if dirty), or waits on a condition
//! variable, re-checking every `poll_interval`, until a buffer frees up or
//! `wait_timeout` passes and the caller is aborted.
//!
//! Pins are tracked per transaction so a commit or abort can drop exactly
//! the pins its transaction still holds.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::storage::{BlockId, FileManager, Page, StorageError};
use crate::txn::TxnId;

pub const DEFAULT_POOL_SIZE: usize = 8;
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(1);
pub const DEFAULT_WAIT_TIMEOUT: Duration = Duration::from_secs(10);

pub const NOT_ENOUGH_SPACE: &str = "Buffer Manager Abort: not enough space";

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("Buffer Manager Abort: not enough space")]
    NotEnoughSpace,
    #[error("buffer usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug)]
struct Buffer {
    page: Page,
    block: Option<BlockId>,
    pin_count: u32,
    dirty: bool,
    holders: HashMap<TxnId, u32>,
}

impl Buffer {
    fn unlink(&mut self) {
        self.block = None;
        self.pin_count = 0;
        self.dirty = false;
        self.holders.clear();
    }
}

/// Proof that a transaction pinned a block. Only valid until unpinned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferHandle {
    index: usize,
    block: BlockId,
    txn: TxnId,
}

impl BufferHandle {
    pub fn block(&self) -> &BlockId {
        &self.block
    }

    pub fn txn(&self) -> TxnId {
        self.txn
    }
}

#[derive(Debug)]
pub struct BufferPool {
    storage: Arc<FileManager>,
    buffers: Mutex<Vec<Buffer>>,
    freed: Condvar,
    poll_interval: Duration,
    wait_timeout: Duration,
}

impl BufferPool {
    pub fn new(
        storage: Arc<FileManager>,
        size: usize,
        poll_interval: Duration,
        wait_timeout: Duration,
    ) -> Self {
        let block_size = storage.block_size();
        let buffers = (0..size)
            .map(|_| Buffer {
                page: Page::new(block_size),
                block: None,
                pin_count: 0,
                dirty: false,
                holders: HashMap::new(),
            })
            .collect();
        BufferPool {
            storage,
            buffers: Mutex::new(buffers),
            freed: Condvar::new(),
            poll_interval,
            wait_timeout,
        }
    }

    pub fn capacity(&self) -> usize {
        self.buffers.lock().unwrap().len()
    }

    pub fn storage(&self) -> &Arc<FileManager> {
        &self.storage
    }

    pub fn pin(&self, txn: TxnId, block: &BlockId) -> Result<BufferHandle, BufferError> {
        let deadline = Instant::now() + self.wait_timeout;
        let mut buffers = self.buffers.lock().unwrap();
        loop {
            if let Some(index) = buffers.iter().position(|b| b.block.as_ref() == Some(block)) {
                let buf = &mut buffers[index];
                buf.pin_count += 1;
                *buf.holders.entry(txn).or_insert(0) += 1;
                return Ok(self.handle(index, block, txn));
            }
            if let Some(index) = buffers.iter().position(|b| b.pin_count == 0) {
                let buf = &mut buffers[index];
                if buf.dirty {
                    let old = buf.block.as_ref().expect("dirty buffer is linked");
                    self.storage.write_block(old, &buf.page)?;
                    buf.dirty = false;
                }
                buf.unlink();
                buf.page = self.storage.read_block(block)?;
                buf.block = Some(block.clone());
                buf.pin_count = 1;
                buf.holders.insert(txn, 1);
                return Ok(self.handle(index, block, txn));
            }
            let now = Instant::now();
            if now >= deadline {
                log::debug!("txn {txn} gave up pinning {block}");
                return Err(BufferError::NotEnoughSpace);
            }
            let wait = self.poll_interval.min(deadline - now);
            buffers = self.freed.wait_timeout(buffers, wait).unwrap().0;
        }
    }

    fn handle(&self, index: usize, block: &BlockId, txn: TxnId) -> BufferHandle {
        BufferHandle {
            index,
            block: block.clone(),
            txn,
        }
    }

    fn checked<'a>(
        &self,
        buffers: &'a mut MutexGuard<'_, Vec<Buffer>>,
        handle: &BufferHandle,
    ) -> Result<&'a mut Buffer, BufferError> {
        let buf = &mut buffers[handle.index];
        if buf.block.as_ref() != Some(&handle.block)
            || buf.holders.get(&handle.txn).copied().unwrap_or(0) == 0
        {
            return Err(BufferError::Usage(format!(
                "{} is not pinned by txn {}",
                handle.block, handle.txn
            )));
        }
        Ok(buf)
    }

    pub fn unpin(&self, handle: &BufferHandle) -> Result<(), BufferError> {
        let mut buffers = self.buffers.lock().unwrap();
        let buf = self.checked(&mut buffers, handle)?;
        let held = buf.holders.get_mut(&handle.txn).unwrap();
        *held -= 1;
        if *held == 0 {
            buf.holders.remove(&handle.txn);
        }
        buf.pin_count -= 1;
        if buf.pin_count == 0 {
            self.freed.notify_all();
        }
        Ok(())
    }

    pub fn mark_dirty(&self, handle: &BufferHandle) -> Result<(), BufferError> {
        let mut buffers = self.buffers.lock().unwrap();
        self.checked(&mut buffers, handle)?.dirty = true;
        Ok(())
    }

    pub fn with_page<R>(
        &self,
        handle: &BufferHandle,
        f: impl FnOnce(&Page) -> R,
    ) -> Result<R, BufferError> {
        let mut buffers = self.buffers.lock().unwrap();
        Ok(f(&self.checked(&mut buffers, handle)?.page))
    }

    /// Mutable page access. Callers must also [`mark_dirty`](Self::mark_dirty)
    /// for the change to reach disk.
    pub fn with_page_mut<R>(
        &self,
        handle: &BufferHandle,
        f: impl FnOnce(&mut Page) -> R,
    ) -> Result<R, BufferError> {
        let mut buffers = self.buffers.lock().unwrap();
        Ok(f(&mut self.checked(&mut buffers, handle)?.page))
    }

    /// Writes every dirty page back to its block and clears the dirty flags.
    /// Pins are left alone; see [`release_pins`](Self::release_pins).
    pub fn flush_all(&self) -> Result<(), BufferError> {
        let mut buffers = self.buffers.lock().unwrap();
        for buf in buffers.iter_mut().filter(|b| b.dirty) {
            let block = buf.block.as_ref().expect("dirty buffer is linked");
            self.storage.write_block(block, &buf.page)?;
            buf.dirty = false;
        }
        Ok(())
    }

    /// Drops every pin `txn` still holds.
    pub fn release_pins(&self, txn: TxnId) {
        let mut buffers = self.buffers.lock().unwrap();
        let mut freed = false;
        for buf in buffers.iter_mut() {
            if let Some(n) = buf.holders.remove(&txn) {
                buf.pin_count -= n;
                freed |= buf.pin_count == 0;
            }
        }
        if freed {
            self.freed.notify_all();
        }
    }

    /// Forgets every buffer linked to `table` without writing it back.
    /// Used when the table's file is deleted.
    pub fn discard_table(&self, table: &str) {
        let mut buffers = self.buffers.lock().unwrap();
        for buf in buffers.iter_mut() {
            if buf.block.as_ref().is_some_and(|b| b.table == table) {
                buf.unlink();
            }
        }
        self.freed.notify_all();
    }

    pub fn pin_count(&self, block: &BlockId) -> Option<u32> {
        let buffers = self.buffers.lock().unwrap();
        buffers
            .iter()
            .find(|b| b.block.as_ref() == Some(block))
            .map(|b| b.pin_count)
    }

    pub fn is_dirty(&self, block: &BlockId) -> Option<bool> {
        let buffers = self.buffers.lock().unwrap();
        buffers
            .iter()
            .find(|b| b.block.as_ref() == Some(block))
            .map(|b| b.dirty)
    }

    pub fn total_pins(&self) -> u32 {
        self.buffers.lock().unwrap().iter().map(|b| b.pin_count).sum()
    }

    pub fn pins_held_by(&self, txn: TxnId) -> u32 {
        self.buffers
            .lock()
            .unwrap()
            .iter()
            .filter_map(|b| b.holders.get(&txn))
            .sum()
    }

    /// Block linked to each buffer, by buffer index.
    pub fn linked_blocks(&self) -> Vec<Option<BlockId>> {
        self.buffers
            .lock()
            .unwrap()
            .iter()
            .map(|b| b.block.clone())
            .collect()
    }

    pub fn buffer_index(&self, handle: &BufferHandle) -> usize {
        handle.index
    }
}
