//! Block-addressed table files and the fixed-width record codec.
//!
//! Each table lives in `<data_dir>/<table>.tbl`, a sequence of equally sized
//! blocks. A block starts with a 4-byte little-endian count of occupied
//! record slots, followed by the records back to back, then zero padding.
//! Records never cross a block boundary.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::catalog::{FieldType, Schema};
use crate::parser::Constant;

pub const DEFAULT_BLOCK_SIZE: usize = 4096;
/// Width of every VARCHAR column. Strings are zero padded to this length.
pub const VARCHAR_WIDTH: usize = 20;
/// Bytes reserved at the start of each block for the occupancy count.
pub const HEADER_SIZE: usize = 4;
pub const TABLE_FILE_EXT: &str = "tbl";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("no such table file: {0}")]
    MissingFile(String),
    #[error("table file already exists: {0}")]
    FileExists(String),
    #[error("block out of range: {table} block {block} (table has {count} blocks)")]
    BlockOutOfRange {
        table: String,
        block: u32,
        count: u32,
    },
    #[error("table file {0} has a length that is not a multiple of the block size")]
    Misaligned(String),
    #[error("page has {actual} bytes, expected {expected}")]
    PageSize { expected: usize, actual: usize },
    #[error("storage i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("expected {expected} values, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("type mismatch for column {column}: expected {expected}")]
    Type { column: String, expected: FieldType },
    #[error("string too long for column {column}: {len} bytes, limit {limit}")]
    TooLong {
        column: String,
        len: usize,
        limit: usize,
    },
    #[error("record of {record_size} bytes does not fit in a {block_size}-byte block")]
    TooWide {
        record_size: usize,
        block_size: usize,
    },
    #[error("record has {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("stored string is not valid text")]
    BadText,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockId {
    pub table: String,
    pub number: u32,
}

impl BlockId {
    pub fn new(table: impl Into<String>, number: u32) -> Self {
        BlockId {
            table: table.into(),
            number,
        }
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.table, self.number)
    }
}

/// In-memory image of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    bytes: Box<[u8]>,
}

impl Page {
    pub fn new(block_size: usize) -> Self {
        Page {
            bytes: vec![0; block_size].into_boxed_slice(),
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Page {
            bytes: bytes.into_boxed_slice(),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn occupancy(&self) -> u32 {
        u32::from_le_bytes(self.bytes[..HEADER_SIZE].try_into().unwrap())
    }

    pub fn set_occupancy(&mut self, count: u32) {
        self.bytes[..HEADER_SIZE].copy_from_slice(&count.to_le_bytes());
    }

    pub fn slot(&self, layout: &RecordLayout, slot: usize) -> &[u8] {
        let start = layout.slot_offset(slot);
        &self.bytes[start..start + layout.record_size]
    }

    pub fn slot_mut(&mut self, layout: &RecordLayout, slot: usize) -> &mut [u8] {
        let start = layout.slot_offset(slot);
        &mut self.bytes[start..start + layout.record_size]
    }

    /// Decodes the occupied slots in order.
    pub fn records(&self, layout: &RecordLayout) -> Result<Vec<Vec<Constant>>, RecordError> {
        let used = (self.occupancy() as usize).min(layout.records_per_block);
        (0..used)
            .map(|i| decode_record(layout, self.slot(layout, i)))
            .collect()
    }
}

/// How a schema's records sit inside a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordLayout {
    pub schema: Schema,
    pub record_size: usize,
    pub records_per_block: usize,
    offsets: Vec<usize>,
}

impl RecordLayout {
    pub fn new(schema: Schema, block_size: usize) -> Result<Self, RecordError> {
        let mut offsets = Vec::with_capacity(schema.fields.len());
        let mut record_size = 0;
        for f in &schema.fields {
            offsets.push(record_size);
            record_size += f.ty.width();
        }
        let records_per_block = block_size.saturating_sub(HEADER_SIZE) / record_size;
        if records_per_block == 0 {
            return Err(RecordError::TooWide {
                record_size,
                block_size,
            });
        }
        Ok(RecordLayout {
            schema,
            record_size,
            records_per_block,
            offsets,
        })
    }

    pub fn slot_offset(&self, slot: usize) -> usize {
        HEADER_SIZE + slot * self.record_size
    }

    /// Byte offset of field `index` within a record.
    pub fn field_offset(&self, index: usize) -> usize {
        self.offsets[index]
    }

    /// Checks one value against column `index` without encoding it.
    pub fn check_value(&self, index: usize, value: &Constant) -> Result<(), RecordError> {
        let field = &self.schema.fields[index];
        match (field.ty, value) {
            (FieldType::Int, Constant::Int(_)) => Ok(()),
            (FieldType::Varchar, Constant::Str(s)) if s.len() > VARCHAR_WIDTH => {
                Err(RecordError::TooLong {
                    column: field.name.clone(),
                    len: s.len(),
                    limit: VARCHAR_WIDTH,
                })
            }
            (FieldType::Varchar, Constant::Str(_)) => Ok(()),
            (expected, _) => Err(RecordError::Type {
                column: field.name.clone(),
                expected,
            }),
        }
    }

    /// Writes `value` into the field's bytes of an encoded record.
    pub fn encode_field(
        &self,
        index: usize,
        value: &Constant,
        record: &mut [u8],
    ) -> Result<(), RecordError> {
        self.check_value(index, value)?;
        let start = self.offsets[index];
        let width = self.schema.fields[index].ty.width();
        let dst = &mut record[start..start + width];
        match value {
            Constant::Int(v) => dst.copy_from_slice(&v.to_le_bytes()),
            Constant::Str(s) => {
                dst.fill(0);
                dst[..s.len()].copy_from_slice(s.as_bytes());
            }
        }
        Ok(())
    }
}

/// Fixed-width encoding: INT as 4-byte little-endian, VARCHAR as raw bytes
/// zero padded to [`VARCHAR_WIDTH`].
pub fn encode_record(layout: &RecordLayout, values: &[Constant]) -> Result<Vec<u8>, RecordError> {
    if values.len() != layout.schema.fields.len() {
        return Err(RecordError::Arity {
            expected: layout.schema.fields.len(),
            actual: values.len(),
        });
    }
    let mut out = vec![0; layout.record_size];
    for (i, v) in values.iter().enumerate() {
        layout.encode_field(i, v, &mut out)?;
    }
    Ok(out)
}

pub fn decode_record(layout: &RecordLayout, bytes: &[u8]) -> Result<Vec<Constant>, RecordError> {
    if bytes.len() != layout.record_size {
        return Err(RecordError::Length {
            expected: layout.record_size,
            actual: bytes.len(),
        });
    }
    layout
        .schema
        .fields
        .iter()
        .zip(&layout.offsets)
        .map(|(field, &start)| {
            let raw = &bytes[start..start + field.ty.width()];
            match field.ty {
                FieldType::Int => Ok(Constant::Int(i32::from_le_bytes(raw.try_into().unwrap()))),
                FieldType::Varchar => {
                    let end = raw.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
                    String::from_utf8(raw[..end].to_vec())
                        .map(Constant::Str)
                        .map_err(|_| RecordError::BadText)
                }
            }
        })
        .collect()
}

/// Owns every table file. All reads and writes of one file are serialized
/// by that file's mutex; there is no caching at this layer.
#[derive(Debug)]
pub struct FileManager {
    data_dir: PathBuf,
    block_size: usize,
    open: Mutex<HashMap<String, Arc<Mutex<File>>>>,
}

impl FileManager {
    pub fn new(data_dir: impl Into<PathBuf>, block_size: usize) -> Result<Self, StorageError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir)?;
        Ok(FileManager {
            data_dir,
            block_size,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn table_path(&self, table: &str) -> PathBuf {
        self.data_dir.join(format!("{table}.{TABLE_FILE_EXT}"))
    }

    /// Creates an empty table file.
    pub fn create_table_file(&self, table: &str) -> Result<(), StorageError> {
        let mut open = self.open.lock().unwrap();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(self.table_path(table))
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => StorageError::FileExists(table.to_string()),
                _ => e.into(),
            })?;
        open.insert(table.to_string(), Arc::new(Mutex::new(file)));
        Ok(())
    }

    pub fn table_file_exists(&self, table: &str) -> bool {
        self.table_path(table).is_file()
    }

    /// Table names that have a file in the data directory.
    pub fn table_files(&self) -> Result<Vec<String>, StorageError> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.data_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(TABLE_FILE_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    fn handle(&self, table: &str) -> Result<Arc<Mutex<File>>, StorageError> {
        let mut open = self.open.lock().unwrap();
        if let Some(f) = open.get(table) {
            return Ok(f.clone());
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(self.table_path(table))
            .map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => StorageError::MissingFile(table.to_string()),
                _ => e.into(),
            })?;
        let file = Arc::new(Mutex::new(file));
        open.insert(table.to_string(), file.clone());
        Ok(file)
    }

    fn count_blocks(&self, table: &str, file: &File) -> Result<u32, StorageError> {
        let len = file.metadata()?.len();
        if len % self.block_size as u64 != 0 {
            return Err(StorageError::Misaligned(table.to_string()));
        }
        Ok((len / self.block_size as u64) as u32)
    }

    pub fn block_count(&self, table: &str) -> Result<u32, StorageError> {
        let handle = self.handle(table)?;
        let file = handle.lock().unwrap();
        self.count_blocks(table, &file)
    }

    pub fn read_block(&self, block: &BlockId) -> Result<Page, StorageError> {
        let handle = self.handle(&block.table)?;
        let mut file = handle.lock().unwrap();
        let count = self.count_blocks(&block.table, &file)?;
        if block.number >= count {
            return Err(StorageError::BlockOutOfRange {
                table: block.table.clone(),
                block: block.number,
                count,
            });
        }
        let mut page = Page::new(self.block_size);
        file.seek(SeekFrom::Start(block.number as u64 * self.block_size as u64))?;
        file.read_exact(page.bytes_mut())?;
        Ok(page)
    }

    /// Writes a full page. Writing at `block_count` appends one block;
    /// anything beyond that would leave a hole and is refused.
    pub fn write_block(&self, block: &BlockId, page: &Page) -> Result<(), StorageError> {
        if page.len() != self.block_size {
            return Err(StorageError::PageSize {
                expected: self.block_size,
                actual: page.len(),
            });
        }
        let handle = self.handle(&block.table)?;
        let mut file = handle.lock().unwrap();
        let count = self.count_blocks(&block.table, &file)?;
        if block.number > count {
            return Err(StorageError::BlockOutOfRange {
                table: block.table.clone(),
                block: block.number,
                count,
            });
        }
        file.seek(SeekFrom::Start(block.number as u64 * self.block_size as u64))?;
        file.write_all(page.bytes())?;
        Ok(())
    }

    /// Extends the file by one zero-filled block and returns its id.
    pub fn append_block(&self, table: &str) -> Result<BlockId, StorageError> {
        let handle = self.handle(table)?;
        let mut file = handle.lock().unwrap();
        let count = self.count_blocks(table, &file)?;
        file.seek(SeekFrom::Start(count as u64 * self.block_size as u64))?;
        file.write_all(&vec![0; self.block_size])?;
        Ok(BlockId::new(table, count))
    }

    pub fn delete_table_file(&self, table: &str) -> Result<(), StorageError> {
        let mut open = self.open.lock().unwrap();
        let cached = open.remove(table);
        // hold the file's own lock so no read or write is mid-flight
        let _guard = cached.as_ref().map(|f| f.lock().unwrap());
        fs::remove_file(self.table_path(table)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StorageError::MissingFile(table.to_string()),
            _ => e.into(),
        })
    }
}
