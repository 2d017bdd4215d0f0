//! In-memory table metadata (table name to schema), mirrored to a small text
//! file so table files stay decodable across restarts.
//!
//! File format, one newline-terminated line per table:
//!
//! ```text
//! <name>|<field>:<INT|VARCHAR>|<field>:<INT|VARCHAR>...
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use crate::storage::VARCHAR_WIDTH;

pub const CATALOG_FILE: &str = "catalog.edb";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("table already exists: {0}")]
    AlreadyExists(String),
    #[error("no such table: {0}")]
    NoSuchTable(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("corrupt catalog file line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("catalog i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    Int,
    Varchar,
}

impl FieldType {
    /// On-disk width of a value of this type.
    pub fn width(self) -> usize {
        match self {
            FieldType::Int => 4,
            FieldType::Varchar => VARCHAR_WIDTH,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            FieldType::Int => "INT",
            FieldType::Varchar => "VARCHAR",
        }
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub ty: FieldType,
}

/// Table layout: a name plus an ordered list of typed fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub table_name: String,
    pub fields: Vec<Field>,
}

impl Schema {
    /// Builds a schema, checking identifiers, arity and field-name uniqueness.
    pub fn new(
        table_name: impl Into<String>,
        fields: impl IntoIterator<Item = (String, FieldType)>,
    ) -> Result<Self, CatalogError> {
        let table_name = table_name.into();
        if !is_identifier(&table_name) {
            return Err(CatalogError::InvalidSchema(format!(
                "bad table name {table_name:?}"
            )));
        }
        let fields: Vec<Field> = fields
            .into_iter()
            .map(|(name, ty)| Field { name, ty })
            .collect();
        if fields.is_empty() {
            return Err(CatalogError::InvalidSchema(
                "a table needs at least one field".into(),
            ));
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !is_identifier(&f.name) {
                return Err(CatalogError::InvalidSchema(format!(
                    "bad field name {:?}",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(CatalogError::InvalidSchema(format!(
                    "duplicate field {}",
                    f.name
                )));
            }
        }
        Ok(Schema { table_name, fields })
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    fn to_line(&self) -> String {
        let mut line = self.table_name.clone();
        for f in &self.fields {
            line.push('|');
            line.push_str(&f.name);
            line.push(':');
            line.push_str(f.ty.keyword());
        }
        line
    }

    fn from_line(line: &str, lineno: usize) -> Result<Self, CatalogError> {
        let corrupt = |reason: String| CatalogError::Corrupt {
            line: lineno,
            reason,
        };
        let mut parts = line.split('|');
        let name = parts.next().unwrap_or_default();
        let mut fields = Vec::new();
        for part in parts {
            let (fname, ty) = part
                .split_once(':')
                .ok_or_else(|| corrupt(format!("field entry {part:?} lacks a type")))?;
            let ty = match ty {
                "INT" => FieldType::Int,
                "VARCHAR" => FieldType::Varchar,
                other => return Err(corrupt(format!("unknown type {other:?}"))),
            };
            fields.push((fname.to_string(), ty));
        }
        Schema::new(name, fields).map_err(|e| corrupt(e.to_string()))
    }
}

/// Letters, digits and underscores, not starting with a digit.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// The executor's metadata store.
///
/// Every mutation rewrites the catalog file (temp file + rename) while the
/// write lock is held, so the file always matches some prefix of the
/// mutation sequence.
#[derive(Debug)]
pub struct Catalog {
    path: PathBuf,
    tables: RwLock<BTreeMap<String, Schema>>,
}

impl Catalog {
    /// Opens (or creates) the catalog stored in `data_dir`.
    pub fn open(data_dir: &Path) -> Result<Self, CatalogError> {
        let path = data_dir.join(CATALOG_FILE);
        let mut tables = BTreeMap::new();
        match fs::read_to_string(&path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.is_empty() {
                        continue;
                    }
                    let schema = Schema::from_line(line, i + 1)?;
                    if tables.contains_key(&schema.table_name) {
                        return Err(CatalogError::Corrupt {
                            line: i + 1,
                            reason: format!("table {} listed twice", schema.table_name),
                        });
                    }
                    tables.insert(schema.table_name.clone(), schema);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Catalog {
            path,
            tables: RwLock::new(tables),
        })
    }

    pub fn register_table(&self, schema: Schema) -> Result<(), CatalogError> {
        let mut tables = self.tables.write().unwrap();
        if tables.contains_key(&schema.table_name) {
            return Err(CatalogError::AlreadyExists(schema.table_name));
        }
        let name = schema.table_name.clone();
        tables.insert(name.clone(), schema);
        if let Err(e) = self.persist(&tables) {
            tables.remove(&name);
            return Err(e);
        }
        Ok(())
    }

    pub fn unregister_table(&self, name: &str) -> Result<(), CatalogError> {
        let mut tables = self.tables.write().unwrap();
        let removed = tables
            .remove(name)
            .ok_or_else(|| CatalogError::NoSuchTable(name.to_string()))?;
        if let Err(e) = self.persist(&tables) {
            tables.insert(name.to_string(), removed);
            return Err(e);
        }
        Ok(())
    }

    pub fn get_schema(&self, name: &str) -> Result<Schema, CatalogError> {
        self.tables
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| CatalogError::NoSuchTable(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables.read().unwrap().contains_key(name)
    }

    /// Registered table names in sorted order.
    pub fn list_tables(&self) -> Vec<String> {
        self.tables.read().unwrap().keys().cloned().collect()
    }

    fn persist(&self, tables: &BTreeMap<String, Schema>) -> Result<(), CatalogError> {
        let tmp = self.path.with_extension("edb.tmp");
        {
            let mut file = fs::File::create(&tmp)?;
            for schema in tables.values() {
                writeln!(file, "{}", schema.to_line())?;
            }
            file.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}
