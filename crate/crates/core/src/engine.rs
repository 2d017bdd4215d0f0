//! The query executor.
//!
//! Each parsed statement goes to one of six handlers. There are no indexes:
//! every lookup is a full scan of the table file, one block at a time,
//! through the buffer pool. Joins come in two flavours, a nested loop over
//! the cross product and a hash join that must produce the same rows.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::buffer::{BufferError, BufferPool};
use crate::catalog::{Catalog, CatalogError, FieldType, Schema};
use crate::locks::{LockError, LockMode, LockTable, LockTarget};
use crate::parser::{
    CompareOp, Constant, EvalError, Expression, FieldRef, Predicate, Projection, Statement,
};
use crate::storage::{encode_record, BlockId, FileManager, RecordError, RecordLayout, StorageError};
use crate::txn::Transaction;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("{0}")]
    Unsupported(String),
}

/// Which locks a statement takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LockPolicy {
    /// Every statement holds the single system-wide lock.
    #[default]
    Global,
    /// Shared on tables read, exclusive on the table written.
    Table,
}

impl FromStr for LockPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(LockPolicy::Global),
            "table" => Ok(LockPolicy::Table),
            other => Err(format!("unknown lock mode {other:?} (expected global or table)")),
        }
    }
}

impl fmt::Display for LockPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LockPolicy::Global => "global",
            LockPolicy::Table => "table",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JoinImpl {
    #[default]
    Nested,
    Hash,
}

impl FromStr for JoinImpl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nested" => Ok(JoinImpl::Nested),
            "hash" => Ok(JoinImpl::Hash),
            other => Err(format!("unknown join implementation {other:?} (expected nested or hash)")),
        }
    }
}

impl fmt::Display for JoinImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JoinImpl::Nested => "nested",
            JoinImpl::Hash => "hash",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Constant>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionOutcome {
    Ok,
    RowsAffected(u64),
    Results(ResultSet),
}

/// A resolved operand: a column of the (possibly joined) row or a constant.
#[derive(Debug, Clone)]
enum Operand {
    Column(usize),
    Const(Constant),
}

#[derive(Debug, Clone)]
struct BoundTerm {
    lhs: Operand,
    op: CompareOp,
    rhs: Operand,
}

/// A predicate whose field references have been resolved to row positions
/// and type checked, so evaluation cannot fail.
#[derive(Debug, Clone, Default)]
struct BoundPredicate {
    terms: Vec<BoundTerm>,
}

impl BoundPredicate {
    /// `left` holds the first table's columns, `right` the second's (empty
    /// for single-table statements).
    fn eval(&self, left: &[Constant], right: &[Constant]) -> bool {
        self.terms.iter().all(|t| {
            let a = operand(&t.lhs, left, right);
            let b = operand(&t.rhs, left, right);
            a.compare(b).is_ok_and(|ord| t.op.holds(ord))
        })
    }
}

fn operand<'r>(op: &'r Operand, left: &'r [Constant], right: &'r [Constant]) -> &'r Constant {
    match op {
        Operand::Column(i) if *i < left.len() => &left[*i],
        Operand::Column(i) => &right[*i - left.len()],
        Operand::Const(c) => c,
    }
}

/// The tables a statement can see, in FROM order.
struct Scope<'a> {
    tables: Vec<&'a Schema>,
}

impl<'a> Scope<'a> {
    fn is_join(&self) -> bool {
        self.tables.len() > 1
    }

    fn width(&self) -> usize {
        self.tables.iter().map(|s| s.fields.len()).sum()
    }

    fn resolve(&self, r: &FieldRef) -> Result<(usize, FieldType), EvalError> {
        let mut found = None;
        let mut offset = 0;
        for schema in &self.tables {
            let visible = r.table.as_deref().is_none_or(|t| t == schema.table_name);
            if visible {
                if let Some(i) = schema.field_index(&r.column) {
                    if found.is_some() {
                        return Err(EvalError::AmbiguousColumn(r.to_string()));
                    }
                    found = Some((offset + i, schema.fields[i].ty));
                }
            }
            offset += schema.fields.len();
        }
        found.ok_or_else(|| EvalError::UnknownColumn(r.to_string()))
    }

    fn column_name(&self, index: usize) -> String {
        let mut offset = 0;
        for schema in &self.tables {
            if index < offset + schema.fields.len() {
                let field = &schema.fields[index - offset].name;
                return if self.is_join() {
                    format!("{}.{}", schema.table_name, field)
                } else {
                    field.clone()
                };
            }
            offset += schema.fields.len();
        }
        unreachable!("column index {index} outside scope")
    }

    fn bind_expression(&self, e: &Expression) -> Result<(Operand, FieldType), EvalError> {
        match e {
            Expression::Const(c) => Ok((Operand::Const(c.clone()), c.field_type())),
            Expression::Field(r) => {
                let (i, ty) = self.resolve(r)?;
                Ok((Operand::Column(i), ty))
            }
        }
    }

    fn bind_predicate(&self, pred: &Predicate) -> Result<BoundPredicate, EvalError> {
        let terms = pred
            .terms
            .iter()
            .map(|t| {
                let (lhs, lt) = self.bind_expression(&t.lhs)?;
                let (rhs, rt) = self.bind_expression(&t.rhs)?;
                if lt != rt {
                    return Err(EvalError::TypeMismatch(t.lhs.to_string(), t.rhs.to_string()));
                }
                Ok(BoundTerm { lhs, op: t.op, rhs })
            })
            .collect::<Result<_, _>>()?;
        Ok(BoundPredicate { terms })
    }

    fn bind_projection(&self, p: &Projection) -> Result<Vec<usize>, EvalError> {
        match p {
            Projection::Star => Ok((0..self.width()).collect()),
            Projection::Fields(refs) => refs.iter().map(|r| Ok(self.resolve(r)?.0)).collect(),
        }
    }
}

fn project(columns: &[usize], left: &[Constant], right: &[Constant]) -> Vec<Constant> {
    columns
        .iter()
        .map(|&i| {
            if i < left.len() {
                left[i].clone()
            } else {
                right[i - left.len()].clone()
            }
        })
        .collect()
}

pub struct Executor {
    storage: Arc<FileManager>,
    pool: Arc<BufferPool>,
    catalog: Arc<Catalog>,
    locks: Arc<LockTable>,
    lock_policy: LockPolicy,
    join_impl: JoinImpl,
}

impl Executor {
    pub fn new(
        storage: Arc<FileManager>,
        pool: Arc<BufferPool>,
        catalog: Arc<Catalog>,
        locks: Arc<LockTable>,
        lock_policy: LockPolicy,
        join_impl: JoinImpl,
    ) -> Self {
        Executor {
            storage,
            pool,
            catalog,
            locks,
            lock_policy,
            join_impl,
        }
    }

    pub fn lock_policy(&self) -> LockPolicy {
        self.lock_policy
    }

    pub fn join_impl(&self) -> JoinImpl {
        self.join_impl
    }

    pub fn execute(&self, stmt: &Statement, txn: &Transaction) -> Result<ExecutionOutcome, ExecError> {
        match stmt {
            Statement::CreateTable { table, fields } => {
                let schema = Schema::new(table.clone(), fields.iter().cloned())?;
                self.create_table(txn, schema)
            }
            Statement::DropTable { table } => self.drop_table(txn, table),
            Statement::Insert { table, values } => self.insert(txn, table, values),
            Statement::Update {
                table,
                set_field,
                set_value,
                predicate,
            } => self.update(txn, table, set_field, set_value, predicate),
            Statement::Select {
                projection,
                tables,
                predicate,
            } => match tables.as_slice() {
                [table] => self.select(txn, table, projection, predicate),
                [a, b] => match self.join_impl {
                    JoinImpl::Nested => self.nested_loop_join(txn, a, b, projection, predicate),
                    JoinImpl::Hash => self.hash_join(txn, a, b, projection, predicate),
                },
                _ => Err(ExecError::Unsupported(
                    "a query reads one or two tables".into(),
                )),
            },
        }
    }

    fn lock(&self, txn: &Transaction, table: &str, mode: LockMode) -> Result<(), LockError> {
        match self.lock_policy {
            LockPolicy::Global => self
                .locks
                .acquire(txn.id(), LockTarget::System, LockMode::Global),
            LockPolicy::Table => {
                self.locks
                    .acquire(txn.id(), LockTarget::Table(table.to_string()), mode)
            }
        }
    }

    fn layout(&self, table: &str) -> Result<RecordLayout, ExecError> {
        let schema = self.catalog.get_schema(table)?;
        Ok(RecordLayout::new(schema, self.storage.block_size())?)
    }

    pub fn create_table(&self, txn: &Transaction, schema: Schema) -> Result<ExecutionOutcome, ExecError> {
        self.lock(txn, &schema.table_name, LockMode::Exclusive)?;
        if self.catalog.contains(&schema.table_name) {
            return Err(CatalogError::AlreadyExists(schema.table_name).into());
        }
        RecordLayout::new(schema.clone(), self.storage.block_size())?;
        self.storage.create_table_file(&schema.table_name)?;
        let name = schema.table_name.clone();
        if let Err(e) = self.catalog.register_table(schema) {
            let _ = self.storage.delete_table_file(&name);
            return Err(e.into());
        }
        Ok(ExecutionOutcome::Ok)
    }

    pub fn drop_table(&self, txn: &Transaction, table: &str) -> Result<ExecutionOutcome, ExecError> {
        self.lock(txn, table, LockMode::Exclusive)?;
        if !self.catalog.contains(table) {
            return Err(CatalogError::NoSuchTable(table.to_string()).into());
        }
        self.pool.discard_table(table);
        self.storage.delete_table_file(table)?;
        self.catalog.unregister_table(table)?;
        Ok(ExecutionOutcome::Ok)
    }

    /// Appends one record to the last block, or to a fresh block when the
    /// last one is full.
    pub fn insert(
        &self,
        txn: &Transaction,
        table: &str,
        values: &[Constant],
    ) -> Result<ExecutionOutcome, ExecError> {
        self.lock(txn, table, LockMode::Exclusive)?;
        let layout = self.layout(table)?;
        let record = encode_record(&layout, values)?;

        let count = self.storage.block_count(table)?;
        let mut target = None;
        if count > 0 {
            let last = BlockId::new(table, count - 1);
            let handle = self.pool.pin(txn.id(), &last)?;
            let occupied = self.pool.with_page(&handle, |p| p.occupancy());
            match occupied {
                Ok(n) if (n as usize) < layout.records_per_block => target = Some(handle),
                other => {
                    self.pool.unpin(&handle)?;
                    other?;
                }
            }
        }
        let handle = match target {
            Some(h) => h,
            None => {
                let fresh = self.storage.append_block(table)?;
                self.pool.pin(txn.id(), &fresh)?
            }
        };
        let written = self.pool.with_page_mut(&handle, |page| {
            let slot = page.occupancy() as usize;
            page.slot_mut(&layout, slot).copy_from_slice(&record);
            page.set_occupancy(slot as u32 + 1);
        });
        let dirty = written.and_then(|_| self.pool.mark_dirty(&handle));
        self.pool.unpin(&handle)?;
        dirty?;
        Ok(ExecutionOutcome::RowsAffected(1))
    }

    pub fn update(
        &self,
        txn: &Transaction,
        table: &str,
        set_field: &str,
        set_value: &Constant,
        predicate: &Predicate,
    ) -> Result<ExecutionOutcome, ExecError> {
        self.lock(txn, table, LockMode::Exclusive)?;
        let layout = self.layout(table)?;
        let field = layout
            .schema
            .field_index(set_field)
            .ok_or_else(|| EvalError::UnknownColumn(set_field.to_string()))?;
        layout.check_value(field, set_value)?;
        let pred = Scope {
            tables: vec![&layout.schema],
        }
        .bind_predicate(predicate)?;

        let mut changed = 0u64;
        for n in 0..self.storage.block_count(table)? {
            let handle = self.pool.pin(txn.id(), &BlockId::new(table, n))?;
            let result = self
                .pool
                .with_page_mut(&handle, |page| -> Result<u64, ExecError> {
                    let used = (page.occupancy() as usize).min(layout.records_per_block);
                    let mut hits = 0;
                    for slot in 0..used {
                        let row = crate::storage::decode_record(&layout, page.slot(&layout, slot))?;
                        if pred.eval(&row, &[]) {
                            layout.encode_field(field, set_value, page.slot_mut(&layout, slot))?;
                            hits += 1;
                        }
                    }
                    Ok(hits)
                })
                .map_err(ExecError::from)
                .and_then(|r| r)
                .and_then(|hits| {
                    if hits > 0 {
                        self.pool.mark_dirty(&handle)?;
                    }
                    Ok(hits)
                });
            self.pool.unpin(&handle)?;
            changed += result?;
        }
        Ok(ExecutionOutcome::RowsAffected(changed))
    }

    /// Decoded records of one block, in slot order.
    fn block_records(
        &self,
        txn: &Transaction,
        layout: &RecordLayout,
        number: u32,
    ) -> Result<Vec<Vec<Constant>>, ExecError> {
        let handle = self
            .pool
            .pin(txn.id(), &BlockId::new(&layout.schema.table_name, number))?;
        let rows = self.pool.with_page(&handle, |page| page.records(layout));
        self.pool.unpin(&handle)?;
        Ok(rows??)
    }

    fn scan(&self, txn: &Transaction, layout: &RecordLayout) -> Result<Vec<Vec<Constant>>, ExecError> {
        let mut rows = Vec::new();
        for n in 0..self.storage.block_count(&layout.schema.table_name)? {
            rows.extend(self.block_records(txn, layout, n)?);
        }
        Ok(rows)
    }

    pub fn select(
        &self,
        txn: &Transaction,
        table: &str,
        projection: &Projection,
        predicate: &Predicate,
    ) -> Result<ExecutionOutcome, ExecError> {
        self.lock(txn, table, LockMode::Shared)?;
        let layout = self.layout(table)?;
        let scope = Scope {
            tables: vec![&layout.schema],
        };
        let pred = scope.bind_predicate(predicate)?;
        let columns = scope.bind_projection(projection)?;

        let mut rows = Vec::new();
        for n in 0..self.storage.block_count(table)? {
            for row in self.block_records(txn, &layout, n)? {
                if pred.eval(&row, &[]) {
                    rows.push(project(&columns, &row, &[]));
                }
            }
        }
        Ok(ExecutionOutcome::Results(ResultSet {
            columns: columns.iter().map(|&i| scope.column_name(i)).collect(),
            rows,
        }))
    }

    fn join_setup(
        &self,
        txn: &Transaction,
        table_a: &str,
        table_b: &str,
    ) -> Result<(RecordLayout, RecordLayout), ExecError> {
        if table_a == table_b {
            return Err(ExecError::Unsupported(format!(
                "cannot join table {table_a} with itself"
            )));
        }
        self.lock(txn, table_a, LockMode::Shared)?;
        self.lock(txn, table_b, LockMode::Shared)?;
        Ok((self.layout(table_a)?, self.layout(table_b)?))
    }

    /// For every record of `table_a` (outer) and every record of `table_b`
    /// (inner), emits the projected pair when the predicate holds. Output is
    /// outer-major in file order.
    pub fn nested_loop_join(
        &self,
        txn: &Transaction,
        table_a: &str,
        table_b: &str,
        projection: &Projection,
        predicate: &Predicate,
    ) -> Result<ExecutionOutcome, ExecError> {
        let (la, lb) = self.join_setup(txn, table_a, table_b)?;
        let scope = Scope {
            tables: vec![&la.schema, &lb.schema],
        };
        let pred = scope.bind_predicate(predicate)?;
        let columns = scope.bind_projection(projection)?;

        let mut rows = Vec::new();
        for n in 0..self.storage.block_count(table_a)? {
            let outer = self.block_records(txn, &la, n)?;
            if outer.is_empty() {
                continue;
            }
            let inner = self.scan(txn, &lb)?;
            for ra in &outer {
                for rb in &inner {
                    if pred.eval(ra, rb) {
                        rows.push(project(&columns, ra, rb));
                    }
                }
            }
        }
        Ok(ExecutionOutcome::Results(ResultSet {
            columns: columns.iter().map(|&i| scope.column_name(i)).collect(),
            rows,
        }))
    }

    /// Same rows as [`nested_loop_join`](Self::nested_loop_join), possibly
    /// in another order. Builds a hash table on the smaller input keyed by
    /// every `a.x = b.y` term, probes it with the larger, and checks the
    /// whole predicate on each candidate pair. Falls back to the nested
    /// loop when there is no such term.
    pub fn hash_join(
        &self,
        txn: &Transaction,
        table_a: &str,
        table_b: &str,
        projection: &Projection,
        predicate: &Predicate,
    ) -> Result<ExecutionOutcome, ExecError> {
        let (la, lb) = self.join_setup(txn, table_a, table_b)?;
        let scope = Scope {
            tables: vec![&la.schema, &lb.schema],
        };
        let pred = scope.bind_predicate(predicate)?;
        let columns = scope.bind_projection(projection)?;

        let width_a = la.schema.fields.len();
        let keys: Vec<(usize, usize)> = pred
            .terms
            .iter()
            .filter(|t| t.op == CompareOp::Eq)
            .filter_map(|t| match (&t.lhs, &t.rhs) {
                (Operand::Column(x), Operand::Column(y)) if *x < width_a && *y >= width_a => {
                    Some((*x, *y - width_a))
                }
                (Operand::Column(x), Operand::Column(y)) if *y < width_a && *x >= width_a => {
                    Some((*y, *x - width_a))
                }
                _ => None,
            })
            .collect();
        if keys.is_empty() {
            return self.nested_loop_join(txn, table_a, table_b, projection, predicate);
        }

        let rows_a = self.scan(txn, &la)?;
        let rows_b = self.scan(txn, &lb)?;
        let build_on_a = rows_a.len() <= rows_b.len();
        let (build, probe) = if build_on_a {
            (&rows_a, &rows_b)
        } else {
            (&rows_b, &rows_a)
        };
        let key_of = |row: &[Constant], from_a: bool| -> Vec<Constant> {
            keys.iter()
                .map(|&(ka, kb)| row[if from_a { ka } else { kb }].clone())
                .collect()
        };

        let mut table: HashMap<Vec<Constant>, Vec<usize>> = HashMap::with_capacity(build.len());
        for (i, row) in build.iter().enumerate() {
            table.entry(key_of(row, build_on_a)).or_default().push(i);
        }

        let mut rows = Vec::new();
        for p in probe {
            let Some(matches) = table.get(&key_of(p, !build_on_a)) else {
                continue;
            };
            for &i in matches {
                let (ra, rb) = if build_on_a {
                    (&build[i], p)
                } else {
                    (p, &build[i])
                };
                if pred.eval(ra, rb) {
                    rows.push(project(&columns, ra, rb));
                }
            }
        }
        Ok(ExecutionOutcome::Results(ResultSet {
            columns: columns.iter().map(|&i| scope.column_name(i)).collect(),
            rows,
        }))
    }
}
