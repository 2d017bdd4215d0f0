//! Query text to [`Statement`].
//!
//! Text is first broken into tokens of four kinds (keyword, identifier,
//! constant, delimiter). Each statement form is then a fixed rule, a
//! sequence of expected tokens, matched left to right; the first token
//! that does not fit makes the whole query invalid.
//!
//! Surface grammar:
//!
//! ```text
//! CREATE TABLE <id> ( <id> INT|VARCHAR {, <id> INT|VARCHAR} )
//! DROP TABLE <id>
//! INSERT INTO <id> VALUES ( <const> {, <const>} )
//! UPDATE <id> SET <id> = <const> [WHERE <pred>]
//! SELECT * | <ref> {, <ref>} FROM <id> [, <id>] [WHERE <pred>]
//!
//! <pred> := <term> {AND <term>}
//! <term> := <expr> (= | <> | < | >) <expr>
//! <expr> := <ref> | <const>
//! <ref>  := <id> [. <id>]
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::catalog::FieldType;

pub const KEYWORDS: &[&str] = &[
    "CREATE", "TABLE", "DROP", "INSERT", "INTO", "VALUES", "UPDATE", "SET", "WHERE", "SELECT",
    "FROM", "AND", "INT", "VARCHAR",
];

/// Rejected query text. `position` is a byte offset for lexical errors and
/// a token index for grammar errors.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid query: {message}")]
pub struct ParseError {
    pub message: String,
    pub position: usize,
}

impl ParseError {
    fn new(message: impl Into<String>, position: usize) -> Self {
        ParseError {
            message: message.into(),
            position,
        }
    }
}

/// Failure while evaluating a predicate against a binding.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("type mismatch: cannot compare {0} with {1}")]
    TypeMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constant {
    Int(i32),
    Str(String),
}

impl Constant {
    pub fn field_type(&self) -> FieldType {
        match self {
            Constant::Int(_) => FieldType::Int,
            Constant::Str(_) => FieldType::Varchar,
        }
    }

    /// Ints compare numerically, strings bytewise; mixing the two is an error.
    pub fn compare(&self, other: &Constant) -> Result<Ordering, EvalError> {
        match (self, other) {
            (Constant::Int(a), Constant::Int(b)) => Ok(a.cmp(b)),
            (Constant::Str(a), Constant::Str(b)) => Ok(a.as_bytes().cmp(b.as_bytes())),
            (a, b) => Err(EvalError::TypeMismatch(a.to_string(), b.to_string())),
        }
    }

    /// Wire/rendering form: ints in decimal, strings raw.
    pub fn to_plain(&self) -> String {
        match self {
            Constant::Int(v) => v.to_string(),
            Constant::Str(s) => s.clone(),
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(v) => write!(f, "{v}"),
            Constant::Str(s) => write!(f, "\"{s}\""),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Constant,
    Delimiter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source lexeme (string constants include their quotes).
    pub text: String,
    pub value: Option<Constant>,
    pub offset: usize,
}

impl Token {
    fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    fn is_delimiter(&self, d: &str) -> bool {
        self.kind == TokenKind::Delimiter && self.text == d
    }
}

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

/// Splits `text` into tokens. Whitespace separates tokens and is dropped.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let kind = if is_keyword(word) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                tokens.push(Token {
                    kind,
                    text: word.to_string(),
                    value: None,
                    offset: start,
                });
            }
            b'0'..=b'9' | b'-' => {
                if c == b'-' {
                    i += 1;
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(ParseError::new("illegal character '-'", start));
                    }
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return Err(ParseError::new(
                        "identifier cannot start with a digit",
                        start,
                    ));
                }
                let lexeme = &text[start..i];
                let value: i32 = lexeme.parse().map_err(|_| {
                    ParseError::new(format!("integer out of range: {lexeme}"), start)
                })?;
                tokens.push(Token {
                    kind: TokenKind::Constant,
                    text: lexeme.to_string(),
                    value: Some(Constant::Int(value)),
                    offset: start,
                });
            }
            b'"' => {
                i += 1;
                let body_start = i;
                loop {
                    match bytes.get(i) {
                        None => return Err(ParseError::new("unterminated string", start)),
                        Some(b'"') => break,
                        Some(b) if (0x20..=0x7e).contains(b) => i += 1,
                        Some(_) => {
                            return Err(ParseError::new(
                                "strings may contain only printable ASCII",
                                i,
                            ))
                        }
                    }
                }
                let body = &text[body_start..i];
                i += 1;
                tokens.push(Token {
                    kind: TokenKind::Constant,
                    text: text[start..i].to_string(),
                    value: Some(Constant::Str(body.to_string())),
                    offset: start,
                });
            }
            b'<' if bytes.get(i + 1) == Some(&b'>') => {
                i += 2;
                tokens.push(delimiter("<>", start));
            }
            b'*' | b',' | b'=' | b'<' | b'>' | b'(' | b')' | b'.' => {
                i += 1;
                tokens.push(delimiter(&text[start..i], start));
            }
            _ => {
                let shown = text[start..]
                    .chars()
                    .next()
                    .map(|ch| ch.escape_debug().to_string())
                    .unwrap_or_default();
                return Err(ParseError::new(
                    format!("illegal character '{shown}'"),
                    start,
                ));
            }
        }
    }
    Ok(tokens)
}

fn delimiter(text: &str, offset: usize) -> Token {
    Token {
        kind: TokenKind::Delimiter,
        text: text.to_string(),
        value: None,
        offset,
    }
}

/// A possibly table-qualified column reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldRef {
    pub table: Option<String>,
    pub column: String,
}

impl FieldRef {
    pub fn new(column: impl Into<String>) -> Self {
        FieldRef {
            table: None,
            column: column.into(),
        }
    }

    pub fn qualified(table: impl Into<String>, column: impl Into<String>) -> Self {
        FieldRef {
            table: Some(table.into()),
            column: column.into(),
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Field(FieldRef),
    Const(Constant),
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Field(r) => r.fmt(f),
            Expression::Const(c) => c.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Gt,
}

impl CompareOp {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Gt => ord == Ordering::Greater,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "<>",
            CompareOp::Lt => "<",
            CompareOp::Gt => ">",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "=" => CompareOp::Eq,
            "<>" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            ">" => CompareOp::Gt,
            _ => return None,
        })
    }
}

/// A comparison between two expressions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub lhs: Expression,
    pub op: CompareOp,
    pub rhs: Expression,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

/// Conjunction of terms. No terms means "always true".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predicate {
    pub terms: Vec<Term>,
}

impl Predicate {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            t.fmt(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    Star,
    Fields(Vec<FieldRef>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    CreateTable {
        table: String,
        fields: Vec<(String, FieldType)>,
    },
    DropTable {
        table: String,
    },
    Insert {
        table: String,
        values: Vec<Constant>,
    },
    Update {
        table: String,
        set_field: String,
        set_value: Constant,
        predicate: Predicate,
    },
    /// One table is a plain select, two tables is a join.
    Select {
        projection: Projection,
        tables: Vec<String>,
        predicate: Predicate,
    },
}

/// Canonical rendering; `parse(&s.to_string())` gives back `s`.
impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::CreateTable { table, fields } => {
                write!(f, "CREATE TABLE {table} (")?;
                for (i, (name, ty)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{name} {ty}")?;
                }
                f.write_str(")")
            }
            Statement::DropTable { table } => write!(f, "DROP TABLE {table}"),
            Statement::Insert { table, values } => {
                write!(f, "INSERT INTO {table} VALUES (")?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    v.fmt(f)?;
                }
                f.write_str(")")
            }
            Statement::Update {
                table,
                set_field,
                set_value,
                predicate,
            } => {
                write!(f, "UPDATE {table} SET {set_field} = {set_value}")?;
                if !predicate.is_empty() {
                    write!(f, " WHERE {predicate}")?;
                }
                Ok(())
            }
            Statement::Select {
                projection,
                tables,
                predicate,
            } => {
                f.write_str("SELECT ")?;
                match projection {
                    Projection::Star => f.write_str("*")?,
                    Projection::Fields(refs) => {
                        for (i, r) in refs.iter().enumerate() {
                            if i > 0 {
                                f.write_str(", ")?;
                            }
                            r.fmt(f)?;
                        }
                    }
                }
                write!(f, " FROM {}", tables.join(", "))?;
                if !predicate.is_empty() {
                    write!(f, " WHERE {predicate}")?;
                }
                Ok(())
            }
        }
    }
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn error(&self, expected: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::new(
                format!("expected {expected} at token {}, found {:?}", self.pos, t.text),
                self.pos,
            ),
            None => ParseError::new(
                format!("expected {expected} at token {}, found end of input", self.pos),
                self.pos,
            ),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.is_keyword(kw) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(kw)),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.keyword(kw).is_ok()
    }

    fn delimiter(&mut self, d: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.is_delimiter(d) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(&format!("'{d}'"))),
        }
    }

    fn eat_delimiter(&mut self, d: &str) -> bool {
        self.delimiter(d).is_ok()
    }

    fn identifier(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn constant(&mut self) -> Result<Constant, ParseError> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Constant,
                value: Some(v),
                ..
            }) => {
                self.pos += 1;
                Ok(v.clone())
            }
            _ => Err(self.error("constant")),
        }
    }

    fn field_type(&mut self) -> Result<FieldType, ParseError> {
        if self.eat_keyword("INT") {
            Ok(FieldType::Int)
        } else if self.eat_keyword("VARCHAR") {
            Ok(FieldType::Varchar)
        } else {
            Err(self.error("INT or VARCHAR"))
        }
    }

    fn field_ref(&mut self) -> Result<FieldRef, ParseError> {
        let first = self.identifier()?;
        if self.eat_delimiter(".") {
            let column = self.identifier()?;
            Ok(FieldRef::qualified(first, column))
        } else {
            Ok(FieldRef::new(first))
        }
    }

    fn expression(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Constant => Ok(Expression::Const(self.constant()?)),
            Some(t) if t.kind == TokenKind::Identifier => Ok(Expression::Field(self.field_ref()?)),
            _ => Err(self.error("field name or constant")),
        }
    }

    fn compare_op(&mut self) -> Result<CompareOp, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Delimiter => match CompareOp::from_symbol(&t.text) {
                Some(op) => {
                    self.pos += 1;
                    Ok(op)
                }
                None => Err(self.error("comparison operator")),
            },
            _ => Err(self.error("comparison operator")),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let lhs = self.expression()?;
        let op = self.compare_op()?;
        let rhs = self.expression()?;
        Ok(Term { lhs, op, rhs })
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut terms = vec![self.term()?];
        while self.eat_keyword("AND") {
            terms.push(self.term()?);
        }
        Ok(Predicate { terms })
    }

    fn optional_where(&mut self) -> Result<Predicate, ParseError> {
        if self.eat_keyword("WHERE") {
            self.predicate()
        } else {
            Ok(Predicate::default())
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.error("end of query")),
        }
    }
}

/// Parses one statement. Trailing tokens make the query invalid.
pub fn parse(text: &str) -> Result<Statement, ParseError> {
    let tokens = tokenize(text)?;
    let mut cur = Cursor {
        tokens: &tokens,
        pos: 0,
    };
    let first = cur.peek().ok_or_else(|| ParseError::new("empty query", 0))?;
    let stmt = if first.is_keyword("CREATE") {
        parse_create(&mut cur)?
    } else if first.is_keyword("DROP") {
        cur.keyword("DROP")?;
        cur.keyword("TABLE")?;
        Statement::DropTable {
            table: cur.identifier()?,
        }
    } else if first.is_keyword("INSERT") {
        parse_insert(&mut cur)?
    } else if first.is_keyword("UPDATE") {
        parse_update(&mut cur)?
    } else if first.is_keyword("SELECT") {
        parse_select(&mut cur)?
    } else {
        return Err(cur.error("CREATE, DROP, INSERT, UPDATE or SELECT"));
    };
    cur.end()?;
    Ok(stmt)
}

fn parse_create(cur: &mut Cursor<'_>) -> Result<Statement, ParseError> {
    cur.keyword("CREATE")?;
    cur.keyword("TABLE")?;
    let table = cur.identifier()?;
    cur.delimiter("(")?;
    let mut fields: Vec<(String, FieldType)> = Vec::new();
    loop {
        let at = cur.pos;
        let name = cur.identifier()?;
        if fields.iter().any(|(n, _)| *n == name) {
            return Err(ParseError::new(format!("duplicate field {name}"), at));
        }
        let ty = cur.field_type()?;
        fields.push((name, ty));
        if !cur.eat_delimiter(",") {
            break;
        }
    }
    cur.delimiter(")")?;
    Ok(Statement::CreateTable { table, fields })
}

fn parse_insert(cur: &mut Cursor<'_>) -> Result<Statement, ParseError> {
    cur.keyword("INSERT")?;
    cur.keyword("INTO")?;
    let table = cur.identifier()?;
    cur.keyword("VALUES")?;
    cur.delimiter("(")?;
    let mut values = vec![cur.constant()?];
    while cur.eat_delimiter(",") {
        values.push(cur.constant()?);
    }
    cur.delimiter(")")?;
    Ok(Statement::Insert { table, values })
}

fn parse_update(cur: &mut Cursor<'_>) -> Result<Statement, ParseError> {
    cur.keyword("UPDATE")?;
    let table = cur.identifier()?;
    cur.keyword("SET")?;
    let set_field = cur.identifier()?;
    cur.delimiter("=")?;
    let set_value = cur.constant()?;
    let predicate = cur.optional_where()?;
    Ok(Statement::Update {
        table,
        set_field,
        set_value,
        predicate,
    })
}

fn parse_select(cur: &mut Cursor<'_>) -> Result<Statement, ParseError> {
    cur.keyword("SELECT")?;
    let projection = if cur.eat_delimiter("*") {
        Projection::Star
    } else {
        let mut refs = vec![cur.field_ref()?];
        while cur.eat_delimiter(",") {
            refs.push(cur.field_ref()?);
        }
        Projection::Fields(refs)
    };
    cur.keyword("FROM")?;
    let mut tables = vec![cur.identifier()?];
    if cur.eat_delimiter(",") {
        tables.push(cur.identifier()?);
    }
    let predicate = cur.optional_where()?;
    Ok(Statement::Select {
        projection,
        tables,
        predicate,
    })
}

/// Parses a bare predicate (`a = 1 AND b <> c`).
pub fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let tokens = tokenize(text)?;
    let mut cur = Cursor {
        tokens: &tokens,
        pos: 0,
    };
    let pred = cur.predicate()?;
    cur.end()?;
    Ok(pred)
}

/// Source of field values for predicate evaluation.
pub trait Binding {
    fn value(&self, field: &FieldRef) -> Result<&Constant, EvalError>;
}

/// Keys are column names, or `table.column` for qualified references.
impl Binding for HashMap<String, Constant> {
    fn value(&self, field: &FieldRef) -> Result<&Constant, EvalError> {
        let key = field.to_string();
        self.get(&key)
            .or_else(|| self.get(&field.column))
            .ok_or(EvalError::UnknownColumn(key))
    }
}

fn eval_expression<'a, B: Binding + ?Sized>(
    expr: &'a Expression,
    binding: &'a B,
) -> Result<&'a Constant, EvalError> {
    match expr {
        Expression::Const(c) => Ok(c),
        Expression::Field(r) => binding.value(r),
    }
}

pub fn eval_term<B: Binding + ?Sized>(term: &Term, binding: &B) -> Result<bool, EvalError> {
    let lhs = eval_expression(&term.lhs, binding)?;
    let rhs = eval_expression(&term.rhs, binding)?;
    Ok(term.op.holds(lhs.compare(rhs)?))
}

/// Evaluates the conjunction. Every term is evaluated, so unknown columns
/// and type errors surface even when an earlier term is false.
pub fn eval_predicate<B: Binding + ?Sized>(pred: &Predicate, binding: &B) -> Result<bool, EvalError> {
    let mut result = true;
    for term in &pred.terms {
        result &= eval_term(term, binding)?;
    }
    Ok(result)
}
