//! The SQL subset:
//!
//! ```text
//! SELECT <cols | aggregates> FROM <table> [WHERE <predicates>] [GROUP BY <cols>]
//! ```
//!
//! Aggregates: COUNT(*), COUNT(c), SUM(c), MIN(c), MAX(c), AVG(c).
//! Predicates: comparisons between a column and a literal (or two columns
//! of one type), AND/OR/NOT, IS [NOT] NULL, IN lists (expanded to OR
//! chains), parentheses. Literals: integers, decimals, 'strings',
//! DATE 'YYYY-MM-DD', NULL. Anything else is rejected with a description
//! of the subset.

use ndp_core::predicate::{CmpOp, PredExpr};
use ndp_core::schema::Schema;
use ndp_core::value::{parse_date, parse_decimal, TypeTag, Value};

pub const SUBSET_HELP: &str = "supported SQL: SELECT <columns or aggregates COUNT(*)/COUNT(c)/SUM(c)/MIN(c)/MAX(c)/AVG(c)> FROM <table> [WHERE comparisons of columns with literals combined with AND/OR/NOT, IS [NOT] NULL, IN (...)] [GROUP BY <columns>]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SqlError {
    #[error("SQL parse error at {at:?}: {msg}; {SUBSET_HELP}")]
    Parse { at: String, msg: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("literal {literal:?} does not fit column {column:?}: {detail}")]
    BadLiteral { literal: String, column: String, detail: String },
    #[error("{0}; {SUBSET_HELP}")]
    OutOfSubset(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Column(String),
    Agg { func: AggName, arg: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggName {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

/// Raw parsed query, before binding to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedQuery {
    pub select: Vec<SelectItem>,
    pub table: String,
    pub where_expr: Option<RawExpr>,
    pub group_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawExpr {
    Cmp { op: CmpOp, lhs: RawOperand, rhs: RawOperand },
    And(Box<RawExpr>, Box<RawExpr>),
    Or(Box<RawExpr>, Box<RawExpr>),
    Not(Box<RawExpr>),
    IsNull { column: String, negated: bool },
    InList { column: String, items: Vec<RawLiteral> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawOperand {
    Column(String),
    Literal(RawLiteral),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawLiteral {
    Number(String),
    Str(String),
    Date(String),
    Null,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Str(String),
    Symbol(&'static str),
}

fn keyword(t: &Token, kw: &str) -> bool {
    matches!(t, Token::Ident(s) if s.eq_ignore_ascii_case(kw))
}

fn tokenize(text: &str) -> Result<Vec<Token>, SqlError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' | ')' | ',' | '*' => {
                out.push(Token::Symbol(match c {
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    _ => "*",
                }));
                i += 1;
            }
            '=' => {
                out.push(Token::Symbol("="));
                i += 1;
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Token::Symbol("<="));
                    i += 2;
                } else if bytes.get(i + 1) == Some(&b'>') {
                    out.push(Token::Symbol("<>"));
                    i += 2;
                } else {
                    out.push(Token::Symbol("<"));
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Token::Symbol(">="));
                    i += 2;
                } else {
                    out.push(Token::Symbol(">"));
                    i += 1;
                }
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Token::Symbol("<>"));
                    i += 2;
                } else {
                    return Err(SqlError::Parse { at: "!".into(), msg: "expected !=".into() });
                }
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some(b'\'') => {
                            i += 1;
                            break;
                        }
                        Some(&b) => {
                            s.push(b as char);
                            i += 1;
                        }
                        None => {
                            return Err(SqlError::Parse {
                                at: s,
                                msg: "unterminated string literal".into(),
                            })
                        }
                    }
                }
                out.push(Token::Str(s));
            }
            '0'..='9' | '-' | '.' => {
                let start = i;
                i += 1;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b'-')
                {
                    i += 1;
                }
                out.push(Token::Number(text[start..i].to_string()));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token::Ident(text[start..i].to_string()));
            }
            other => {
                return Err(SqlError::Parse {
                    at: other.to_string(),
                    msg: "unexpected character".into(),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.at).cloned();
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        match self.next() {
            Some(t) if keyword(&t, kw) => Ok(()),
            other => Err(Parser::err(other, &format!("expected {kw}"))),
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<(), SqlError> {
        match self.next() {
            Some(Token::Symbol(s)) if s == sym => Ok(()),
            other => Err(Parser::err(other, &format!("expected {sym:?}"))),
        }
    }

    fn err(t: Option<Token>, msg: &str) -> SqlError {
        SqlError::Parse { at: format!("{t:?}"), msg: msg.to_string() }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            other => Err(Parser::err(other, "expected identifier")),
        }
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        match self.next() {
            Some(Token::Symbol("*")) => Ok(SelectItem::Star),
            Some(Token::Ident(name)) => {
                let agg = match name.to_ascii_uppercase().as_str() {
                    "COUNT" => Some(AggName::Count),
                    "SUM" => Some(AggName::Sum),
                    "MIN" => Some(AggName::Min),
                    "MAX" => Some(AggName::Max),
                    "AVG" => Some(AggName::Avg),
                    _ => None,
                };
                match (agg, self.peek()) {
                    (Some(func), Some(Token::Symbol("("))) => {
                        self.expect_symbol("(")?;
                        let arg = match self.next() {
                            Some(Token::Symbol("*")) if func == AggName::Count => None,
                            Some(Token::Ident(col)) => Some(col),
                            other => return Err(Parser::err(other, "expected column or *")),
                        };
                        self.expect_symbol(")")?;
                        Ok(SelectItem::Agg { func, arg })
                    }
                    _ => Ok(SelectItem::Column(name)),
                }
            }
            other => Err(Parser::err(other, "expected select item")),
        }
    }

    fn literal(&mut self) -> Result<RawLiteral, SqlError> {
        match self.next() {
            Some(Token::Number(n)) => Ok(RawLiteral::Number(n)),
            Some(Token::Str(s)) => Ok(RawLiteral::Str(s)),
            Some(t) if keyword(&t, "NULL") => Ok(RawLiteral::Null),
            Some(t) if keyword(&t, "DATE") => match self.next() {
                Some(Token::Str(s)) => Ok(RawLiteral::Date(s)),
                other => Err(Parser::err(other, "expected date string after DATE")),
            },
            other => Err(Parser::err(other, "expected literal")),
        }
    }

    fn operand(&mut self) -> Result<RawOperand, SqlError> {
        match self.peek() {
            Some(Token::Ident(s))
                if !keyword(&Token::Ident(s.clone()), "NULL")
                    && !keyword(&Token::Ident(s.clone()), "DATE") =>
            {
                Ok(RawOperand::Column(self.ident()?))
            }
            _ => Ok(RawOperand::Literal(self.literal()?)),
        }
    }

    fn cmp_op(&mut self) -> Result<CmpOp, SqlError> {
        match self.next() {
            Some(Token::Symbol("=")) => Ok(CmpOp::Eq),
            Some(Token::Symbol("<>")) => Ok(CmpOp::Ne),
            Some(Token::Symbol("<")) => Ok(CmpOp::Lt),
            Some(Token::Symbol("<=")) => Ok(CmpOp::Le),
            Some(Token::Symbol(">")) => Ok(CmpOp::Gt),
            Some(Token::Symbol(">=")) => Ok(CmpOp::Ge),
            other => Err(Parser::err(other, "expected comparison operator")),
        }
    }

    fn primary(&mut self) -> Result<RawExpr, SqlError> {
        if let Some(Token::Symbol("(")) = self.peek() {
            self.expect_symbol("(")?;
            let e = self.or_expr()?;
            self.expect_symbol(")")?;
            return Ok(e);
        }
        let lhs = self.operand()?;
        match self.peek() {
            Some(t) if keyword(t, "IS") => {
                self.next();
                let negated = match self.peek() {
                    Some(t) if keyword(t, "NOT") => {
                        self.next();
                        true
                    }
                    _ => false,
                };
                self.expect_keyword("NULL")?;
                match lhs {
                    RawOperand::Column(column) => Ok(RawExpr::IsNull { column, negated }),
                    _ => Err(SqlError::OutOfSubset("IS NULL applies to columns".into())),
                }
            }
            Some(t) if keyword(t, "IN") => {
                self.next();
                self.expect_symbol("(")?;
                let mut items = vec![self.literal()?];
                while matches!(self.peek(), Some(Token::Symbol(","))) {
                    self.next();
                    items.push(self.literal()?);
                }
                self.expect_symbol(")")?;
                match lhs {
                    RawOperand::Column(column) => Ok(RawExpr::InList { column, items }),
                    _ => Err(SqlError::OutOfSubset("IN applies to columns".into())),
                }
            }
            _ => {
                let op = self.cmp_op()?;
                let rhs = self.operand()?;
                Ok(RawExpr::Cmp { op, lhs, rhs })
            }
        }
    }

    fn not_expr(&mut self) -> Result<RawExpr, SqlError> {
        if let Some(t) = self.peek() {
            if keyword(t, "NOT") {
                self.next();
                return Ok(RawExpr::Not(Box::new(self.not_expr()?)));
            }
        }
        self.primary()
    }

    fn and_expr(&mut self) -> Result<RawExpr, SqlError> {
        let mut e = self.not_expr()?;
        while matches!(self.peek(), Some(t) if keyword(t, "AND")) {
            self.next();
            e = RawExpr::And(Box::new(e), Box::new(self.not_expr()?));
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<RawExpr, SqlError> {
        let mut e = self.and_expr()?;
        while matches!(self.peek(), Some(t) if keyword(t, "OR")) {
            self.next();
            e = RawExpr::Or(Box::new(e), Box::new(self.and_expr()?));
        }
        Ok(e)
    }
}

pub fn parse(text: &str) -> Result<ParsedQuery, SqlError> {
    let mut p = Parser { tokens: tokenize(text.trim().trim_end_matches(';'))?, at: 0 };
    p.expect_keyword("SELECT")?;
    let mut select = vec![p.select_item()?];
    while matches!(p.peek(), Some(Token::Symbol(","))) {
        p.next();
        select.push(p.select_item()?);
    }
    p.expect_keyword("FROM")?;
    let table = p.ident()?;
    let mut where_expr = None;
    if matches!(p.peek(), Some(t) if keyword(t, "WHERE")) {
        p.next();
        where_expr = Some(p.or_expr()?);
    }
    let mut group_by = Vec::new();
    if matches!(p.peek(), Some(t) if keyword(t, "GROUP")) {
        p.next();
        p.expect_keyword("BY")?;
        group_by.push(p.ident()?);
        while matches!(p.peek(), Some(Token::Symbol(","))) {
            p.next();
            group_by.push(p.ident()?);
        }
    }
    if let Some(t) = p.peek() {
        return Err(SqlError::OutOfSubset(format!("trailing input starting at {t:?}")));
    }
    Ok(ParsedQuery { select, table, where_expr, group_by })
}

/// Types a raw literal against a column.
fn bind_literal(lit: &RawLiteral, tag: &TypeTag, colname: &str) -> Result<Value, SqlError> {
    let err = |detail: String| SqlError::BadLiteral {
        literal: format!("{lit:?}"),
        column: colname.to_string(),
        detail,
    };
    match (lit, tag) {
        (RawLiteral::Null, _) => Ok(Value::Null),
        (RawLiteral::Number(n), TypeTag::Int64) => {
            n.parse::<i64>().map(Value::Int64).map_err(|e| err(e.to_string()))
        }
        (RawLiteral::Number(n), TypeTag::Decimal { precision, scale }) => {
            parse_decimal(n, *precision, *scale).map(Value::Decimal).map_err(|e| err(e.to_string()))
        }
        (RawLiteral::Date(d), TypeTag::Date) | (RawLiteral::Str(d), TypeTag::Date) => {
            parse_date(d).map(Value::Date).map_err(|e| err(e.to_string()))
        }
        (RawLiteral::Str(s), TypeTag::Varchar { .. }) => Ok(Value::Varchar(s.clone().into_bytes())),
        (l, t) => Err(err(format!("{l:?} is not a {t}"))),
    }
}

/// An untyped literal outside column context (literal-vs-literal compares).
fn bind_bare_literal(lit: &RawLiteral) -> Result<Value, SqlError> {
    match lit {
        RawLiteral::Null => Ok(Value::Null),
        RawLiteral::Number(n) => {
            if let Ok(i) = n.parse::<i64>() {
                Ok(Value::Int64(i))
            } else {
                parse_decimal(n, 18, 4).map(Value::Decimal).map_err(|e| SqlError::BadLiteral {
                    literal: n.clone(),
                    column: "<none>".into(),
                    detail: e.to_string(),
                })
            }
        }
        RawLiteral::Str(s) => Ok(Value::Varchar(s.clone().into_bytes())),
        RawLiteral::Date(d) => parse_date(d).map(Value::Date).map_err(|e| SqlError::BadLiteral {
            literal: d.clone(),
            column: "<none>".into(),
            detail: e.to_string(),
        }),
    }
}

/// Binds a raw predicate to schema column indices and typed literals.
pub fn bind_expr(raw: &RawExpr, schema: &Schema) -> Result<PredExpr, SqlError> {
    let col = |name: &str| {
        schema.column_index(name).map_err(|_| SqlError::UnknownColumn(name.to_string()))
    };
    Ok(match raw {
        RawExpr::Cmp { op, lhs, rhs } => {
            let bind_side = |operand: &RawOperand, other: &RawOperand| -> Result<PredExpr, SqlError> {
                match operand {
                    RawOperand::Column(name) => Ok(PredExpr::ColumnRef(col(name)?)),
                    RawOperand::Literal(lit) => match other {
                        RawOperand::Column(other_name) => {
                            let ix = col(other_name)?;
                            let tag = schema.column_type(ix).tag;
                            Ok(PredExpr::Literal(bind_literal(lit, &tag, other_name)?))
                        }
                        RawOperand::Literal(_) => Ok(PredExpr::Literal(bind_bare_literal(lit)?)),
                    },
                }
            };
            PredExpr::cmp(*op, bind_side(lhs, rhs)?, bind_side(rhs, lhs)?)
        }
        RawExpr::And(l, r) => PredExpr::and(bind_expr(l, schema)?, bind_expr(r, schema)?),
        RawExpr::Or(l, r) => PredExpr::or(bind_expr(l, schema)?, bind_expr(r, schema)?),
        RawExpr::Not(e) => PredExpr::not(bind_expr(e, schema)?),
        RawExpr::IsNull { column, negated } => {
            let e = PredExpr::is_null(PredExpr::ColumnRef(col(column)?));
            if *negated {
                PredExpr::not(e)
            } else {
                e
            }
        }
        RawExpr::InList { column, items } => {
            let ix = col(column)?;
            let tag = schema.column_type(ix).tag;
            let mut expr: Option<PredExpr> = None;
            for item in items {
                let leaf = PredExpr::cmp(
                    CmpOp::Eq,
                    PredExpr::ColumnRef(ix),
                    PredExpr::Literal(bind_literal(item, &tag, column)?),
                );
                expr = Some(match expr {
                    None => leaf,
                    Some(prev) => PredExpr::or(prev, leaf),
                });
            }
            expr.ok_or_else(|| SqlError::OutOfSubset("empty IN list".into()))?
        }
    })
}
