//! Predicate expression trees and the reference tree interpreter.

use crate::record::RowView;
use crate::value::Value;
use std::cmp::Ordering;
use std::fmt;

/// SQL three-valued truth value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ternary {
    True,
    False,
    Null,
}

impl Ternary {
    pub fn from_bool(b: bool) -> Ternary {
        if b {
            Ternary::True
        } else {
            Ternary::False
        }
    }

    pub fn and(self, other: Ternary) -> Ternary {
        use Ternary::*;
        match (self, other) {
            (False, _) | (_, False) => False,
            (True, True) => True,
            _ => Null,
        }
    }

    pub fn or(self, other: Ternary) -> Ternary {
        use Ternary::*;
        match (self, other) {
            (True, _) | (_, True) => True,
            (False, False) => False,
            _ => Null,
        }
    }

}

impl std::ops::Not for Ternary {
    type Output = Ternary;

    fn not(self) -> Ternary {
        match self {
            Ternary::True => Ternary::False,
            Ternary::False => Ternary::True,
            Ternary::Null => Ternary::Null,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn apply(&self, ord: Ordering) -> bool {
        match self {
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
        }
    }
}

/// A predicate expression. Comparisons take column references or literals
/// only; arithmetic inside predicates is out of scope. `Call` represents a
/// function the engine cannot evaluate remotely (user-defined functions);
/// it always fails the pushdown allowlist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredExpr {
    ColumnRef(usize),
    Literal(Value),
    Compare(CmpOp, Box<PredExpr>, Box<PredExpr>),
    And(Box<PredExpr>, Box<PredExpr>),
    Or(Box<PredExpr>, Box<PredExpr>),
    Not(Box<PredExpr>),
    IsNull(Box<PredExpr>),
    Call { name: String, args: Vec<PredExpr> },
}

impl PredExpr {
    pub fn and(l: PredExpr, r: PredExpr) -> PredExpr {
        PredExpr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: PredExpr, r: PredExpr) -> PredExpr {
        PredExpr::Or(Box::new(l), Box::new(r))
    }

    #[allow(clippy::should_implement_trait)] // constructor family: and/or/not/cmp
    pub fn not(e: PredExpr) -> PredExpr {
        PredExpr::Not(Box::new(e))
    }

    pub fn cmp(op: CmpOp, l: PredExpr, r: PredExpr) -> PredExpr {
        PredExpr::Compare(op, Box::new(l), Box::new(r))
    }

    pub fn is_null(e: PredExpr) -> PredExpr {
        PredExpr::IsNull(Box::new(e))
    }

    /// Schema column indices referenced anywhere in the expression.
    pub fn referenced_columns(&self, out: &mut Vec<usize>) {
        match self {
            PredExpr::ColumnRef(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            PredExpr::Literal(_) => {}
            PredExpr::Compare(_, l, r) | PredExpr::And(l, r) | PredExpr::Or(l, r) => {
                l.referenced_columns(out);
                r.referenced_columns(out);
            }
            PredExpr::Not(e) | PredExpr::IsNull(e) => e.referenced_columns(out),
            PredExpr::Call { args, .. } => {
                for a in args {
                    a.referenced_columns(out);
                }
            }
        }
    }

    /// Renders the expression with column names from `schema`, used by
    /// EXPLAIN output.
    pub fn render(&self, schema: &crate::schema::Schema) -> String {
        match self {
            PredExpr::ColumnRef(i) => schema
                .columns
                .get(*i)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| format!("#{i}")),
            PredExpr::Literal(v) => match v {
                Value::Null => "NULL".into(),
                Value::Int64(x) => x.to_string(),
                Value::Decimal(x) => x.to_string(),
                Value::Date(d) => format!("DATE '{}'", crate::value::format_date(*d)),
                Value::Varchar(b) => format!("'{}'", String::from_utf8_lossy(b)),
            },
            PredExpr::Compare(op, l, r) => {
                // A decimal literal's scale comes from the column it
                // compares with; it renders as a raw integer otherwise.
                let tag_of = |e: &PredExpr| match e {
                    PredExpr::ColumnRef(i) => schema.columns.get(*i).map(|c| c.ty.tag),
                    _ => None,
                };
                let side = |e: &PredExpr, other: &PredExpr| match (e, tag_of(other)) {
                    (PredExpr::Literal(v @ Value::Decimal(_)), Some(tag)) => v.render(&tag),
                    _ => e.render(schema),
                };
                format!("({} {} {})", side(l, r), op.symbol(), side(r, l))
            }
            PredExpr::And(l, r) => format!("({} AND {})", l.render(schema), r.render(schema)),
            PredExpr::Or(l, r) => format!("({} OR {})", l.render(schema), r.render(schema)),
            PredExpr::Not(e) => format!("(NOT {})", e.render(schema)),
            PredExpr::IsNull(e) => format!("({} IS NULL)", e.render(schema)),
            PredExpr::Call { name, args } => {
                let args: Vec<String> = args.iter().map(|a| a.render(schema)).collect();
                format!("{name}({})", args.join(", "))
            }
        }
    }
}

impl fmt::Display for Ternary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ternary::True => write!(f, "TRUE"),
            Ternary::False => write!(f, "FALSE"),
            Ternary::Null => write!(f, "NULL"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("column {0} not carried by this row shape")]
    ColumnAbsent(usize),
    #[error("comparison of incompatible values {0:?} and {1:?}")]
    Incomparable(String, String),
    #[error("expression is not boolean-valued at this position")]
    NotBoolean,
    #[error("cannot evaluate function {0:?}")]
    UnsupportedCall(String),
}

/// Compares two non-null values, failing instead of panicking when the
/// variants differ (malformed input rather than a programming error).
pub(crate) fn compare_values(a: &Value, b: &Value) -> Result<Ordering, EvalError> {
    match (a, b) {
        (Value::Int64(_), Value::Int64(_))
        | (Value::Decimal(_), Value::Decimal(_))
        | (Value::Date(_), Value::Date(_))
        | (Value::Varchar(_), Value::Varchar(_)) => Ok(a.cmp_same_type(b)),
        _ => Err(EvalError::Incomparable(format!("{a:?}"), format!("{b:?}"))),
    }
}

fn eval_value<'a>(expr: &'a PredExpr, row: &RowView<'a>) -> Result<&'a Value, EvalError> {
    match expr {
        PredExpr::ColumnRef(i) => row.get(*i).ok_or(EvalError::ColumnAbsent(*i)),
        PredExpr::Literal(v) => Ok(v),
        _ => Err(EvalError::NotBoolean),
    }
}

/// Reference evaluation of an expression tree against one row. This is the
/// semantics the bytecode must match exactly, NULL cases included.
pub fn interpret(expr: &PredExpr, row: &RowView) -> Result<Ternary, EvalError> {
    match expr {
        PredExpr::Compare(op, l, r) => {
            let lv = eval_value(l, row)?;
            let rv = eval_value(r, row)?;
            if lv.is_null() || rv.is_null() {
                return Ok(Ternary::Null);
            }
            Ok(Ternary::from_bool(op.apply(compare_values(lv, rv)?)))
        }
        PredExpr::And(l, r) => Ok(interpret(l, row)?.and(interpret(r, row)?)),
        PredExpr::Or(l, r) => Ok(interpret(l, row)?.or(interpret(r, row)?)),
        PredExpr::Not(e) => Ok(!interpret(e, row)?),
        PredExpr::IsNull(e) => match e.as_ref() {
            PredExpr::ColumnRef(_) | PredExpr::Literal(_) => {
                Ok(Ternary::from_bool(eval_value(e, row)?.is_null()))
            }
            _ => Ok(Ternary::from_bool(interpret(e, row)? == Ternary::Null)),
        },
        PredExpr::Call { name, .. } => Err(EvalError::UnsupportedCall(name.clone())),
        PredExpr::ColumnRef(_) | PredExpr::Literal(_) => Err(EvalError::NotBoolean),
    }
}
