//! Column types and runtime values.
//!
//! Four storage types are supported: 64-bit integers, fixed-point decimals
//! (stored as a scaled signed 64-bit integer, precision up to 18 digits),
//! dates (days since 1970-01-01 as a signed 32-bit integer), and
//! bounded-length byte strings. Aggregate sums widen to 128 bits so that
//! folding is exact regardless of order.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

pub const MAX_DECIMAL_PRECISION: u8 = 18;

/// Type tag without nullability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TypeTag {
    Int64,
    Decimal { precision: u8, scale: u8 },
    Date,
    Varchar { max_len: u16 },
}

impl TypeTag {
    /// Byte width of the encoded value, or `None` for variable-length types.
    pub fn fixed_len(&self) -> Option<usize> {
        match self {
            TypeTag::Int64 | TypeTag::Decimal { .. } => Some(8),
            TypeTag::Date => Some(4),
            TypeTag::Varchar { .. } => None,
        }
    }

    /// Two tags are comparable when they denote the same value domain.
    /// Decimal comparability additionally requires an identical scale so
    /// that the scaled integer representations compare directly.
    pub fn comparable_with(&self, other: &TypeTag) -> bool {
        match (self, other) {
            (TypeTag::Int64, TypeTag::Int64) => true,
            (TypeTag::Date, TypeTag::Date) => true,
            (TypeTag::Decimal { scale: a, .. }, TypeTag::Decimal { scale: b, .. }) => a == b,
            (TypeTag::Varchar { .. }, TypeTag::Varchar { .. }) => true,
            _ => false,
        }
    }

    pub fn is_summable(&self) -> bool {
        matches!(self, TypeTag::Int64 | TypeTag::Decimal { .. })
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeTag::Int64 => write!(f, "INT64"),
            TypeTag::Decimal { precision, scale } => write!(f, "DECIMAL({precision},{scale})"),
            TypeTag::Date => write!(f, "DATE"),
            TypeTag::Varchar { max_len } => write!(f, "VARCHAR({max_len})"),
        }
    }
}

/// A column type: type tag plus nullability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnType {
    #[serde(flatten)]
    pub tag: TypeTag,
    #[serde(default)]
    pub nullable: bool,
}

impl ColumnType {
    pub fn new(tag: TypeTag) -> Self {
        ColumnType { tag, nullable: false }
    }

    pub fn nullable(tag: TypeTag) -> Self {
        ColumnType { tag, nullable: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("value out of range for {ty}: {detail}")]
    OutOfRange { ty: TypeTag, detail: String },
    #[error("type mismatch: expected {expected}, got {actual}")]
    TypeMismatch { expected: TypeTag, actual: String },
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

/// A runtime column value. `Null` is a first-class variant so that records
/// and predicate literals share one representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    Null,
    Int64(i64),
    /// Scaled integer; the scale lives in the column type.
    Decimal(i64),
    /// Days since 1970-01-01.
    Date(i32),
    Varchar(Vec<u8>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Checks that the value inhabits `ty`, including range and length limits.
    pub fn check_type(&self, ty: &ColumnType) -> Result<(), ValueError> {
        match (self, &ty.tag) {
            (Value::Null, _) => {
                if ty.nullable {
                    Ok(())
                } else {
                    Err(ValueError::TypeMismatch { expected: ty.tag, actual: "NULL".into() })
                }
            }
            (Value::Int64(_), TypeTag::Int64) => Ok(()),
            (Value::Decimal(raw), TypeTag::Decimal { precision, .. }) => {
                let limit = 10i64.pow(*precision as u32);
                if raw.abs() >= limit {
                    Err(ValueError::OutOfRange {
                        ty: ty.tag,
                        detail: format!("scaled magnitude {raw} exceeds {precision} digits"),
                    })
                } else {
                    Ok(())
                }
            }
            (Value::Date(_), TypeTag::Date) => Ok(()),
            (Value::Varchar(bytes), TypeTag::Varchar { max_len }) => {
                if bytes.len() > *max_len as usize {
                    Err(ValueError::OutOfRange {
                        ty: ty.tag,
                        detail: format!("length {} over max {max_len}", bytes.len()),
                    })
                } else {
                    Ok(())
                }
            }
            (v, _) => Err(ValueError::TypeMismatch { expected: ty.tag, actual: format!("{v:?}") }),
        }
    }

    /// Total order among non-null values of the same tag. Varchar compares
    /// bytewise; collations are out of scope.
    pub fn cmp_same_type(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
            (Value::Decimal(a), Value::Decimal(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Varchar(a), Value::Varchar(b)) => a.cmp(b),
            _ => panic!("cmp_same_type on mismatched or null values: {self:?} vs {other:?}"),
        }
    }

    /// Widened integral view used by SUM folding.
    pub fn as_i128(&self) -> Option<i128> {
        match self {
            Value::Int64(v) => Some(*v as i128),
            Value::Decimal(v) => Some(*v as i128),
            _ => None,
        }
    }

    /// Renders the value using the column type for scale/format context.
    pub fn render(&self, tag: &TypeTag) -> String {
        match (self, tag) {
            (Value::Null, _) => "NULL".to_string(),
            (Value::Int64(v), _) => v.to_string(),
            (Value::Decimal(raw), TypeTag::Decimal { scale, .. }) => format_decimal(*raw, *scale),
            (Value::Decimal(raw), _) => raw.to_string(),
            (Value::Date(d), _) => format_date(*d),
            (Value::Varchar(b), _) => String::from_utf8_lossy(b).into_owned(),
        }
    }
}

/// Compares two keys (vectors of same-typed non-null values) lexicographically.
pub fn compare_keys(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.cmp_same_type(y) {
            Ordering::Equal => continue,
            ord => return ord,
        }
    }
    a.len().cmp(&b.len())
}

/// Parses a decimal literal like `-12.3450` into a scaled integer at the
/// given scale. Excess fractional digits are rejected rather than rounded.
pub fn parse_decimal(text: &str, precision: u8, scale: u8) -> Result<i64, ValueError> {
    let ty = TypeTag::Decimal { precision, scale };
    let s = text.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(ValueError::Malformed { what: "decimal", detail: text.to_string() });
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(ValueError::Malformed { what: "decimal", detail: text.to_string() });
    }
    if frac_part.len() > scale as usize {
        return Err(ValueError::OutOfRange {
            ty,
            detail: format!("{} fractional digits exceed scale {scale}", frac_part.len()),
        });
    }
    let mut raw: i128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        raw = raw * 10 + (c as u8 - b'0') as i128;
    }
    raw *= 10i128.pow((scale as usize - frac_part.len()) as u32);
    if neg {
        raw = -raw;
    }
    let limit = 10i128.pow(precision as u32);
    if raw.abs() >= limit {
        return Err(ValueError::OutOfRange { ty, detail: format!("{text} exceeds {precision} digits") });
    }
    Ok(raw as i64)
}

pub fn format_decimal(raw: i64, scale: u8) -> String {
    if scale == 0 {
        return raw.to_string();
    }
    let neg = raw < 0;
    let abs = (raw as i128).unsigned_abs();
    let pow = 10u128.pow(scale as u32);
    let int = abs / pow;
    let frac = abs % pow;
    let sign = if neg { "-" } else { "" };
    format!("{sign}{int}.{frac:0width$}", width = scale as usize)
}

/// Parses `YYYY-MM-DD` into days since 1970-01-01 (proleptic Gregorian).
pub fn parse_date(text: &str) -> Result<i32, ValueError> {
    let bad = || ValueError::Malformed { what: "date", detail: text.to_string() };
    let mut parts = text.trim().splitn(3, '-');
    let year: i64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let month: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let day: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(bad());
    }
    Ok(days_from_civil(year, month, day))
}

pub fn format_date(days: i32) -> String {
    let (y, m, d) = civil_from_days(days);
    format!("{y:04}-{m:02}-{d:02}")
}

// Civil-date conversion on the proleptic Gregorian calendar.
fn days_from_civil(y: i64, m: u32, d: u32) -> i32 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = ((m as i64) + 9) % 12;
    let doy = (153 * mp + 2) / 5 + (d as i64) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    (era * 146097 + doe - 719468) as i32
}

fn civil_from_days(z: i32) -> (i64, u32, u32) {
    let z = z as i64 + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parse_and_format() {
        assert_eq!(parse_decimal("12.34", 12, 2).unwrap(), 1234);
        assert_eq!(parse_decimal("-0.05", 12, 2).unwrap(), -5);
        assert_eq!(parse_decimal("7", 12, 2).unwrap(), 700);
        assert_eq!(format_decimal(1234, 2), "12.34");
        assert_eq!(format_decimal(-5, 2), "-0.05");
        assert_eq!(format_decimal(42, 0), "42");
        // Scale/precision violations are rejected, not rounded.
        assert!(parse_decimal("1.234", 12, 2).is_err());
        assert!(parse_decimal("12345678901234567", 12, 2).is_err());
    }

    #[test]
    fn date_round_trip() {
        assert_eq!(parse_date("1970-01-01").unwrap(), 0);
        assert_eq!(parse_date("2010-01-01").unwrap(), 14610);
        for days in [-719468, -1, 0, 1, 14610, 19000, 2932896] {
            let text = format_date(days);
            assert_eq!(parse_date(&text).unwrap(), days, "round trip of {text}");
        }
    }

    #[test]
    fn key_comparison_is_lexicographic() {
        let a = vec![Value::Int64(1), Value::Int64(5)];
        let b = vec![Value::Int64(1), Value::Int64(7)];
        assert_eq!(compare_keys(&a, &b), Ordering::Less);
        assert_eq!(compare_keys(&b, &a), Ordering::Greater);
        assert_eq!(compare_keys(&a, &a), Ordering::Equal);
    }

    #[test]
    fn varchar_over_max_len_rejected() {
        let ty = ColumnType::new(TypeTag::Varchar { max_len: 3 });
        assert!(Value::Varchar(b"abcd".to_vec()).check_type(&ty).is_err());
        assert!(Value::Varchar(b"abc".to_vec()).check_type(&ty).is_ok());
    }
}
