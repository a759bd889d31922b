//! Aggregate folding shared by the storage-side pipeline and the
//! compute-side accumulator.
//!
//! Both sides must fold identically or pushed and residual work would
//! disagree, so the arithmetic lives here exactly once: exact integer
//! arithmetic, sums widened to 128 bits, no floating point anywhere.

use crate::descriptor::AggFunc;
use crate::record::{AggEntry, AggPayload, RowView};
use crate::value::Value;
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggError {
    #[error("payload has {got} entries, spec has {want} functions")]
    Shape { got: usize, want: usize },
    #[error("payload entry {0} does not match its function kind")]
    KindMismatch(usize),
    #[error("aggregate input column {0} is absent from the row")]
    ColumnAbsent(usize),
    #[error("SUM input is not numeric: {0}")]
    NotNumeric(String),
}

/// Running accumulator aligned with a descriptor's function list. The
/// identity state is count 0, sum 0, min/max absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggAccum {
    pub entries: Vec<AggEntry>,
}

impl AggAccum {
    pub fn identity(functions: &[AggFunc]) -> AggAccum {
        let entries = functions
            .iter()
            .map(|f| match f {
                AggFunc::CountStar | AggFunc::CountCol(_) => AggEntry::Count(0),
                AggFunc::Sum(_) => AggEntry::Sum(0),
                AggFunc::Min(_) => AggEntry::Min(None),
                AggFunc::Max(_) => AggEntry::Max(None),
            })
            .collect();
        AggAccum { entries }
    }

    /// Folds one row's own values into the accumulator. NULL inputs are
    /// ignored by everything except COUNT(*).
    pub fn fold_row(&mut self, functions: &[AggFunc], row: &RowView) -> Result<(), AggError> {
        debug_assert_eq!(functions.len(), self.entries.len());
        for (i, f) in functions.iter().enumerate() {
            let input = match f.input_column() {
                None => None,
                Some(c) => {
                    Some(row.get(c as usize).ok_or(AggError::ColumnAbsent(c as usize))?)
                }
            };
            match (&mut self.entries[i], f, input) {
                (AggEntry::Count(n), AggFunc::CountStar, None) => *n += 1,
                (AggEntry::Count(n), AggFunc::CountCol(_), Some(v)) => {
                    if !v.is_null() {
                        *n += 1;
                    }
                }
                (AggEntry::Sum(s), AggFunc::Sum(_), Some(v)) => {
                    if !v.is_null() {
                        let x = v.as_i128().ok_or_else(|| AggError::NotNumeric(format!("{v:?}")))?;
                        *s += x;
                    }
                }
                (AggEntry::Min(m), AggFunc::Min(_), Some(v)) => {
                    if !v.is_null() {
                        replace_if(m, v, Ordering::Less);
                    }
                }
                (AggEntry::Max(m), AggFunc::Max(_), Some(v)) => {
                    if !v.is_null() {
                        replace_if(m, v, Ordering::Greater);
                    }
                }
                _ => return Err(AggError::KindMismatch(i)),
            }
        }
        Ok(())
    }

    /// Merges a folded payload (another accumulator's state) into this one.
    pub fn merge_payload(&mut self, payload: &AggPayload) -> Result<(), AggError> {
        if payload.entries.len() != self.entries.len() {
            return Err(AggError::Shape { got: payload.entries.len(), want: self.entries.len() });
        }
        for (i, (mine, theirs)) in
            self.entries.iter_mut().zip(payload.entries.iter()).enumerate()
        {
            match (mine, theirs) {
                (AggEntry::Count(a), AggEntry::Count(b)) => *a += b,
                (AggEntry::Sum(a), AggEntry::Sum(b)) => *a += b,
                (AggEntry::Min(a), AggEntry::Min(b)) => {
                    if let Some(v) = b {
                        replace_if(a, v, Ordering::Less);
                    }
                }
                (AggEntry::Max(a), AggEntry::Max(b)) => {
                    if let Some(v) = b {
                        replace_if(a, v, Ordering::Greater);
                    }
                }
                _ => return Err(AggError::KindMismatch(i)),
            }
        }
        Ok(())
    }

    pub fn to_payload(&self) -> AggPayload {
        AggPayload { entries: self.entries.clone() }
    }
}

fn replace_if(slot: &mut Option<Value>, candidate: &Value, when: Ordering) {
    match slot {
        None => *slot = Some(candidate.clone()),
        Some(current) => {
            if candidate.cmp_same_type(current) == when {
                *slot = Some(candidate.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Schema;
    use crate::value::{ColumnType as Ct, TypeTag as T};

    fn schema() -> Schema {
        Schema::new(
            "t",
            vec![("id", Ct::new(T::Int64)), ("v", Ct::nullable(T::Int64))],
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn fold_then_merge_equals_single_fold() {
        let s = schema();
        let functions =
            vec![AggFunc::CountStar, AggFunc::CountCol(1), AggFunc::Sum(1), AggFunc::Min(1), AggFunc::Max(1)];
        let rows: Vec<Vec<Value>> = vec![
            vec![Value::Int64(1), Value::Int64(5)],
            vec![Value::Int64(2), Value::Null],
            vec![Value::Int64(3), Value::Int64(-2)],
            vec![Value::Int64(4), Value::Int64(9)],
        ];

        let mut whole = AggAccum::identity(&functions);
        for r in &rows {
            whole.fold_row(&functions, &RowView::full(&s, r)).unwrap();
        }

        let mut left = AggAccum::identity(&functions);
        let mut right = AggAccum::identity(&functions);
        for r in &rows[..2] {
            left.fold_row(&functions, &RowView::full(&s, r)).unwrap();
        }
        for r in &rows[2..] {
            right.fold_row(&functions, &RowView::full(&s, r)).unwrap();
        }
        let mut merged = AggAccum::identity(&functions);
        merged.merge_payload(&left.to_payload()).unwrap();
        merged.merge_payload(&right.to_payload()).unwrap();

        assert_eq!(merged, whole);
        assert_eq!(
            whole.entries,
            vec![
                AggEntry::Count(4),
                AggEntry::Count(3),
                AggEntry::Sum(12),
                AggEntry::Min(Some(Value::Int64(-2))),
                AggEntry::Max(Some(Value::Int64(9))),
            ]
        );
    }

    #[test]
    fn empty_fold_is_identity() {
        let functions = vec![AggFunc::CountStar, AggFunc::Sum(1), AggFunc::Min(1)];
        let acc = AggAccum::identity(&functions);
        assert_eq!(
            acc.entries,
            vec![AggEntry::Count(0), AggEntry::Sum(0), AggEntry::Min(None)]
        );
    }
}
