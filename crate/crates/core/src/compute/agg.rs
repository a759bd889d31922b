//! Aggregation planning and finalization on the compute side.
//!
//! Query-level aggregates lower onto the shared accumulator functions:
//! AVG becomes SUM plus COUNT and divides only at finalization, and SUM
//! tracks a COUNT twin so empty inputs finalize to NULL the way SQL wants.
//! Division widens the scale by four digits and truncates toward zero,
//! identically whether the inputs were folded remotely or locally.

use crate::aggregate::{AggAccum, AggError};
use crate::descriptor::AggFunc;
use crate::record::AggEntry;
use crate::schema::Schema;
use crate::value::{TypeTag, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputAgg {
    CountStar,
    CountCol(usize),
    Sum(usize),
    Min(usize),
    Max(usize),
    Avg(usize),
}

/// One item of an aggregating query's output row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOutput {
    /// A grouping column (schema index).
    GroupCol(usize),
    Agg(OutputAgg),
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Count(usize),
    /// SUM finalizes NULL when its count twin is zero; `decimal` keeps the
    /// input column's representation in the output.
    Sum { sum: usize, count: usize, decimal: bool },
    MinMax(usize),
    Avg { sum: usize, count: usize },
}

#[derive(Debug, Clone)]
pub struct AggPlan {
    /// Grouping columns (schema indices); empty means scalar.
    pub group_by: Vec<usize>,
    pub outputs: Vec<AggOutput>,
    /// Accumulator functions, deduplicated; this is what the descriptor
    /// carries when aggregation is pushed.
    pub functions: Vec<AggFunc>,
    sources: Vec<Option<Source>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggPlanError {
    #[error("SUM/AVG require a numeric column, got {0}")]
    NotNumeric(String),
    #[error("aggregation over column {0} out of range")]
    ColumnOutOfRange(usize),
    #[error("too many distinct aggregation functions ({0}; the payload holds 8)")]
    TooMany(usize),
    #[error("finalization overflowed a 64-bit result")]
    Overflow,
    #[error(transparent)]
    Fold(#[from] AggError),
}

impl AggPlan {
    pub fn new(
        group_by: Vec<usize>,
        outputs: Vec<AggOutput>,
        schema: &Schema,
    ) -> Result<AggPlan, AggPlanError> {
        let mut functions: Vec<AggFunc> = Vec::new();
        let intern = |f: AggFunc, functions: &mut Vec<AggFunc>| -> usize {
            match functions.iter().position(|g| *g == f) {
                Some(i) => i,
                None => {
                    functions.push(f);
                    functions.len() - 1
                }
            }
        };
        let col_ok = |c: usize| -> Result<(), AggPlanError> {
            if c < schema.column_count() {
                Ok(())
            } else {
                Err(AggPlanError::ColumnOutOfRange(c))
            }
        };
        let numeric_scale = |c: usize| -> Result<u8, AggPlanError> {
            match schema.column_type(c).tag {
                TypeTag::Int64 => Ok(0),
                TypeTag::Decimal { scale, .. } => Ok(scale),
                other => Err(AggPlanError::NotNumeric(other.to_string())),
            }
        };

        let mut sources: Vec<Option<Source>> = Vec::with_capacity(outputs.len());
        for out in &outputs {
            let source = match out {
                AggOutput::GroupCol(_) => None,
                AggOutput::Agg(agg) => Some(match *agg {
                    OutputAgg::CountStar => Source::Count(intern(AggFunc::CountStar, &mut functions)),
                    OutputAgg::CountCol(c) => {
                        col_ok(c)?;
                        Source::Count(intern(AggFunc::CountCol(c as u16), &mut functions))
                    }
                    OutputAgg::Sum(c) => {
                        col_ok(c)?;
                        numeric_scale(c)?;
                        Source::Sum {
                            sum: intern(AggFunc::Sum(c as u16), &mut functions),
                            count: intern(AggFunc::CountCol(c as u16), &mut functions),
                            decimal: matches!(
                                schema.column_type(c).tag,
                                TypeTag::Decimal { .. }
                            ),
                        }
                    }
                    OutputAgg::Min(c) => {
                        col_ok(c)?;
                        Source::MinMax(intern(AggFunc::Min(c as u16), &mut functions))
                    }
                    OutputAgg::Max(c) => {
                        col_ok(c)?;
                        Source::MinMax(intern(AggFunc::Max(c as u16), &mut functions))
                    }
                    OutputAgg::Avg(c) => {
                        col_ok(c)?;
                        numeric_scale(c)?;
                        Source::Avg {
                            sum: intern(AggFunc::Sum(c as u16), &mut functions),
                            count: intern(AggFunc::CountCol(c as u16), &mut functions),
                        }
                    }
                }),
            };
            sources.push(source);
        }
        if functions.len() > 8 {
            return Err(AggPlanError::TooMany(functions.len()));
        }
        Ok(AggPlan { group_by, outputs, functions, sources })
    }

    pub fn is_scalar(&self) -> bool {
        self.group_by.is_empty()
    }

    pub fn identity(&self) -> AggAccum {
        AggAccum::identity(&self.functions)
    }

    /// Builds one output row from a finished group.
    pub fn finalize(&self, group_key: &[Value], accum: &AggAccum) -> Result<Vec<Value>, AggPlanError> {
        let count_at = |i: usize| match accum.entries[i] {
            AggEntry::Count(c) => c,
            _ => unreachable!("count source points at a count entry"),
        };
        let sum_at = |i: usize| match accum.entries[i] {
            AggEntry::Sum(s) => s,
            _ => unreachable!("sum source points at a sum entry"),
        };
        let mut row = Vec::with_capacity(self.outputs.len());
        for (out, source) in self.outputs.iter().zip(&self.sources) {
            let value = match (out, source) {
                (AggOutput::GroupCol(c), None) => {
                    let pos = self
                        .group_by
                        .iter()
                        .position(|g| g == c)
                        .expect("grouping output is a grouping column");
                    group_key[pos].clone()
                }
                (AggOutput::Agg(_), Some(Source::Count(i))) => Value::Int64(count_at(*i) as i64),
                (AggOutput::Agg(_), Some(Source::Sum { sum, count, decimal })) => {
                    if count_at(*count) == 0 {
                        Value::Null
                    } else {
                        let narrow =
                            i64::try_from(sum_at(*sum)).map_err(|_| AggPlanError::Overflow)?;
                        if *decimal {
                            Value::Decimal(narrow)
                        } else {
                            Value::Int64(narrow)
                        }
                    }
                }
                (AggOutput::Agg(_), Some(Source::MinMax(i))) => match &accum.entries[*i] {
                    AggEntry::Min(v) | AggEntry::Max(v) => v.clone().unwrap_or(Value::Null),
                    _ => unreachable!(),
                },
                (AggOutput::Agg(_), Some(Source::Avg { sum, count })) => {
                    let n = count_at(*count);
                    if n == 0 {
                        Value::Null
                    } else {
                        let scaled =
                            sum_at(*sum).checked_mul(10_000).ok_or(AggPlanError::Overflow)?;
                        let q = scaled / n as i128; // truncates toward zero
                        Value::Decimal(i64::try_from(q).map_err(|_| AggPlanError::Overflow)?)
                    }
                }
                _ => unreachable!("output/source shape mismatch"),
            };
            row.push(value);
        }
        Ok(row)
    }

    /// Result column types, for rendering.
    pub fn result_types(&self, schema: &Schema) -> Vec<TypeTag> {
        self.outputs
            .iter()
            .map(|out| match out {
                AggOutput::GroupCol(c) => schema.column_type(*c).tag,
                AggOutput::Agg(OutputAgg::CountStar) | AggOutput::Agg(OutputAgg::CountCol(_)) => {
                    TypeTag::Int64
                }
                AggOutput::Agg(OutputAgg::Sum(c)) => match schema.column_type(*c).tag {
                    TypeTag::Decimal { scale, .. } => {
                        TypeTag::Decimal { precision: 18, scale }
                    }
                    _ => TypeTag::Int64,
                },
                AggOutput::Agg(OutputAgg::Min(c)) | AggOutput::Agg(OutputAgg::Max(c)) => {
                    schema.column_type(*c).tag
                }
                AggOutput::Agg(OutputAgg::Avg(c)) => match schema.column_type(*c).tag {
                    TypeTag::Decimal { scale, .. } => {
                        TypeTag::Decimal { precision: 18, scale: scale.saturating_add(4) }
                    }
                    _ => TypeTag::Decimal { precision: 18, scale: 4 },
                },
            })
            .collect()
    }
}
