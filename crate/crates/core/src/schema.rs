//! Table schemas for the clustered index.
//!
//! The primary key is a prefix of the column list. A secondary index is
//! modeled as another table whose schema is the index columns followed by
//! the primary key, so one schema shape covers both.

use crate::value::{ColumnType, TypeTag};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema must have at least one primary-key column")]
    EmptyKey,
    #[error("pk_prefix_len {0} exceeds column count {1}")]
    KeyPrefixTooLong(usize, usize),
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("primary-key column {0:?} must not be nullable")]
    NullableKey(String),
    #[error("decimal precision {0} exceeds 18 digits")]
    PrecisionTooHigh(u8),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub table_name: String,
    pub columns: Vec<Column>,
    pub pk_prefix_len: usize,
    pub index_id: u64,
}

impl Schema {
    pub fn new(
        table_name: impl Into<String>,
        columns: Vec<(&str, ColumnType)>,
        pk_prefix_len: usize,
        index_id: u64,
    ) -> Result<Schema, SchemaError> {
        let columns = columns
            .into_iter()
            .map(|(name, ty)| Column { name: name.to_string(), ty })
            .collect();
        let schema = Schema { table_name: table_name.into(), columns, pk_prefix_len, index_id };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.pk_prefix_len == 0 {
            return Err(SchemaError::EmptyKey);
        }
        if self.pk_prefix_len > self.columns.len() {
            return Err(SchemaError::KeyPrefixTooLong(self.pk_prefix_len, self.columns.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, col) in self.columns.iter().enumerate() {
            if !seen.insert(col.name.as_str()) {
                return Err(SchemaError::DuplicateColumn(col.name.clone()));
            }
            if i < self.pk_prefix_len && col.ty.nullable {
                return Err(SchemaError::NullableKey(col.name.clone()));
            }
            if let TypeTag::Decimal { precision, .. } = col.ty.tag {
                if precision > crate::value::MAX_DECIMAL_PRECISION {
                    return Err(SchemaError::PrecisionTooHigh(precision));
                }
            }
        }
        Ok(())
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, SchemaError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SchemaError::UnknownColumn(name.to_string()))
    }

    pub fn column_type(&self, index: usize) -> &ColumnType {
        &self.columns[index].ty
    }

    pub fn pk_indices(&self) -> std::ops::Range<usize> {
        0..self.pk_prefix_len
    }

    /// Column types in schema order, as carried in the pushdown descriptor.
    pub fn column_types(&self) -> Vec<ColumnType> {
        self.columns.iter().map(|c| c.ty).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::ColumnType as Ct;

    #[test]
    fn rejects_nullable_key_and_duplicates() {
        let err = Schema::new(
            "t",
            vec![("id", Ct::nullable(TypeTag::Int64)), ("v", Ct::new(TypeTag::Int64))],
            1,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::NullableKey(_)));

        let err = Schema::new(
            "t",
            vec![("id", Ct::new(TypeTag::Int64)), ("id", Ct::new(TypeTag::Int64))],
            1,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateColumn(_)));
    }

    #[test]
    fn column_lookup() {
        let s = Schema::new(
            "t",
            vec![("id", Ct::new(TypeTag::Int64)), ("v", Ct::new(TypeTag::Int64))],
            1,
            7,
        )
        .unwrap();
        assert_eq!(s.column_index("v").unwrap(), 1);
        assert!(s.column_index("w").is_err());
    }
}
