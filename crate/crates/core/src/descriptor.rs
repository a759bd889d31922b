//! The per-table pushdown descriptor.
//!
//! One descriptor travels with every pushdown-enabled batch read and tells
//! the page store everything it needs: enough schema to decode records,
//! which columns to keep, the compiled predicate, the aggregation spec,
//! and the read view's low watermark for the visibility check. The
//! fingerprint keys the storage-side descriptor cache, so it must be
//! deterministic across processes and platforms.

use crate::predicate::{decode_program, encode_program, OpCode, PredProgram, ProgramError};
use crate::schema::Schema;
use crate::util::fnv1a64;
use crate::value::{ColumnType, TypeTag};

/// Aggregation functions a page store can fold. `CountCol`, `Sum`, `Min`
/// and `Max` name a schema column index; AVG never travels — the planner
/// lowers it to SUM plus COUNT and the compute node divides at
/// finalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    CountStar,
    CountCol(u16),
    Sum(u16),
    Min(u16),
    Max(u16),
}

impl AggFunc {
    pub fn input_column(&self) -> Option<u16> {
        match self {
            AggFunc::CountStar => None,
            AggFunc::CountCol(c) | AggFunc::Sum(c) | AggFunc::Min(c) | AggFunc::Max(c) => Some(*c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggSpec {
    pub functions: Vec<AggFunc>,
    /// Empty means scalar aggregation (and enables cross-page folding).
    pub group_by: Vec<u16>,
}

impl AggSpec {
    pub fn is_scalar(&self) -> bool {
        self.group_by.is_empty()
    }
}

/// Minimal schema knowledge for the storage side: column count and types,
/// fixed lengths (implied by the types), and the key prefix length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDigest {
    pub column_types: Vec<ColumnType>,
    pub pk_prefix_len: u16,
}

impl SchemaDigest {
    pub fn of(schema: &Schema) -> SchemaDigest {
        SchemaDigest {
            column_types: schema.column_types(),
            pk_prefix_len: schema.pk_prefix_len as u16,
        }
    }

    /// Synthesizes a schema the record codecs can work with. Column names
    /// do not travel in the descriptor; the storage side never needs them.
    pub fn to_schema(&self, index_id: u64) -> Schema {
        Schema {
            table_name: format!("index_{index_id}"),
            columns: self
                .column_types
                .iter()
                .enumerate()
                .map(|(i, ty)| crate::schema::Column { name: format!("c{i}"), ty: *ty })
                .collect(),
            pk_prefix_len: self.pk_prefix_len as usize,
            index_id,
        }
    }

    pub fn matches(&self, schema: &Schema) -> bool {
        self.pk_prefix_len as usize == schema.pk_prefix_len
            && self.column_types == schema.column_types()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdpDescriptor {
    pub index_id: u64,
    pub digest: SchemaDigest,
    /// Projected schema column indices, ascending; always includes the key
    /// prefix. `None` keeps full records.
    pub projection: Option<Vec<u16>>,
    pub predicate: Option<PredProgram>,
    pub aggregation: Option<AggSpec>,
    /// Records with `trx_id < low_watermark_trx_id` are provably visible to
    /// the scan; everything else is ambiguous to the page store.
    pub low_watermark_trx_id: u64,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("malformed descriptor: {0}")]
    Malformed(String),
    #[error("projection must be sorted, unique, and include the key prefix")]
    BadProjection,
    #[error("projection is missing column {0} required by the {1}")]
    MissingColumn(u16, &'static str),
    #[error("at most 8 aggregation functions are supported, got {0}")]
    TooManyAggs(usize),
    #[error("aggregation input column {0} is not summable or comparable as required")]
    BadAggColumn(u16),
    #[error("column index {0} out of range ({1} columns)")]
    ColumnOutOfRange(u16, usize),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

impl NdpDescriptor {
    pub fn new(
        schema: &Schema,
        projection: Option<Vec<u16>>,
        predicate: Option<PredProgram>,
        aggregation: Option<AggSpec>,
        low_watermark_trx_id: u64,
    ) -> Result<NdpDescriptor, DescriptorError> {
        let mut d = NdpDescriptor {
            index_id: schema.index_id,
            digest: SchemaDigest::of(schema),
            projection,
            predicate,
            aggregation,
            low_watermark_trx_id,
            fingerprint: 0,
        };
        if let Some(p) = &mut d.projection {
            p.sort_unstable();
            p.dedup();
        }
        d.validate()?;
        d.fingerprint = fnv1a64(&d.encode_body());
        Ok(d)
    }

    /// Projection as usize indices, when present.
    pub fn projection_usize(&self) -> Option<Vec<usize>> {
        self.projection.as_ref().map(|p| p.iter().map(|&i| i as usize).collect())
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        let ncols = self.digest.column_types.len();
        let check_col = |c: u16| -> Result<(), DescriptorError> {
            if (c as usize) < ncols {
                Ok(())
            } else {
                Err(DescriptorError::ColumnOutOfRange(c, ncols))
            }
        };
        if let Some(p) = &self.projection {
            if p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DescriptorError::BadProjection);
            }
            for &c in p {
                check_col(c)?;
            }
            for k in 0..self.digest.pk_prefix_len {
                if !p.contains(&k) {
                    return Err(DescriptorError::BadProjection);
                }
            }
        }
        let requires = |proj: &Option<Vec<u16>>, c: u16, what: &'static str| {
            match proj {
                Some(p) if !p.contains(&c) => Err(DescriptorError::MissingColumn(c, what)),
                _ => Ok(()),
            }
        };
        if let Some(prog) = &self.predicate {
            prog.validate()?;
            for op in &prog.code {
                if let OpCode::LoadCol(c) = op {
                    check_col(*c)?;
                    requires(&self.projection, *c, "predicate")?;
                }
            }
        }
        if let Some(agg) = &self.aggregation {
            if agg.functions.len() > 8 {
                return Err(DescriptorError::TooManyAggs(agg.functions.len()));
            }
            for f in &agg.functions {
                if let Some(c) = f.input_column() {
                    check_col(c)?;
                    requires(&self.projection, c, "aggregation")?;
                    if matches!(f, AggFunc::Sum(_))
                        && !self.digest.column_types[c as usize].tag.is_summable()
                    {
                        return Err(DescriptorError::BadAggColumn(c));
                    }
                }
            }
            for &c in &agg.group_by {
                check_col(c)?;
                requires(&self.projection, c, "grouping")?;
            }
        }
        Ok(())
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.index_id.to_le_bytes());
        out.extend_from_slice(&(self.digest.column_types.len() as u16).to_le_bytes());
        for ty in &self.digest.column_types {
            match ty.tag {
                TypeTag::Int64 => out.push(0),
                TypeTag::Decimal { precision, scale } => {
                    out.push(1);
                    out.push(precision);
                    out.push(scale);
                }
                TypeTag::Date => out.push(2),
                TypeTag::Varchar { max_len } => {
                    out.push(3);
                    out.extend_from_slice(&max_len.to_le_bytes());
                }
            }
            out.push(ty.nullable as u8);
        }
        out.extend_from_slice(&self.digest.pk_prefix_len.to_le_bytes());
        match &self.projection {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&(p.len() as u16).to_le_bytes());
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        match &self.predicate {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(prog) => {
                let bytes = encode_program(prog);
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(&bytes);
            }
        }
        match &self.aggregation {
            None => out.push(0),
            Some(agg) => {
                out.push(1);
                out.push(agg.functions.len() as u8);
                for f in &agg.functions {
                    let (kind, col) = match f {
                        AggFunc::CountStar => (0u8, 0u16),
                        AggFunc::CountCol(c) => (1, *c),
                        AggFunc::Sum(c) => (2, *c),
                        AggFunc::Min(c) => (3, *c),
                        AggFunc::Max(c) => (4, *c),
                    };
                    out.push(kind);
                    out.extend_from_slice(&col.to_le_bytes());
                }
                out.extend_from_slice(&(agg.group_by.len() as u16).to_le_bytes());
                for c in &agg.group_by {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.low_watermark_trx_id.to_le_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_body()
    }

    pub fn decode(bytes: &[u8]) -> Result<NdpDescriptor, DescriptorError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], DescriptorError> {
            if *pos + n > bytes.len() {
                return Err(DescriptorError::Malformed(format!(
                    "need {n} bytes at {pos}, have {}",
                    bytes.len() - *pos
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let u8v = |pos: &mut usize| -> Result<u8, DescriptorError> { Ok(take(pos, 1)?[0]) };
        let u16v = |pos: &mut usize| -> Result<u16, DescriptorError> {
            Ok(u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()))
        };
        let u32v = |pos: &mut usize| -> Result<u32, DescriptorError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let u64v = |pos: &mut usize| -> Result<u64, DescriptorError> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };

        let index_id = u64v(&mut pos)?;
        let ncols = u16v(&mut pos)? as usize;
        let mut column_types = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let tag = match u8v(&mut pos)? {
                0 => TypeTag::Int64,
                1 => {
                    let precision = u8v(&mut pos)?;
                    let scale = u8v(&mut pos)?;
                    TypeTag::Decimal { precision, scale }
                }
                2 => TypeTag::Date,
                3 => TypeTag::Varchar { max_len: u16v(&mut pos)? },
                t => return Err(DescriptorError::Malformed(format!("unknown type tag {t}"))),
            };
            let nullable = match u8v(&mut pos)? {
                0 => false,
                1 => true,
                b => return Err(DescriptorError::Malformed(format!("bad nullable byte {b}"))),
            };
            column_types.push(ColumnType { tag, nullable });
        }
        let pk_prefix_len = u16v(&mut pos)?;
        let projection = match u8v(&mut pos)? {
            0 => None,
            1 => {
                let n = u16v(&mut pos)? as usize;
                let mut p = Vec::with_capacity(n);
                for _ in 0..n {
                    p.push(u16v(&mut pos)?);
                }
                Some(p)
            }
            b => return Err(DescriptorError::Malformed(format!("bad projection flag {b}"))),
        };
        let pred_len = u32v(&mut pos)? as usize;
        let predicate = if pred_len == 0 {
            None
        } else {
            Some(decode_program(take(&mut pos, pred_len)?)?)
        };
        let aggregation = match u8v(&mut pos)? {
            0 => None,
            1 => {
                let n_funcs = u8v(&mut pos)? as usize;
                let mut functions = Vec::with_capacity(n_funcs);
                for _ in 0..n_funcs {
                    let kind = u8v(&mut pos)?;
                    let col = u16v(&mut pos)?;
                    functions.push(match kind {
                        0 => AggFunc::CountStar,
                        1 => AggFunc::CountCol(col),
                        2 => AggFunc::Sum(col),
                        3 => AggFunc::Min(col),
                        4 => AggFunc::Max(col),
                        k => {
                            return Err(DescriptorError::Malformed(format!(
                                "unknown aggregation kind {k}"
                            )))
                        }
                    });
                }
                let n_group = u16v(&mut pos)? as usize;
                let mut group_by = Vec::with_capacity(n_group);
                for _ in 0..n_group {
                    group_by.push(u16v(&mut pos)?);
                }
                Some(AggSpec { functions, group_by })
            }
            b => return Err(DescriptorError::Malformed(format!("bad aggregation flag {b}"))),
        };
        let low_watermark_trx_id = u64v(&mut pos)?;
        if pos != bytes.len() {
            return Err(DescriptorError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - pos
            )));
        }
        let mut d = NdpDescriptor {
            index_id,
            digest: SchemaDigest { column_types, pk_prefix_len },
            projection,
            predicate,
            aggregation,
            low_watermark_trx_id,
            fingerprint: 0,
        };
        d.validate()?;
        d.fingerprint = fnv1a64(&d.encode_body());
        Ok(d)
    }
}
