//! Record formats shared by compute and storage nodes.
//!
//! All records carry the same header: a status/delete byte followed by a
//! two-byte next-record offset that the page chain fills in. Pushdown
//! produces two extra record shapes on top of the regular ones: projected
//! records that carry only the key, transaction id, and requested columns,
//! and aggregate carrier records that additionally carry a folded payload
//! covering rows that were removed from the page.
//!
//! Wire layout (little-endian):
//!
//! ```text
//! [0]    bits 0..2 status code, bit 3 delete mark
//! [1..3] u16 next-record offset within the page (0 when standalone)
//! then, by status:
//!   INFIMUM / SUPREMUM   nothing
//!   NODE_PTR             u64 child page id, key fields
//!   ORDINARY             u64 trx id, all schema columns
//!   NDP_PROJECTION       u64 trx id, projected columns
//!   NDP_AGGREGATE        u64 trx id, projected columns, aggregate payload
//! fields := null bitmap (1 bit per present column, LSB first),
//!           fixed-width non-null values in column order,
//!           varchar non-null values in column order, each u16 length + bytes
//! ```

use crate::schema::Schema;
use crate::value::{TypeTag, Value, ValueError};

pub const REC_HEADER_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RecordStatus {
    Ordinary = 0,
    NodePtr = 1,
    Infimum = 2,
    Supremum = 3,
    NdpProjection = 4,
    NdpAggregate = 5,
}

impl RecordStatus {
    pub fn from_code(code: u8) -> Option<RecordStatus> {
        match code {
            0 => Some(RecordStatus::Ordinary),
            1 => Some(RecordStatus::NodePtr),
            2 => Some(RecordStatus::Infimum),
            3 => Some(RecordStatus::Supremum),
            4 => Some(RecordStatus::NdpProjection),
            5 => Some(RecordStatus::NdpAggregate),
            _ => None,
        }
    }

    pub fn is_ndp(&self) -> bool {
        matches!(self, RecordStatus::NdpProjection | RecordStatus::NdpAggregate)
    }

    pub fn is_pseudo(&self) -> bool {
        matches!(self, RecordStatus::Infimum | RecordStatus::Supremum)
    }
}

/// One folded accumulator inside an aggregate carrier payload.
///
/// COUNT and SUM always carry a value (identity 0 for an empty fold);
/// MIN/MAX of an empty fold are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggEntry {
    Count(u64),
    Sum(i128),
    Min(Option<Value>),
    Max(Option<Value>),
}

/// Folded aggregate state attached to a carrier record. Entries align
/// positionally with the descriptor's aggregation function list and cover
/// folded records excluding the carrier record itself.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AggPayload {
    pub entries: Vec<AggEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub status: RecordStatus,
    pub delete_mark: bool,
    pub trx_id: u64,
    /// Present column values: all schema columns for ORDINARY records, the
    /// projected columns (ascending schema index) for NDP records, the key
    /// columns for NODE_PTR records, empty for pseudo-records.
    pub values: Vec<Value>,
    /// Child page id, NODE_PTR records only.
    pub child_page_id: Option<u64>,
    /// Present iff status is NDP_AGGREGATE.
    pub agg_payload: Option<AggPayload>,
}

impl Record {
    pub fn ordinary(trx_id: u64, values: Vec<Value>) -> Record {
        Record {
            status: RecordStatus::Ordinary,
            delete_mark: false,
            trx_id,
            values,
            child_page_id: None,
            agg_payload: None,
        }
    }

    pub fn node_ptr(child_page_id: u64, key: Vec<Value>) -> Record {
        Record {
            status: RecordStatus::NodePtr,
            delete_mark: false,
            trx_id: 0,
            values: key,
            child_page_id: Some(child_page_id),
            agg_payload: None,
        }
    }

    pub fn pseudo(status: RecordStatus) -> Record {
        debug_assert!(status.is_pseudo());
        Record {
            status,
            delete_mark: false,
            trx_id: 0,
            values: Vec::new(),
            child_page_id: None,
            agg_payload: None,
        }
    }

    /// Primary-key values. Valid for any record shape that carries columns,
    /// because the key columns lead the schema and every projection keeps
    /// them in front.
    pub fn key<'a>(&'a self, schema: &Schema) -> &'a [Value] {
        &self.values[..schema.pk_prefix_len.min(self.values.len())]
    }
}

/// Borrowed view of one row's present columns, keyed by schema index.
/// Predicate evaluation and projection go through this instead of touching
/// `Record::values` directly so that full and projected layouts behave the
/// same.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub schema: &'a Schema,
    pub view: ColumnsView<'a>,
    pub values: &'a [Value],
}

impl<'a> RowView<'a> {
    pub fn full(schema: &'a Schema, values: &'a [Value]) -> RowView<'a> {
        RowView { schema, view: ColumnsView::Full, values }
    }

    pub fn projected(schema: &'a Schema, projection: &'a [usize], values: &'a [Value]) -> RowView<'a> {
        RowView { schema, view: ColumnsView::Projected(projection), values }
    }

    /// Builds the view matching a record's status: NDP record shapes use the
    /// descriptor projection when one is present.
    pub fn for_record(
        schema: &'a Schema,
        record: &'a Record,
        projection: Option<&'a [usize]>,
    ) -> RowView<'a> {
        match (record.status.is_ndp(), projection) {
            (true, Some(p)) => RowView::projected(schema, p, &record.values),
            _ => RowView::full(schema, &record.values),
        }
    }

    /// The value of a schema column, or `None` when the column is not
    /// carried by this row shape.
    pub fn get(&self, schema_index: usize) -> Option<&'a Value> {
        let pos = self.view.position_of(schema_index, self.schema)?;
        self.values.get(pos)
    }
}

/// Which columns a record carries, resolving schema column indices to
/// positions inside `Record::values`.
#[derive(Debug, Clone, Copy)]
pub enum ColumnsView<'a> {
    /// All schema columns in schema order.
    Full,
    /// The listed schema column indices (sorted ascending, key first).
    Projected(&'a [usize]),
}

impl<'a> ColumnsView<'a> {
    pub fn len(&self, schema: &Schema) -> usize {
        match self {
            ColumnsView::Full => schema.column_count(),
            ColumnsView::Projected(p) => p.len(),
        }
    }

    pub fn is_empty(&self, schema: &Schema) -> bool {
        self.len(schema) == 0
    }

    /// The schema index of the i-th present column.
    pub fn schema_index(&self, i: usize) -> usize {
        match self {
            ColumnsView::Full => i,
            ColumnsView::Projected(p) => p[i],
        }
    }

    /// Position of a schema column within the present columns, if carried.
    pub fn position_of(&self, schema_index: usize, schema: &Schema) -> Option<usize> {
        match self {
            ColumnsView::Full => (schema_index < schema.column_count()).then_some(schema_index),
            ColumnsView::Projected(p) => p.iter().position(|&ix| ix == schema_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("truncated record: need {need} bytes at offset {at}, have {have}")]
    Truncated { at: usize, need: usize, have: usize },
    #[error("unknown record status code {0}")]
    UnknownStatus(u8),
    #[error("value error: {0}")]
    Value(#[from] ValueError),
    #[error("record carries {got} values but layout expects {want}")]
    ArityMismatch { got: usize, want: usize },
    #[error("aggregate payload only valid on NDP_AGGREGATE records")]
    UnexpectedPayload,
    #[error("NDP_AGGREGATE record is missing its payload")]
    MissingPayload,
    #[error("NDP_AGGREGATE records cannot be delete-marked")]
    DeleteMarkedCarrier,
    #[error("primary-key column {0} is NULL")]
    NullKey(usize),
    #[error("malformed aggregate payload: {0}")]
    BadPayload(String),
    #[error("varchar length prefix {len} overruns record ({have} bytes left)")]
    BadVarLen { len: usize, have: usize },
}

fn view_for<'a>(status: RecordStatus, projection: Option<&'a [usize]>) -> ColumnsView<'a> {
    match (status, projection) {
        (RecordStatus::NdpProjection | RecordStatus::NdpAggregate, Some(p)) => {
            ColumnsView::Projected(p)
        }
        _ => ColumnsView::Full,
    }
}

/// Encodes a record. `projection` is the descriptor's projected column list
/// and is consulted only for NDP record shapes. The next-record offset is
/// written as zero; page serialization patches it.
pub fn encode_record(
    schema: &Schema,
    record: &Record,
    projection: Option<&[usize]>,
) -> Result<Vec<u8>, RecordError> {
    let mut out = Vec::with_capacity(32);
    let status_byte = (record.status as u8) | ((record.delete_mark as u8) << 3);
    out.push(status_byte);
    out.extend_from_slice(&0u16.to_le_bytes());

    match record.status {
        RecordStatus::Infimum | RecordStatus::Supremum => return Ok(out),
        RecordStatus::NodePtr => {
            out.extend_from_slice(&record.child_page_id.unwrap_or(0).to_le_bytes());
            let key_indices: Vec<usize> = schema.pk_indices().collect();
            encode_fields(schema, &ColumnsView::Projected(&key_indices), &record.values, &mut out)?;
            return Ok(out);
        }
        RecordStatus::Ordinary | RecordStatus::NdpProjection | RecordStatus::NdpAggregate => {}
    }

    if record.status == RecordStatus::NdpAggregate {
        if record.agg_payload.is_none() {
            return Err(RecordError::MissingPayload);
        }
        if record.delete_mark {
            return Err(RecordError::DeleteMarkedCarrier);
        }
    } else if record.agg_payload.is_some() {
        return Err(RecordError::UnexpectedPayload);
    }

    out.extend_from_slice(&record.trx_id.to_le_bytes());
    let view = view_for(record.status, projection);
    encode_fields(schema, &view, &record.values, &mut out)?;

    if let Some(payload) = &record.agg_payload {
        encode_payload(payload, &mut out)?;
    }
    Ok(out)
}

fn encode_fields(
    schema: &Schema,
    view: &ColumnsView,
    values: &[Value],
    out: &mut Vec<u8>,
) -> Result<(), RecordError> {
    let n = view.len(schema);
    if values.len() != n {
        return Err(RecordError::ArityMismatch { got: values.len(), want: n });
    }
    let mut bitmap = vec![0u8; n.div_ceil(8)];
    for (i, v) in values.iter().enumerate() {
        let schema_ix = view.schema_index(i);
        if v.is_null() {
            if schema_ix < schema.pk_prefix_len {
                return Err(RecordError::NullKey(schema_ix));
            }
            bitmap[i / 8] |= 1 << (i % 8);
        }
        v.check_type(schema.column_type(schema_ix))?;
    }
    out.extend_from_slice(&bitmap);
    // Fixed-width fields first, then variable-length.
    for (i, v) in values.iter().enumerate() {
        if v.is_null() {
            continue;
        }
        let tag = schema.column_type(view.schema_index(i)).tag;
        match (tag, v) {
            (TypeTag::Int64, Value::Int64(x)) => out.extend_from_slice(&x.to_le_bytes()),
            (TypeTag::Decimal { .. }, Value::Decimal(x)) => out.extend_from_slice(&x.to_le_bytes()),
            (TypeTag::Date, Value::Date(x)) => out.extend_from_slice(&x.to_le_bytes()),
            (TypeTag::Varchar { .. }, Value::Varchar(_)) => {}
            _ => unreachable!("check_type admitted a mismatched value"),
        }
    }
    for (i, v) in values.iter().enumerate() {
        if v.is_null() {
            continue;
        }
        if let (TypeTag::Varchar { .. }, Value::Varchar(bytes)) =
            (schema.column_type(view.schema_index(i)).tag, v)
        {
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
        }
    }
    Ok(())
}

fn encode_payload(payload: &AggPayload, out: &mut Vec<u8>) -> Result<(), RecordError> {
    if payload.entries.len() > 8 {
        return Err(RecordError::BadPayload(format!(
            "{} aggregate functions exceed the 8-entry payload limit",
            payload.entries.len()
        )));
    }
    out.push(payload.entries.len() as u8);
    let mut bitmap = 0u8;
    for (i, e) in payload.entries.iter().enumerate() {
        let present = !matches!(e, AggEntry::Min(None) | AggEntry::Max(None));
        if present {
            bitmap |= 1 << i;
        }
    }
    out.push(bitmap);
    for e in &payload.entries {
        match e {
            AggEntry::Count(c) => {
                out.push(0);
                out.extend_from_slice(&c.to_le_bytes());
            }
            AggEntry::Sum(s) => {
                out.push(1);
                out.extend_from_slice(&s.to_le_bytes());
            }
            AggEntry::Min(v) => {
                out.push(2);
                if let Some(v) = v {
                    encode_payload_value(v, out);
                }
            }
            AggEntry::Max(v) => {
                out.push(3);
                if let Some(v) = v {
                    encode_payload_value(v, out);
                }
            }
        }
    }
    Ok(())
}

fn encode_payload_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Int64(x) => {
            out.push(0);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::Decimal(x) => {
            out.push(1);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::Date(x) => {
            out.push(2);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::Varchar(b) => {
            out.push(3);
            out.extend_from_slice(&(b.len() as u16).to_le_bytes());
            out.extend_from_slice(b);
        }
        Value::Null => unreachable!("absent min/max is encoded via the presence bitmap"),
    }
}

/// Cursor over a byte slice with truncation checks.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], RecordError> {
        if self.pos + n > self.buf.len() {
            return Err(RecordError::Truncated {
                at: self.pos,
                need: n,
                have: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, RecordError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, RecordError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RecordError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, RecordError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, RecordError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i128(&mut self) -> Result<i128, RecordError> {
        Ok(i128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
}

/// Decodes one record from the start of `bytes`, returning it together with
/// the number of bytes consumed and the raw next-record offset from the
/// header. `projection` must be the descriptor's projection when decoding
/// NDP record shapes produced under one.
pub fn decode_record(
    bytes: &[u8],
    schema: &Schema,
    projection: Option<&[usize]>,
) -> Result<(Record, usize, u16), RecordError> {
    let mut r = Reader::new(bytes);
    let status_byte = r.u8()?;
    let status =
        RecordStatus::from_code(status_byte & 0x7).ok_or(RecordError::UnknownStatus(status_byte & 0x7))?;
    let delete_mark = status_byte & 0x8 != 0;
    let next = r.u16()?;

    let mut record = Record {
        status,
        delete_mark,
        trx_id: 0,
        values: Vec::new(),
        child_page_id: None,
        agg_payload: None,
    };

    match status {
        RecordStatus::Infimum | RecordStatus::Supremum => {}
        RecordStatus::NodePtr => {
            record.child_page_id = Some(r.u64()?);
            let key_indices: Vec<usize> = schema.pk_indices().collect();
            record.values = decode_fields(schema, &ColumnsView::Projected(&key_indices), &mut r)?;
        }
        RecordStatus::Ordinary | RecordStatus::NdpProjection | RecordStatus::NdpAggregate => {
            record.trx_id = r.u64()?;
            let view = view_for(status, projection);
            record.values = decode_fields(schema, &view, &mut r)?;
            if status == RecordStatus::NdpAggregate {
                record.agg_payload = Some(decode_payload(&mut r)?);
                if delete_mark {
                    return Err(RecordError::DeleteMarkedCarrier);
                }
            }
        }
    }
    Ok((record, r.pos, next))
}

fn decode_fields(
    schema: &Schema,
    view: &ColumnsView,
    r: &mut Reader,
) -> Result<Vec<Value>, RecordError> {
    let n = view.len(schema);
    let bitmap = r.take(n.div_ceil(8))?.to_vec();
    let is_null = |i: usize| bitmap[i / 8] & (1 << (i % 8)) != 0;
    let mut values = vec![Value::Null; n];
    for (i, slot) in values.iter_mut().enumerate() {
        if is_null(i) {
            continue;
        }
        match schema.column_type(view.schema_index(i)).tag {
            TypeTag::Int64 => *slot = Value::Int64(r.i64()?),
            TypeTag::Decimal { .. } => *slot = Value::Decimal(r.i64()?),
            TypeTag::Date => *slot = Value::Date(r.i32()?),
            TypeTag::Varchar { .. } => {}
        }
    }
    for (i, slot) in values.iter_mut().enumerate() {
        if is_null(i) {
            continue;
        }
        if let TypeTag::Varchar { max_len } = schema.column_type(view.schema_index(i)).tag {
            let len = r.u16()? as usize;
            if len > max_len as usize {
                return Err(RecordError::BadVarLen { len, have: r.buf.len() - r.pos });
            }
            let bytes = r
                .take(len)
                .map_err(|_| RecordError::BadVarLen { len, have: r.buf.len() - r.pos })?;
            *slot = Value::Varchar(bytes.to_vec());
        }
    }
    Ok(values)
}

fn decode_payload(r: &mut Reader) -> Result<AggPayload, RecordError> {
    let n = r.u8()? as usize;
    if n > 8 {
        return Err(RecordError::BadPayload(format!("{n} entries")));
    }
    let bitmap = r.u8()?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let present = bitmap & (1 << i) != 0;
        let kind = r.u8()?;
        let entry = match kind {
            0 if present => AggEntry::Count(r.u64()?),
            1 if present => AggEntry::Sum(r.i128()?),
            2 => AggEntry::Min(if present { Some(decode_payload_value(r)?) } else { None }),
            3 => AggEntry::Max(if present { Some(decode_payload_value(r)?) } else { None }),
            0 | 1 => {
                return Err(RecordError::BadPayload("count/sum entry marked absent".into()))
            }
            k => return Err(RecordError::BadPayload(format!("unknown entry kind {k}"))),
        };
        entries.push(entry);
    }
    Ok(AggPayload { entries })
}

fn decode_payload_value(r: &mut Reader) -> Result<Value, RecordError> {
    match r.u8()? {
        0 => Ok(Value::Int64(r.i64()?)),
        1 => Ok(Value::Decimal(r.i64()?)),
        2 => Ok(Value::Date(r.i32()?)),
        3 => {
            let len = r.u16()? as usize;
            Ok(Value::Varchar(r.take(len)?.to_vec()))
        }
        t => Err(RecordError::BadPayload(format!("unknown value tag {t}"))),
    }
}
