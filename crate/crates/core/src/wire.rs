//! Wire protocol between the SAL client and page stores.
//!
//! Little-endian, length-prefixed frames over any byte stream:
//!
//! ```text
//! frame := [u32 len][u8 msg_type][body]          (len = 1 + body length)
//!
//! msg_type 1 BATCH_READ_REQUEST
//!   request_id u64, slice_id u32, lsn u64, ndp_requested u8,
//!   descriptor_mode u8 (0=none, 1=fingerprint, 2=inline), fingerprint u64,
//!   desc_len u32 + desc bytes, n_pages u32, page_ids u64 × n
//!
//! msg_type 2 PAGE_RESULT
//!   request_id u64, page_id u64,
//!   status u8 (0=RAW, 1=NDP, 2=NDP_EMPTY, 3=NOT_FOUND),
//!   payload_len u32 + payload bytes
//!
//! msg_type 3 DESCRIPTOR_MISS
//!   request_id u64, fingerprint u64
//!
//! msg_type 4 END_OF_REQUEST
//!   request_id u64, then six u64 counters:
//!   admitted, skipped, cache_hits, cache_misses, compilations, pages_served
//! ```

use std::io::{Read, Write};

pub const MSG_BATCH_READ_REQUEST: u8 = 1;
pub const MSG_PAGE_RESULT: u8 = 2;
pub const MSG_DESCRIPTOR_MISS: u8 = 3;
pub const MSG_END_OF_REQUEST: u8 = 4;

pub const FRAME_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DescriptorMode {
    None = 0,
    Fingerprint = 1,
    Inline = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PageStatus {
    Raw = 0,
    Ndp = 1,
    NdpEmpty = 2,
    NotFound = 3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchReadRequest {
    pub request_id: u64,
    pub slice_id: u32,
    pub lsn: u64,
    pub ndp_requested: bool,
    pub descriptor_mode: DescriptorMode,
    pub fingerprint: u64,
    pub descriptor_bytes: Vec<u8>,
    pub page_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageResult {
    pub request_id: u64,
    pub page_id: u64,
    pub status: PageStatus,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorMiss {
    pub request_id: u64,
    pub fingerprint: u64,
}

/// Per-request counters from the serving page store, delivered with the
/// end-of-request marker so they work across process boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RequestStats {
    pub ndp_admitted: u64,
    pub ndp_skipped: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub predicate_compilations: u64,
    pub pages_served: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndOfRequest {
    pub request_id: u64,
    pub stats: RequestStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request(BatchReadRequest),
    Result(PageResult),
    Miss(DescriptorMiss),
    End(EndOfRequest),
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN} limit")]
    Oversize(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frames larger than this are rejected before allocation. Generous: the
/// largest legitimate frame is a raw 16 KiB page plus headers, or a request
/// carrying a descriptor and a few thousand page ids.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

impl Message {
    pub fn request_id(&self) -> u64 {
        match self {
            Message::Request(m) => m.request_id,
            Message::Result(m) => m.request_id,
            Message::Miss(m) => m.request_id,
            Message::End(m) => m.request_id,
        }
    }
}

fn body_of(msg: &Message) -> (u8, Vec<u8>) {
    match msg {
        Message::Request(m) => {
            let mut b = Vec::with_capacity(43 + m.descriptor_bytes.len() + m.page_ids.len() * 8);
            b.extend_from_slice(&m.request_id.to_le_bytes());
            b.extend_from_slice(&m.slice_id.to_le_bytes());
            b.extend_from_slice(&m.lsn.to_le_bytes());
            b.push(m.ndp_requested as u8);
            b.push(m.descriptor_mode as u8);
            b.extend_from_slice(&m.fingerprint.to_le_bytes());
            b.extend_from_slice(&(m.descriptor_bytes.len() as u32).to_le_bytes());
            b.extend_from_slice(&m.descriptor_bytes);
            b.extend_from_slice(&(m.page_ids.len() as u32).to_le_bytes());
            for id in &m.page_ids {
                b.extend_from_slice(&id.to_le_bytes());
            }
            (MSG_BATCH_READ_REQUEST, b)
        }
        Message::Result(m) => {
            let mut b = Vec::with_capacity(21 + m.payload.len());
            b.extend_from_slice(&m.request_id.to_le_bytes());
            b.extend_from_slice(&m.page_id.to_le_bytes());
            b.push(m.status as u8);
            b.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
            b.extend_from_slice(&m.payload);
            (MSG_PAGE_RESULT, b)
        }
        Message::Miss(m) => {
            let mut b = Vec::with_capacity(16);
            b.extend_from_slice(&m.request_id.to_le_bytes());
            b.extend_from_slice(&m.fingerprint.to_le_bytes());
            (MSG_DESCRIPTOR_MISS, b)
        }
        Message::End(m) => {
            let mut b = Vec::with_capacity(56);
            b.extend_from_slice(&m.request_id.to_le_bytes());
            for v in [
                m.stats.ndp_admitted,
                m.stats.ndp_skipped,
                m.stats.cache_hits,
                m.stats.cache_misses,
                m.stats.predicate_compilations,
                m.stats.pages_served,
            ] {
                b.extend_from_slice(&v.to_le_bytes());
            }
            (MSG_END_OF_REQUEST, b)
        }
    }
}

/// Serializes a message into one frame including the length prefix.
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let (ty, body) = body_of(msg);
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(ty);
    out.extend_from_slice(&body);
    out
}

/// Decodes one complete frame (including its length prefix).
pub fn decode_frame(frame: &[u8]) -> Result<Message, WireError> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(WireError::Malformed(format!("{} bytes is below header size", frame.len())));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    if len + 4 != frame.len() {
        return Err(WireError::Malformed(format!(
            "length prefix {len} disagrees with frame size {}",
            frame.len()
        )));
    }
    let ty = frame[4];
    let body = &frame[5..];
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], WireError> {
        if *pos + n > body.len() {
            return Err(WireError::Malformed(format!(
                "need {n} bytes at {pos}, have {}",
                body.len() - *pos
            )));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u8v = |pos: &mut usize| -> Result<u8, WireError> { Ok(take(pos, 1)?[0]) };
    let u32v = |pos: &mut usize| -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let u64v = |pos: &mut usize| -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };

    let msg = match ty {
        MSG_BATCH_READ_REQUEST => {
            let request_id = u64v(&mut pos)?;
            let slice_id = u32v(&mut pos)?;
            let lsn = u64v(&mut pos)?;
            let ndp_requested = match u8v(&mut pos)? {
                0 => false,
                1 => true,
                b => return Err(WireError::Malformed(format!("bad ndp_requested byte {b}"))),
            };
            let descriptor_mode = match u8v(&mut pos)? {
                0 => DescriptorMode::None,
                1 => DescriptorMode::Fingerprint,
                2 => DescriptorMode::Inline,
                b => return Err(WireError::Malformed(format!("bad descriptor mode {b}"))),
            };
            let fingerprint = u64v(&mut pos)?;
            let desc_len = u32v(&mut pos)? as usize;
            let descriptor_bytes = take(&mut pos, desc_len)?.to_vec();
            let n_pages = u32v(&mut pos)? as usize;
            let mut page_ids = Vec::with_capacity(n_pages.min(1 << 20));
            for _ in 0..n_pages {
                page_ids.push(u64v(&mut pos)?);
            }
            Message::Request(BatchReadRequest {
                request_id,
                slice_id,
                lsn,
                ndp_requested,
                descriptor_mode,
                fingerprint,
                descriptor_bytes,
                page_ids,
            })
        }
        MSG_PAGE_RESULT => {
            let request_id = u64v(&mut pos)?;
            let page_id = u64v(&mut pos)?;
            let status = match u8v(&mut pos)? {
                0 => PageStatus::Raw,
                1 => PageStatus::Ndp,
                2 => PageStatus::NdpEmpty,
                3 => PageStatus::NotFound,
                b => return Err(WireError::Malformed(format!("bad page status {b}"))),
            };
            let payload_len = u32v(&mut pos)? as usize;
            let payload = take(&mut pos, payload_len)?.to_vec();
            Message::Result(PageResult { request_id, page_id, status, payload })
        }
        MSG_DESCRIPTOR_MISS => {
            let request_id = u64v(&mut pos)?;
            let fingerprint = u64v(&mut pos)?;
            Message::Miss(DescriptorMiss { request_id, fingerprint })
        }
        MSG_END_OF_REQUEST => {
            let request_id = u64v(&mut pos)?;
            let stats = RequestStats {
                ndp_admitted: u64v(&mut pos)?,
                ndp_skipped: u64v(&mut pos)?,
                cache_hits: u64v(&mut pos)?,
                cache_misses: u64v(&mut pos)?,
                predicate_compilations: u64v(&mut pos)?,
                pages_served: u64v(&mut pos)?,
            };
            Message::End(EndOfRequest { request_id, stats })
        }
        t => return Err(WireError::UnknownType(t)),
    };
    if pos != body.len() {
        return Err(WireError::Malformed(format!("{} trailing bytes", body.len() - pos)));
    }
    Ok(msg)
}

/// Reads one frame from a stream. Returns `Ok(None)` on a clean EOF at a
/// frame boundary.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, WireError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len_buf);
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len));
    }
    let mut frame = vec![0u8; 4 + len as usize];
    frame[..4].copy_from_slice(&len_buf);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<(), WireError> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}
