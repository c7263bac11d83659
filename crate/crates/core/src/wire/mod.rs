//! Framing and message codec for the device/server link.
//!
//! ```text
//! "SPC1" | version u8 | msg_type u8 | payload_len u32 | payload | crc32(payload) u32
//! ```
//!
//! All integers little-endian. See `docs/wire.md` for payload layouts.

mod bundle;
mod codec;

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::runtime::TimingReport;
use crate::tensor::{Box3D, Detections, TensorBundle};

pub use bundle::{
    bundle_encoded_len, decode_tensor_bundle, encode_tensor_bundle, payload_encoded_len, KIND_DENSE, KIND_SPARSE,
};
use codec::{Cursor, Sink};

pub const MAGIC: [u8; 4] = *b"SPC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1 << 31;

pub const MSG_HELLO: u8 = 1;
pub const MSG_INFER_REQUEST: u8 = 2;
pub const MSG_RESULT: u8 = 3;
pub const MSG_TIMING: u8 = 4;
pub const MSG_ERROR: u8 = 5;

/// Codes carried by ERROR frames.
pub const ERR_ARCH_MISMATCH: u16 = 1;
pub const ERR_PROTOCOL: u16 = 2;
pub const ERR_MALFORMED: u16 = 3;
pub const ERR_TAIL: u16 = 4;
pub const ERR_UNKNOWN_SPLIT: u16 = 5;

const DETECTION_BYTES: usize = 36;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: header says {expected:#010x}, payload is {actual:#010x}")]
    BadCrc { expected: u32, actual: u32 },
    #[error("truncated frame: need {needed} bytes")]
    Truncated { needed: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds limit")]
    Oversize(usize),
    #[error("non-canonical sparse tensor {0:?}")]
    NonCanonical(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

impl WireError {
    pub(crate) fn malformed(msg: &str) -> Self {
        WireError::Malformed(msg.to_owned())
    }

    /// More bytes may turn this into a valid frame.
    pub fn is_retryable(&self) -> bool {
        matches!(self, WireError::Truncated { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { seed: u64, arch_hash: u64 },
    InferRequest { split_label: String, bundle: TensorBundle },
    Result(Detections),
    Timing(TimingReport),
    Error { code: u16, text: String },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Hello { .. } => MSG_HELLO,
            Message::InferRequest { .. } => MSG_INFER_REQUEST,
            Message::Result(_) => MSG_RESULT,
            Message::Timing(_) => MSG_TIMING,
            Message::Error { .. } => MSG_ERROR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::InferRequest { .. } => "INFER_REQUEST",
            Message::Result(_) => "RESULT",
            Message::Timing(_) => "TIMING",
            Message::Error { .. } => "ERROR",
        }
    }
}

fn encode_payload(m: &Message) -> Result<Vec<u8>, WireError> {
    let mut out;
    match m {
        Message::Hello { seed, arch_hash } => {
            out = Sink::with_capacity(16);
            out.u64(*seed);
            out.u64(*arch_hash);
        }
        Message::InferRequest { split_label, bundle } => {
            out = Sink::with_capacity(1 + split_label.len() + bundle_encoded_len(bundle));
            out.short_str(split_label)?;
            bundle::encode_into(bundle, &mut out)?;
        }
        Message::Result(d) => {
            if d.scores.len() != d.boxes.len() || d.labels.len() != d.boxes.len() {
                return Err(WireError::malformed("detection columns differ in length"));
            }
            out = Sink::with_capacity(4 + d.len() * DETECTION_BYTES);
            out.u32(u32::try_from(d.len()).map_err(|_| WireError::Oversize(d.len()))?);
            for i in 0..d.len() {
                for v in d.boxes[i].to_array() {
                    out.f32(v);
                }
                out.f32(d.scores[i]);
                out.u32(d.labels[i]);
            }
        }
        Message::Timing(t) => {
            out = Sink::with_capacity(64 + t.split_label.len() + t.scene_id.len());
            for v in [
                t.head_compute_ms,
                t.transfer_ms,
                t.tail_compute_ms,
                t.result_return_ms,
                t.total_inference_ms,
                t.edge_execution_ms,
            ] {
                out.f64(v);
            }
            out.u64(t.payload_bytes);
            out.short_str(&t.split_label)?;
            out.str16(&t.scene_id)?;
        }
        Message::Error { code, text } => {
            out = Sink::with_capacity(4 + text.len());
            out.u16(*code);
            out.str16(text)?;
        }
    }
    Ok(out.into_inner())
}

fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut cur = Cursor::new(payload);
    let m = match msg_type {
        MSG_HELLO => Message::Hello { seed: cur.u64()?, arch_hash: cur.u64()? },
        MSG_INFER_REQUEST => {
            let split_label = cur.short_str()?;
            let bundle = bundle::decode_from(&mut cur)?;
            Message::InferRequest { split_label, bundle }
        }
        MSG_RESULT => {
            let n = cur.u32()? as usize;
            cur.ensure(n.checked_mul(DETECTION_BYTES).ok_or(WireError::malformed("count overflow"))?)?;
            let mut d = Detections::default();
            for _ in 0..n {
                let mut b = [0f32; 7];
                for v in &mut b {
                    *v = cur.f32()?;
                }
                d.boxes.push(Box3D::from_array(b));
                d.scores.push(cur.f32()?);
                d.labels.push(cur.u32()?);
            }
            Message::Result(d)
        }
        MSG_TIMING => {
            let mut v = [0f64; 6];
            for x in &mut v {
                *x = cur.f64()?;
            }
            Message::Timing(TimingReport {
                head_compute_ms: v[0],
                transfer_ms: v[1],
                tail_compute_ms: v[2],
                result_return_ms: v[3],
                total_inference_ms: v[4],
                edge_execution_ms: v[5],
                payload_bytes: cur.u64()?,
                split_label: cur.short_str()?,
                scene_id: cur.str16()?,
            })
        }
        MSG_ERROR => Message::Error { code: cur.u16()?, text: cur.str16()? },
        other => return Err(WireError::UnknownType(other)),
    };
    cur.finish()?;
    Ok(m)
}

/// Encodes one complete frame.
pub fn encode_frame(m: &Message) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(m)?;
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.msg_type());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Validates the fixed header and returns `(msg_type, payload_len)`.
fn decode_header(raw: &[u8]) -> Result<(u8, usize), WireError> {
    let have = raw.len().min(MAGIC.len());
    if raw[..have] != MAGIC[..have] {
        return Err(WireError::BadMagic);
    }
    let truncated = Err(WireError::Truncated { needed: HEADER_LEN });
    match raw.get(4) {
        None => return truncated,
        Some(&v) if v != VERSION => return Err(WireError::BadVersion(v)),
        _ => {}
    }
    let msg_type = match raw.get(5) {
        None => return truncated,
        Some(&t) if !(MSG_HELLO..=MSG_ERROR).contains(&t) => return Err(WireError::UnknownType(t)),
        Some(&t) => t,
    };
    if raw.len() < HEADER_LEN {
        return truncated;
    }
    let len = u32::from_le_bytes(raw[6..10].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    Ok((msg_type, len))
}

/// Decodes the frame at the start of `raw`, returning the message and the
/// number of bytes consumed.
pub fn decode_frame(raw: &[u8]) -> Result<(Message, usize), WireError> {
    let (msg_type, len) = decode_header(raw)?;
    let total = HEADER_LEN + len + TRAILER_LEN;
    if raw.len() < total {
        return Err(WireError::Truncated { needed: total });
    }
    let payload = &raw[HEADER_LEN..HEADER_LEN + len];
    let expected = u32::from_le_bytes(raw[HEADER_LEN + len..total].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if expected != actual {
        return Err(WireError::BadCrc { expected, actual });
    }
    Ok((decode_payload(msg_type, payload)?, total))
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("connection closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Reads exactly one frame from a stream. Returns `Closed` on a clean EOF
/// before the first header byte.
pub fn read_message<R: Read>(r: &mut R) -> Result<(Message, usize), ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(ReadError::Closed),
            Ok(0) => return Err(WireError::Truncated { needed: HEADER_LEN }.into()),
            Ok(n) => {
                got += n;
                match decode_header(&header[..got]) {
                    Err(e) if !e.is_retryable() => return Err(e.into()),
                    _ => {}
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (_, len) = decode_header(&header)?;
    let rest = (len + TRAILER_LEN) as u64;
    let mut frame = header.to_vec();
    // Grows with the bytes actually received rather than the claimed length.
    r.take(rest).read_to_end(&mut frame)?;
    if (frame.len() as u64) < HEADER_LEN as u64 + rest {
        return Err(WireError::Truncated { needed: HEADER_LEN + len + TRAILER_LEN }.into());
    }
    Ok(decode_frame(&frame)?)
}

/// Writes one frame and returns its size in bytes.
pub fn write_message<W: Write>(w: &mut W, m: &Message) -> Result<usize, ReadError> {
    let frame = encode_frame(m)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len())
}
