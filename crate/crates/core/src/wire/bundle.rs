//! Tensor bundle encoding.
//!
//! ```text
//! u16 entry_count
//! per entry:
//!   u8 id_len, id (UTF-8)
//!   u8 kind            0 = sparse, 1 = dense
//!   sparse: u16 channels, u32 D, u32 H, u32 W, u32 nnz,
//!           nnz x (i32 d, i32 h, i32 w), nnz x channels x f32
//!   dense:  u16 channels, u32 H, u32 W, channels x H x W x f32
//! ```
//!
//! Everything little-endian. Sparse entries must be canonical.

use crate::tensor::{DenseBevTensor, SparseVoxelTensor, TensorBundle, TensorPayload};

use super::codec::{Cursor, Sink};
use super::WireError;

pub const KIND_SPARSE: u8 = 0;
pub const KIND_DENSE: u8 = 1;

/// Exact encoded size of `b`, from shapes alone.
pub fn bundle_encoded_len(b: &TensorBundle) -> usize {
    2 + b
        .entries()
        .iter()
        .map(|(id, p)| 1 + id.len() + 1 + payload_encoded_len(p))
        .sum::<usize>()
}

pub fn payload_encoded_len(p: &TensorPayload) -> usize {
    match p {
        TensorPayload::Sparse(t) => 2 + 12 + 4 + t.nnz() * 12 + t.features.len() * 4,
        TensorPayload::Dense(t) => 2 + 8 + t.data.len() * 4,
    }
}

pub fn encode_tensor_bundle(b: &TensorBundle) -> Result<Vec<u8>, WireError> {
    let mut out = Sink::with_capacity(bundle_encoded_len(b));
    encode_into(b, &mut out)?;
    Ok(out.into_inner())
}

pub(crate) fn encode_into(b: &TensorBundle, out: &mut Sink) -> Result<(), WireError> {
    let count = u16::try_from(b.len()).map_err(|_| WireError::Oversize(b.len()))?;
    out.u16(count);
    for (id, payload) in b.entries() {
        out.short_str(id)?;
        out.u8(payload.kind_tag());
        match payload {
            TensorPayload::Sparse(t) => {
                if !t.is_canonical() {
                    return Err(WireError::NonCanonical(id.clone()));
                }
                out.u16(u16::try_from(t.channels).map_err(|_| WireError::Oversize(t.channels))?);
                for s in t.spatial_shape {
                    out.u32(s);
                }
                out.u32(u32::try_from(t.nnz()).map_err(|_| WireError::Oversize(t.nnz()))?);
                for c in &t.coords {
                    for v in c {
                        out.i32(*v);
                    }
                }
                out.f32s(&t.features);
            }
            TensorPayload::Dense(t) => {
                out.u16(u16::try_from(t.channels).map_err(|_| WireError::Oversize(t.channels))?);
                out.u32(u32::try_from(t.height).map_err(|_| WireError::Oversize(t.height))?);
                out.u32(u32::try_from(t.width).map_err(|_| WireError::Oversize(t.width))?);
                out.f32s(&t.data);
            }
        }
    }
    Ok(())
}

pub fn decode_tensor_bundle(raw: &[u8]) -> Result<TensorBundle, WireError> {
    let mut cur = Cursor::new(raw);
    let b = decode_from(&mut cur)?;
    cur.finish()?;
    Ok(b)
}

pub(crate) fn decode_from(cur: &mut Cursor) -> Result<TensorBundle, WireError> {
    let count = cur.u16()?;
    let mut bundle = TensorBundle::new();
    for _ in 0..count {
        let id = cur.short_str()?;
        let payload = match cur.u8()? {
            KIND_SPARSE => {
                let channels = cur.u16()? as usize;
                let shape = [cur.u32()?, cur.u32()?, cur.u32()?];
                let nnz = cur.u32()? as usize;
                let coord_bytes = nnz.checked_mul(12).ok_or(WireError::malformed("nnz overflow"))?;
                let feat_len = nnz.checked_mul(channels).ok_or(WireError::malformed("nnz overflow"))?;
                let feat_bytes = feat_len.checked_mul(4).ok_or(WireError::malformed("nnz overflow"))?;
                cur.ensure(coord_bytes.checked_add(feat_bytes).ok_or(WireError::malformed("nnz overflow"))?)?;
                let mut coords = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    coords.push([cur.i32()?, cur.i32()?, cur.i32()?]);
                }
                let features = cur.f32s(feat_len)?;
                let t = SparseVoxelTensor::new(shape, channels, coords, features)
                    .map_err(|e| WireError::Malformed(format!("{id}: {e}")))?;
                if !t.is_canonical() {
                    return Err(WireError::NonCanonical(id));
                }
                TensorPayload::Sparse(t)
            }
            KIND_DENSE => {
                let channels = cur.u16()? as usize;
                let (h, w) = (cur.u32()? as usize, cur.u32()? as usize);
                let len = channels
                    .checked_mul(h)
                    .and_then(|v| v.checked_mul(w))
                    .ok_or(WireError::malformed("dense size overflow"))?;
                cur.ensure(len.checked_mul(4).ok_or(WireError::malformed("dense size overflow"))?)?;
                let data = cur.f32s(len)?;
                TensorPayload::Dense(DenseBevTensor::new(channels, h, w, data).map_err(|e| WireError::Malformed(e.to_string()))?)
            }
            other => return Err(WireError::Malformed(format!("unknown tensor kind {other}"))),
        };
        bundle.push(id, payload).map_err(|e| WireError::Malformed(e.to_string()))?;
    }
    Ok(bundle)
}
