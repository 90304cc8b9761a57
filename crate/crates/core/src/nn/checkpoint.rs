//! Binary checkpoints.
//!
//! Layout, little-endian: `b"VSCK1"`, modality code `u8`, then `u32`
//! input dim, hidden width, feed-forward layers and head outputs (0 when
//! there is no head), `u64` parameter count, then the encoder parameters in
//! the order documented on [`EncoderParams`](super::EncoderParams) followed
//! by the head's weight and bias, all as `f64`.

use super::{Dense, EncoderParams, EncoderShape, NnError};
use crate::features::Modality;
use std::io::{Read, Write};

const MAGIC: &[u8; 5] = b"VSCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub modality: Modality,
    pub encoder: EncoderParams,
    pub head: Option<Dense>,
}

fn io(e: std::io::Error) -> NnError {
    NnError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> Result<(), NnError> {
    let s = ck.encoder.shape;
    let head_out = ck.head.as_ref().map_or(0, |h| h.outputs);
    let count = ck.encoder.theta.len() + ck.head.as_ref().map_or(0, |h| h.theta.len());
    let mut buf = Vec::with_capacity(32 + count * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(ck.modality.code());
    for v in [s.input_dim, s.hidden, s.ff_layers, head_out] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    let head_theta = ck.head.as_ref().map_or(&[][..], |h| &h.theta[..]);
    for x in ck.encoder.theta.iter().chain(head_theta) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 30 || &bytes[..5] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let modality = Modality::from_code(bytes[5]).ok_or_else(|| bad("unknown modality"))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let shape = EncoderShape { input_dim: u32_at(6), hidden: u32_at(10), ff_layers: u32_at(14) };
    shape.validate()?;
    let head_out = u32_at(18);
    let count = u64::from_le_bytes(bytes[22..30].try_into().expect("8 bytes")) as usize;
    let enc_len = shape.param_count();
    let head_len = if head_out > 0 { shape.hidden * head_out + head_out } else { 0 };
    if count != enc_len + head_len || bytes.len() != 30 + count * 8 {
        return Err(bad("parameter count does not match shapes"));
    }
    let vals: Vec<f64> =
        bytes[30..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let encoder = EncoderParams { shape, theta: vals[..enc_len].to_vec() };
    let head = (head_out > 0).then(|| Dense { inputs: shape.hidden, outputs: head_out, theta: vals[enc_len..].to_vec() });
    Ok(Checkpoint { modality, encoder, head })
}
