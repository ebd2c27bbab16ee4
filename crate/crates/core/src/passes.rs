//! Pass execution abstraction.
//!
//! Every multi-pass builder expresses its pass as an associative fold over
//! edges with an explicitly serializable state. A `PassRunner` executes the
//! fold: the streaming runner walks the edge stream, while the two-party
//! runner folds party A's edges, moves the encoded state across the wire,
//! and lets party B continue — so the same builder code produces
//! bit-identical results in both settings.

use crate::error::{Error, Result};
use crate::stream::{EdgeRecord, EdgeSource, GraphHeader, MeterHandle};

// --- codec primitives (little-endian, fixed width) ---

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_i64(out: &mut Vec<u8>, v: i64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

pub fn get_u64(buf: &mut &[u8]) -> Result<u64> {
    if buf.len() < 8 {
        return Err(Error::Other("codec underrun".into()));
    }
    let (head, rest) = buf.split_at(8);
    *buf = rest;
    Ok(u64::from_le_bytes(head.try_into().unwrap()))
}

pub fn get_i64(buf: &mut &[u8]) -> Result<i64> {
    Ok(get_u64(buf)? as i64)
}

pub fn get_f64(buf: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_bits(get_u64(buf)?))
}

pub fn put_f64_slice(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for &x in v {
        put_f64(out, x);
    }
}

pub fn get_f64_vec(buf: &mut &[u8]) -> Result<Vec<f64>> {
    let len = get_u64(buf)? as usize;
    (0..len).map(|_| get_f64(buf)).collect()
}

/// A pass state that can cross the party boundary; decode(encode(s)) must
/// reproduce s exactly (bit-level) so joint and streaming runs agree.
pub trait WireCodec: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(buf: &mut &[u8]) -> Result<Self>;
}

impl WireCodec for Vec<f64> {
    fn encode(&self, out: &mut Vec<u8>) {
        put_f64_slice(out, self);
    }
    fn decode(buf: &mut &[u8]) -> Result<Self> {
        get_f64_vec(buf)
    }
}

impl WireCodec for Vec<Vec<f64>> {
    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.len() as u64);
        for row in self {
            put_f64_slice(out, row);
        }
    }
    fn decode(buf: &mut &[u8]) -> Result<Self> {
        let len = get_u64(buf)? as usize;
        (0..len).map(|_| get_f64_vec(buf)).collect()
    }
}

impl WireCodec for (f64, Vec<f64>) {
    fn encode(&self, out: &mut Vec<u8>) {
        put_f64(out, self.0);
        put_f64_slice(out, &self.1);
    }
    fn decode(buf: &mut &[u8]) -> Result<Self> {
        Ok((get_f64(buf)?, get_f64_vec(buf)?))
    }
}

impl WireCodec for f64 {
    fn encode(&self, out: &mut Vec<u8>) {
        put_f64(out, *self);
    }
    fn decode(buf: &mut &[u8]) -> Result<Self> {
        get_f64(buf)
    }
}

/// Executes edge folds; the only way builders touch the edge data.
pub trait PassRunner {
    fn header(&self) -> &GraphHeader;
    fn meters(&self) -> MeterHandle;
    fn run_pass<S: WireCodec>(
        &mut self,
        state: S,
        fold: &mut dyn FnMut(&mut S, &EdgeRecord) -> Result<()>,
    ) -> Result<S>;
}

/// Single-stream runner: a plain wrapper over an EdgeSource.
pub struct StreamRunner<'a> {
    pub src: &'a mut dyn EdgeSource,
}

impl<'a> StreamRunner<'a> {
    pub fn new(src: &'a mut dyn EdgeSource) -> Self {
        Self { src }
    }
}

impl<'a> PassRunner for StreamRunner<'a> {
    fn header(&self) -> &GraphHeader {
        self.src.header()
    }

    fn meters(&self) -> MeterHandle {
        self.src.meters()
    }

    fn run_pass<S: WireCodec>(
        &mut self,
        mut state: S,
        fold: &mut dyn FnMut(&mut S, &EdgeRecord) -> Result<()>,
    ) -> Result<S> {
        self.src.for_each_edge(&mut |e| fold(&mut state, e))?;
        Ok(state)
    }
}
