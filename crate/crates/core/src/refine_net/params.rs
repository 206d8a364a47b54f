//! `F3NP` parameter files: header, architecture, anchor constants (f64) and the
//! trainable tensors as little-endian f32 in the network's fixed tensor order.

use std::path::Path;

use super::net::{NetArch, Network};
use super::targets::CanonicalAnchor;
use super::RefineError;

const MAGIC: &[u8; 4] = b"F3NP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub net: Network,
    pub anchor: CanonicalAnchor,
}

pub fn encode_params(p: &NetParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let arch = &p.net.arch;
    out.push(arch.regression as u8);
    out.extend_from_slice(&(arch.widths.len() as u32).to_le_bytes());
    for &w in &arch.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(arch.hidden as u32).to_le_bytes());
    for v in p.anchor.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let tensors = p.net.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for &v in t.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RefineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| RefineError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RefineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_params(buf: &[u8]) -> Result<NetParams, RefineError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(RefineError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RefineError::Format(format!("unsupported version {version}")));
    }
    let regression = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(RefineError::Format(format!("bad head flag {b}"))),
    };
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(RefineError::Format(format!("implausible block count {n}")));
    }
    let widths = (0..n).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
    let hidden = r.u32()? as usize;
    let mut anchor = [0.0; 9];
    for a in &mut anchor {
        *a = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    }
    let arch = NetArch { widths, hidden, regression };
    let mut net = Network::new(arch, 0).map_err(|e| RefineError::Format(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = net.tensors_mut();
    if count != tensors.len() {
        return Err(RefineError::Format(format!("expected {} tensors, found {count}", tensors.len())));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let len = r.u32()? as usize;
        if len != t.len() {
            return Err(RefineError::Format(format!("tensor {i}: expected {} values, found {len}", t.len())));
        }
        let raw = r.take(len * 4)?;
        for (v, c) in t.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
    }
    if r.pos != buf.len() {
        return Err(RefineError::Format("trailing bytes".into()));
    }
    Ok(NetParams { net, anchor: CanonicalAnchor::from_array(anchor) })
}

pub fn save_params(path: &Path, p: &NetParams) -> Result<(), RefineError> {
    std::fs::write(path, encode_params(p)).map_err(|source| RefineError::Io { path: path.to_path_buf(), source })
}

pub fn load_params(path: &Path) -> Result<NetParams, RefineError> {
    let buf = std::fs::read(path).map_err(|source| RefineError::Io { path: path.to_path_buf(), source })?;
    decode_params(&buf)
}
