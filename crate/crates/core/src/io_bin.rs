//! Minimal little-endian binary codec used for model persistence.
//!
//! Every persisted artefact starts with a four-byte magic tag, a format
//! version and a payload kind, so stale or foreign files are rejected with a
//! clear error instead of being misinterpreted.

use std::io::{self, Read, Write};

/// Magic tag at the start of every binary artefact.
pub const MAGIC: [u8; 4] = *b"SFBM";
/// Current format version; bump on any layout change.
pub const FORMAT_VERSION: u16 = 1;

/// Payload kinds stored in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Pca = 1,
    Forest = 2,
    Ffnn = 3,
    PointSet = 4,
}

impl PayloadKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Pca),
            2 => Some(Self::Forest),
            3 => Some(Self::Ffnn),
            4 => Some(Self::PointSet),
            _ => None,
        }
    }
}

fn bad_data(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_header<W: Write>(w: &mut W, kind: PayloadKind) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    write_u16(w, FORMAT_VERSION)?;
    write_u8(w, kind as u8)
}

/// Reads and validates the header, returning an error when the magic tag,
/// version or payload kind does not match what the caller expects.
pub fn read_header<R: Read>(r: &mut R, expected: PayloadKind) -> io::Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(bad_data("not a model file (bad magic)"));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(bad_data(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let kind = read_u8(r)?;
    match PayloadKind::from_u8(kind) {
        Some(k) if k == expected => Ok(()),
        Some(k) => Err(bad_data(format!(
            "payload is {k:?}, expected {expected:?}"
        ))),
        None => Err(bad_data(format!("unknown payload kind {kind}"))),
    }
}

/// Reads and validates the header without constraining the payload kind.
pub fn read_any_header<R: Read>(r: &mut R) -> io::Result<PayloadKind> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(bad_data("not a model file (bad magic)"));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(bad_data(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let kind = read_u8(r)?;
    PayloadKind::from_u8(kind).ok_or_else(|| bad_data(format!("unknown payload kind {kind}")))
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub fn read_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Length-prefixed (u64) slice of f64 values.
pub fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> io::Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let len = read_len(r)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

/// Length-prefixed (u64) slice of u32 values.
pub fn write_u32_slice<W: Write>(w: &mut W, vs: &[u32]) -> io::Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_u32(w, v)?;
    }
    Ok(())
}

pub fn read_u32_vec<R: Read>(r: &mut R) -> io::Result<Vec<u32>> {
    let len = read_len(r)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_u32(r)?);
    }
    Ok(out)
}

pub fn write_string<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

pub fn read_string<R: Read>(r: &mut R) -> io::Result<String> {
    let len = read_len(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| bad_data(format!("invalid utf-8 string: {e}")))
}

/// Reads a u64 length prefix, guarding against absurd values from corrupt
/// files before any allocation happens.
fn read_len<R: Read>(r: &mut R) -> io::Result<usize> {
    let len = read_u64(r)?;
    const MAX_LEN: u64 = 1 << 34;
    if len > MAX_LEN {
        return Err(bad_data(format!("length prefix {len} exceeds sanity bound")));
    }
    Ok(len as usize)
}
