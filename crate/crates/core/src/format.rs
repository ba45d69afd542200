//! Binary envelope shared by feature stores, Gaussianizers and metrics:
//! a 4-byte magic, a little-endian u64 header length, a UTF-8 JSON header,
//! then little-endian f64 values.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn encode<H: Serialize>(magic: &[u8; 4], header: &H, values: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 4], bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let name = String::from_utf8_lossy(magic);
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(Error::Format(format!("not a {name} file")));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(12..)
        .filter(|b| b.len() >= len)
        .ok_or_else(|| Error::Format(format!("truncated {name} header")))?;
    let header = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Format(format!("{name} header: {e}")))?;
    let data = &body[len..];
    if data.len() % 8 != 0 {
        return Err(Error::Format(format!("{name} payload is not a whole number of f64")));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn write<H: Serialize>(path: &Path, magic: &[u8; 4], header: &H, values: &[f64]) -> Result<()> {
    let bytes = encode(magic, header, values)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path, magic: &[u8; 4]) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode(magic, &bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
