//! Flat binary parameter checkpoints.
//!
//! Layout: the magic `SGW1`, then per parameter, in declaration order:
//! name length (`u32` LE), UTF-8 name, rows (`u32` LE), cols (`u32` LE) and
//! `rows * cols` little-endian `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGW1";

pub fn write_params<W: Write>(mut w: W, params: &[(&str, &Matrix)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, m) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode(params: &[(&str, &Matrix)]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_params(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode(mut bytes: &[u8]) -> std::result::Result<Vec<(String, Matrix)>, String> {
    let mut magic = [0u8; 4];
    bytes
        .read_exact(&mut magic)
        .map_err(|_| "truncated header".to_string())?;
    if &magic != MAGIC {
        return Err("bad magic, expected SGW1".into());
    }
    let mut out = Vec::new();
    let read_u32 = |bytes: &mut &[u8]| -> std::result::Result<u32, String> {
        let mut b = [0u8; 4];
        bytes
            .read_exact(&mut b)
            .map_err(|_| "truncated record".to_string())?;
        Ok(u32::from_le_bytes(b))
    };
    while !bytes.is_empty() {
        let len = read_u32(&mut bytes)? as usize;
        if bytes.len() < len {
            return Err("truncated name".into());
        }
        let name = std::str::from_utf8(&bytes[..len])
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        bytes = &bytes[len..];
        let rows = read_u32(&mut bytes)? as usize;
        let cols = read_u32(&mut bytes)? as usize;
        let n = rows * cols;
        if bytes.len() < n * 8 {
            return Err(format!("truncated values for {name}"));
        }
        let data = bytes[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        bytes = &bytes[n * 8..];
        out.push((name, Matrix::from_vec(rows, cols, data).expect("sized")));
    }
    Ok(out)
}

pub fn save(path: &Path, params: &[(&str, &Matrix)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(&mut f, params).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::parse(path, 0, msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian() {
        let m = Matrix::from_rows(&[[1.5, -2.0]]);
        let bytes = encode(&[("w", &m)]);
        let mut want = b"SGW1".to_vec();
        want.extend(1u32.to_le_bytes());
        want.push(b'w');
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.5f64.to_le_bytes());
        want.extend((-2.0f64).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn decode_round_trips() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::zeros(1, 3);
        let got = decode(&encode(&[("a", &a), ("b.bias", &b)])).unwrap();
        assert_eq!(got, vec![("a".to_string(), a), ("b.bias".to_string(), b)]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"XXXX").is_err());
        assert!(decode(b"SG").is_err());
        let mut bytes = encode(&[("a", &Matrix::zeros(2, 2))]);
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
    }
}
