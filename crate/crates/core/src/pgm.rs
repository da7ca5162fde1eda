//! Binary greyscale PGM (P5, maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Parse(format!("pgm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1;
    let data = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated pixel data"))?;
    Ok((width, height, data.to_vec()))
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode(width, height, pixels))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_comments() {
        let px = vec![0, 1, 2, 255, 7, 9];
        let enc = encode(3, 2, &px);
        assert!(enc.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode(&enc).unwrap(), (3, 2, px.clone()));
        let mut c = b"P5 # made by hand\n3 2 255\n".to_vec();
        c.extend_from_slice(&px);
        assert_eq!(decode(&c).unwrap(), (3, 2, px));
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n4 4\n255\n\x01").is_err());
    }
}
