//! Binary portable graymap (P5) files with 8-bit samples.

use std::io;
use std::path::Path;

use super::io::write_atomic;

/// Encodes `h×w` bytes as a P5 file with maxval 255.
pub fn encode(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), h * w, "pixel count must match extents");
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Decodes a P5 file into `(h, w, pixels)`. Comments after `#` in the
/// header are skipped.
pub fn decode(bytes: &[u8]) -> io::Result<(usize, usize, Vec<u8>)> {
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
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(format!("expected P5 magic, got {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad PGM number {s:?}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| bad("PGM extents overflow"))?;
    if bytes.len() < pos || bytes.len() - pos != n {
        return Err(bad(format!("PGM raster of {w}×{h} needs {n} bytes")));
    }
    Ok((h, w, bytes[pos..].to_vec()))
}

pub fn write(path: &Path, h: usize, w: usize, pixels: &[u8]) -> io::Result<()> {
    write_atomic(path, &encode(h, w, pixels))
}

pub fn read(path: &Path) -> io::Result<(usize, usize, Vec<u8>)> {
    decode(&std::fs::read(path)?)
}
